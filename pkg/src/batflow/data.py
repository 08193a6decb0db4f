"""Synthetic training samples: two event windows and the flow over the second."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DataConfig, ModelConfig
from .events import EventStream, SyntheticSceneSpec, synthesize_events
from .voxel import split_groups, voxelize


@dataclass
class Sample:
    groups: np.ndarray   # (2N, B/N, H0, W0) float32, past window then future window
    flow: np.ndarray     # (2, H0, W0) ground truth over the future window
    scene: SyntheticSceneSpec


def window_groups(stream: EventStream, t_prev: float, t_mid: float, t_next: float,
                  bins: int, groups: int) -> np.ndarray:
    """Voxelize [t_prev, t_mid] and [t_mid, t_next] and split each into groups."""
    out = []
    for a, b in ((t_prev, t_mid), (t_mid, t_next)):
        out += [g.data for g in split_groups(voxelize(stream, a, b, bins), groups)]
    return np.stack(out).astype(np.float32)


def random_scene(rng: np.random.Generator, data: DataConfig) -> SyntheticSceneSpec:
    r = data.max_flow * np.sqrt(rng.uniform())
    ang = rng.uniform(0, 2 * np.pi)
    return SyntheticSceneSpec(
        texture=str(rng.choice(list(data.textures))),
        size=tuple(data.size),
        velocity=(float(r * np.cos(ang)), float(r * np.sin(ang))),
        duration_us=2 * data.interval_us,
        interval_us=data.interval_us,
        threshold=data.threshold,
        seed=int(rng.integers(2**31)),
        cell=float(rng.uniform(5.0, 10.0)),
    )


def make_sample(scene: SyntheticSceneSpec, cfg: ModelConfig) -> Sample:
    stream, flows = synthesize_events(scene)
    dt = scene.interval
    groups = window_groups(stream, 0, dt, 2 * dt, cfg.bins, cfg.groups)
    return Sample(groups, flows[1].astype(np.float32), scene)


def make_dataset(n: int, seed: int, cfg: ModelConfig, data: DataConfig) -> list[Sample]:
    rng = np.random.default_rng(seed)
    return [make_sample(random_scene(rng, data), cfg) for _ in range(n)]


def batch(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.groups for s in samples]), np.stack([s.flow for s in samples])

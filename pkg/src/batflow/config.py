"""Model and run configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

MODES = ("bidirectional", "forward-only", "backward-only")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    groups: int = 3                 # N temporal groups per window
    bins: int = 15                  # B voxel bins per window
    radius: int = 2                 # r, local grid is (2r+1)^2
    iters: int = 8                  # K refinement iterations
    mode: str = "bidirectional"
    stride: int = 8
    feature_dim: int = 128          # D
    motion_dim: int = 128           # D_m
    hidden_dim: int = 128           # D_h
    context_dim: int = 128          # D_c
    stage_dims: tuple[int, int, int] = (64, 96, 128)
    corr_dims: tuple[int, int] = (256, 192)
    flow_dims: tuple[int, int] = (128, 64)
    head_dim: int = 256
    deform_points: int = 9          # k
    deform_range: float = 8.0       # rho, feature pixels
    heads: int = 1
    attention: str = "deformable"
    corr_levels: int = 1
    alpha_init: float = 1.0
    zero_init_head: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.bins % self.groups:
            raise ConfigError(f"bins ({self.bins}) must be divisible by groups ({self.groups})")
        if self.stride not in (1, 2, 4, 8):
            raise ConfigError("stride must be 1, 2, 4 or 8")
        if self.deform_points < 1 or self.deform_range <= 0:
            raise ConfigError("deformable attention needs k >= 1 and rho > 0")
        if self.motion_dim % self.heads:
            raise ConfigError("motion_dim must be divisible by heads")
        if self.mode == "backward-only" and self.groups < 2:
            raise ConfigError("backward-only mode needs at least 2 groups")
        if self.attention not in ("deformable", "none"):
            raise ConfigError(f"unknown attention type {self.attention!r}")
        if self.corr_levels not in (1, 2):
            raise ConfigError("corr_levels must be 1 or 2")

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """64-dim features at stride 4, sized to train on 32x32 scenes in CPU-minutes."""
        base = dict(stride=4, feature_dim=64, motion_dim=32, hidden_dim=64, context_dim=64,
                    stage_dims=(32, 48, 64), corr_dims=(48, 32), flow_dims=(16, 16), head_dim=48)
        base.update(overrides)
        return cls(**base)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def bins_per_group(self) -> int:
        return self.bins // self.groups

    @property
    def corr_channels(self) -> int:
        return self.corr_levels * (2 * self.radius + 1) ** 2

    @property
    def n_forward(self) -> int:
        return 0 if self.mode == "backward-only" else self.groups

    @property
    def n_backward(self) -> int:
        return 0 if self.mode == "forward-only" else self.groups - 1

    @property
    def input_groups(self) -> int:
        """Voxel groups consumed: 2N, or only the N past groups for future-flow prediction."""
        return self.groups if self.mode == "backward-only" else 2 * self.groups

    @property
    def context_groups(self) -> int:
        return self.groups if self.mode == "backward-only" else self.groups + 1

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names}
        return cls(**kw)


@dataclass(frozen=True)
class DataConfig:
    size: tuple[int, int] = (32, 32)
    max_flow: float = 8.0
    interval_us: int = 50_000
    threshold: float = 0.2
    textures: tuple[str, ...] = ("random-bandlimited", "checkerboard")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 2
    lr: float = 2e-4
    weight_decay: float = 1e-4
    gamma: float = 0.8
    clip: float = 1.0
    pct_start: float = 0.05
    pool: int = 512
    seed: int = 0
    log_every: int = 50


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.tiny)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    paths: dict = field(default_factory=dict)


def parse_config_text(text: str) -> dict[str, dict[str, object]]:
    """Parse ``[section]`` headers followed by ``key = value`` lines.

    Values are read as int, float, bool, comma lists or bare strings;
    ``#`` starts a comment.
    """
    out: dict[str, dict[str, object]] = {"": {}}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[section][k] = _parse_value(v)
    return out


def _parse_value(v: str):
    v = v.strip().strip('"').strip("'")
    if v.lower() in ("true", "false"):
        return v.lower() == "true"
    if "," in v:
        return tuple(_parse_value(x) for x in v.split(",") if x.strip())
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def apply_section(obj, values: dict):
    names = {f.name for f in fields(obj)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys for {type(obj).__name__}: {sorted(unknown)}")
    return replace(obj, **values)

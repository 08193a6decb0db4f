"""Shared-weight feature extractor and context network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .nn import Conv2d, Module
from .tensor import Tensor


class NotDivisibleByStride(T.ShapeMismatch):
    pass


class ResidualBlock(Module):
    def __init__(self, cin, cout, stride, norm: bool, rng, dtype):
        self.conv1 = Conv2d(cin, cout, 3, stride=stride, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng=rng, dtype=dtype)
        self.down = Conv2d(cin, cout, 1, stride=stride, rng=rng, dtype=dtype, gain=1.0) \
            if stride != 1 or cin != cout else None
        self.norm = norm

    def _n(self, x):
        return T.instance_norm(x) if self.norm else x

    def __call__(self, x: Tensor) -> Tensor:
        y = T.relu(self._n(self.conv1(x)))
        y = T.relu(self._n(self.conv2(y)))
        if self.down is not None:
            x = self._n(self.down(x))
        return T.relu(x + y)


class Encoder(Module):
    """Stem conv plus three stages of two residual blocks.

    Each of the first ``log2(stride)`` stages halves the resolution; a final
    1x1 conv maps to ``out_dim`` channels.
    """

    def __init__(self, cin: int, out_dim: int, cfg: ModelConfig, norm: bool, rng):
        dt = cfg.np_dtype
        c1, c2, c3 = cfg.stage_dims
        n_down = int(np.log2(cfg.stride))
        strides = [2 if i < n_down else 1 for i in range(3)]
        self.stride = cfg.stride
        self.norm = norm
        self.stem = Conv2d(cin, c1, 7, stride=strides[0], padding=3, rng=rng, dtype=dt)
        self.blocks = [
            ResidualBlock(c1, c1, 1, norm, rng, dt), ResidualBlock(c1, c1, 1, norm, rng, dt),
            ResidualBlock(c1, c2, strides[1], norm, rng, dt), ResidualBlock(c2, c2, 1, norm, rng, dt),
            ResidualBlock(c2, c3, strides[2], norm, rng, dt), ResidualBlock(c3, c3, 1, norm, rng, dt),
        ]
        self.out = Conv2d(c3, out_dim, 1, rng=rng, dtype=dt, gain=1.0)

    def __call__(self, x: Tensor) -> Tensor:
        H, W = x.shape[-2:]
        if H % self.stride or W % self.stride:
            raise NotDivisibleByStride(f"input {H}x{W} not divisible by stride {self.stride}")
        y = self.stem(x)
        y = T.relu(T.instance_norm(y) if self.norm else y)
        for blk in self.blocks:
            y = blk(y)
        return self.out(y)


class FeatureSet:
    """Per-group feature maps indexed 1..G, recording which groups are read.

    ``features`` is (batch, G, D, h, w). ``first`` is the group index of
    entry 0, so a past-only set still uses the 1..N numbering.
    """

    def __init__(self, features: Tensor, first: int = 1, tags: dict[int, str] | None = None):
        self.features = features
        self.first = first
        self.tags = tags or {}
        self.accessed: list[int] = []

    def __len__(self):
        return self.features.shape[1]

    @property
    def indices(self) -> range:
        return range(self.first, self.first + len(self))

    def __getitem__(self, n: int) -> Tensor:
        if n not in self.indices:
            raise KeyError(f"group {n} not available (have {list(self.indices)})")
        self.accessed.append(n)
        return self.features[:, n - self.first]

    def stacked(self, ns: list[int]) -> Tensor:
        """Groups ``ns`` concatenated along the batch axis, in order."""
        return T.concat([self[n] for n in ns], axis=0)


@dataclass
class ContextState:
    context: Tensor   # (batch, D_c, h, w), rectified
    hidden: Tensor    # (batch, D_h, h, w), in (-1, 1)


class FeatureExtractor(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.encoder = Encoder(cfg.bins_per_group, cfg.feature_dim, cfg, norm=True, rng=rng)

    def __call__(self, groups: Tensor, first: int = 1) -> FeatureSet:
        """``groups`` is (batch, G, B/N, H0, W0); one shared encoder pass over all."""
        if groups.ndim == 4:
            groups = T.expand_dims(groups, 0)
        b, g, c, H, W = groups.shape
        f = self.encoder(T.reshape(groups, (b * g, c, H, W)))
        return FeatureSet(T.reshape(f, (b, g) + f.shape[1:]), first=first)


class ContextNetwork(Module):
    def __init__(self, cfg: ModelConfig, rng):
        cin = cfg.context_groups * cfg.bins_per_group
        self.context_dim = cfg.context_dim
        self.encoder = Encoder(cin, cfg.context_dim + cfg.hidden_dim, cfg, norm=False, rng=rng)

    def __call__(self, frames: Tensor) -> ContextState:
        """``frames`` is (batch, channels, H0, W0): the last reference group
        followed by the target groups, concatenated along bins."""
        if frames.ndim == 3:
            frames = T.expand_dims(frames, 0)
        y = self.encoder(frames)
        dc = self.context_dim
        return ContextState(T.relu(y[:, :dc]), T.tanh(y[:, dc:]))


def extract_features(extractor: FeatureExtractor, groups) -> list[Tensor]:
    """One (D, h, w) feature map per voxel group, shared weights."""
    arr = np.stack([np.asarray(getattr(g, "data", g)) for g in groups])
    arr = arr.astype(extractor.encoder.stem.weight.dtype)
    fs = extractor(Tensor(arr[None]))
    return [fs[n][0] for n in fs.indices]


def context_input(groups: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Select the context frames from (batch, G, B/N, H0, W0) voxel groups.

    With both windows available this is group N through 2N (covering
    t_i - dt/N to t_{i+1}); in backward-only mode only the N past groups.
    """
    b = groups.shape[0]
    N = cfg.groups
    sel = groups[:, :N] if cfg.mode == "backward-only" else groups[:, N - 1:2 * N]
    return sel.reshape(b, -1, *groups.shape[-2:])

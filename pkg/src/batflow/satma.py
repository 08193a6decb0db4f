"""Motion encoding and spatially adaptive temporal motion aggregation."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .correlation import pixel_grid
from .nn import Conv2d, Module
from .tensor import Parameter, Tensor


class ListLengthMismatch(ValueError):
    pass


class MotionEncoder(Module):
    """Correlation and flow branches, merged, with the flow appended."""

    def __init__(self, cfg: ModelConfig, rng):
        dt = cfg.np_dtype
        c1, c2 = cfg.corr_dims
        f1, f2 = cfg.flow_dims
        self.convc1 = Conv2d(cfg.corr_channels, c1, 1, rng=rng, dtype=dt)
        self.convc2 = Conv2d(c1, c2, 3, rng=rng, dtype=dt)
        self.convf1 = Conv2d(2, f1, 7, rng=rng, dtype=dt)
        self.convf2 = Conv2d(f1, f2, 3, rng=rng, dtype=dt)
        self.conv = Conv2d(c2 + f2, cfg.motion_dim - 2, 3, rng=rng, dtype=dt)
        self.corr_channels = cfg.corr_channels

    def __call__(self, corr: Tensor, flow: Tensor) -> Tensor:
        if corr.shape[1] != self.corr_channels or flow.shape[1] != 2 or corr.shape[2:] != flow.shape[2:]:
            raise T.ShapeMismatch(f"motion_encode: corr {corr.shape}, flow {flow.shape}")
        c = T.relu(self.convc2(T.relu(self.convc1(corr))))
        f = T.relu(self.convf2(T.relu(self.convf1(flow))))
        m = T.relu(self.conv(T.concat([c, f], axis=1)))
        return T.concat([m, flow], axis=1)


class SpatialAttention(Module):
    def __init__(self, dim: int, rng, dtype):
        self.conv = Conv2d(2 * dim, 1, 3, rng=rng, dtype=dtype, gain=1.0)

    def __call__(self, m_target: Tensor, m_adj: Tensor) -> Tensor:
        if m_target.shape != m_adj.shape:
            raise T.ShapeMismatch(f"spatial_attention: {m_target.shape} vs {m_adj.shape}")
        return T.sigmoid(self.conv(T.concat([m_target, m_adj], axis=1)))


class DeformableAttention(Module):
    """Sparse attention from each query pixel of ``m_adj`` into ``m_target``.

    Queries come from a 1x1 projection of the adjacent feature. An offset
    network (depthwise 3x3, ReLU, 1x1, tanh scaled by ``rho``) proposes ``k``
    sampling points around the query pixel; keys and values are bilinear
    samples of the projected target feature there.
    """

    def __init__(self, dim: int, k: int, rho: float, heads: int, rng, dtype):
        if k < 1 or rho <= 0 or dim % heads:
            raise ValueError("bad deformable attention config")
        self.k, self.rho, self.heads, self.dim = k, float(rho), heads, dim
        self.q_proj = Conv2d(dim, dim, 1, rng=rng, dtype=dtype, gain=1.0)
        self.k_proj = Conv2d(dim, dim, 1, rng=rng, dtype=dtype, gain=1.0)
        self.v_proj = Conv2d(dim, dim, 1, rng=rng, dtype=dtype, gain=1.0)
        self.dw_weight = Parameter((rng.normal(0, 1 / 3, size=(dim, 3, 3))).astype(dtype))
        self.dw_bias = Parameter(np.zeros(dim, dtype))
        self.offset = Conv2d(dim, 2 * k * heads, 1, rng=rng, dtype=dtype, gain=0.1)
        self.offset.bias.data[...] = self._initial_bias().astype(dtype)

    def _initial_bias(self) -> np.ndarray:
        # start from a unit-spaced grid around the query
        side = int(np.ceil(np.sqrt(self.k)))
        d = np.arange(side) - (side - 1) / 2
        gy, gx = np.meshgrid(d, d, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], 1)[:self.k]
        b = np.arctanh(np.clip(pts / self.rho, -0.99, 0.99))        # (k, 2)
        return np.tile(b.reshape(1, self.k, 2), (self.heads, 1, 1)).reshape(-1)

    def offsets(self, q: Tensor) -> Tensor:
        """(b, heads*k, 2, h, w) sampling offsets in feature pixels."""
        b, _, h, w = q.shape
        y = T.relu(T.depthwise_conv2d(q, self.dw_weight, self.dw_bias, padding=1))
        o = T.mul(T.tanh(self.offset(y)), self.rho)
        return T.reshape(o, (b, self.heads * self.k, 2, h, w))

    def __call__(self, m_adj: Tensor, m_target: Tensor, offsets: Tensor | None = None,
                 return_weights: bool = False):
        if m_adj.shape != m_target.shape:
            raise T.ShapeMismatch(f"deformable_aggregate: {m_adj.shape} vs {m_target.shape}")
        b, D, h, w = m_adj.shape
        H, k = self.heads, self.k
        dh = D // H
        q = self.q_proj(m_adj)
        off = self.offsets(q) if offsets is None else offsets               # (b, H*k, 2, h, w)
        off = T.transpose(T.reshape(off, (b, H, k, 2, h, w)), (0, 1, 3, 2, 4, 5))  # (b, H, 2, k, h, w)
        base = np.broadcast_to(pixel_grid(h, w, m_adj.dtype)[None, None, :, None], (b, H, 2, k, h, w))
        coords = T.reshape(T.add(off, Tensor(np.ascontiguousarray(base))), (b * H, 2, k, h, w))
        kk = T.reshape(self.k_proj(m_target), (b * H, dh, h, w))
        vv = T.reshape(self.v_proj(m_target), (b * H, dh, h, w))
        ks = T.bilinear_sample(kk, coords)                                  # (bH, dh, k, h, w)
        vs = T.bilinear_sample(vv, coords)
        qq = T.broadcast_to(T.reshape(q, (b * H, dh, 1, h, w)), (b * H, dh, k, h, w))
        logits = T.mul(T.tsum(T.mul(qq, ks), axis=1), 1.0 / np.sqrt(dh))  # (bH, k, h, w)
        attn = T.softmax(logits, axis=1)
        wts = T.broadcast_to(T.reshape(attn, (b * H, 1, k, h, w)), (b * H, dh, k, h, w))
        out = T.reshape(T.tsum(T.mul(wts, vs), axis=2), (b, D, h, w))
        return (out, attn) if return_weights else out


def fuse(a_spa: Tensor, m_agg: Tensor, m_adj: Tensor) -> Tensor:
    """``a_spa * m_agg + m_adj`` with the single-channel gate broadcast over channels."""
    if m_agg.shape != m_adj.shape or a_spa.shape[1] != 1 or a_spa.shape[2:] != m_adj.shape[2:] \
            or a_spa.shape[0] != m_adj.shape[0]:
        raise T.ShapeMismatch(f"fuse: gate {a_spa.shape}, agg {m_agg.shape}, adj {m_adj.shape}")
    return T.add(T.mul(T.broadcast_to(a_spa, m_agg.shape), m_agg), m_adj)


class SATMA(Module):
    """Gate plus deformable aggregation, shared over groups and iterations."""

    def __init__(self, cfg: ModelConfig, rng):
        dt = cfg.np_dtype
        self.spatial = SpatialAttention(cfg.motion_dim, rng, dt)
        self.attention = DeformableAttention(cfg.motion_dim, cfg.deform_points, cfg.deform_range,
                                             cfg.heads, rng, dt) if cfg.attention == "deformable" else None

    def __call__(self, m_target: Tensor, m_adj: Tensor) -> Tensor:
        a = self.spatial(m_target, m_adj)
        if self.attention is None:
            return fuse(a, m_target, m_adj)
        return fuse(a, self.attention(m_adj, m_target), m_adj)


def aggregation_target(mode: str) -> tuple[str, int]:
    """(direction, j) of the motion feature others aggregate from."""
    return ("bwd", 1) if mode == "backward-only" else ("fwd", -1)


def aggregate_all(satma: SATMA, fwd: list[Tensor], bwd: list[Tensor], mode: str, n_groups: int) -> Tensor:
    """Fuse every adjacent motion feature with the target and concatenate.

    Order is forward j = 1..N then backward j = 1..N-1; the target itself is
    included unfused at its own position.
    """
    N = n_groups
    want_f = 0 if mode == "backward-only" else N
    want_b = 0 if mode == "forward-only" else N - 1
    if len(fwd) != want_f or len(bwd) != want_b:
        raise ListLengthMismatch(f"{mode} with N={N} needs {want_f} fwd / {want_b} bwd, "
                                 f"got {len(fwd)} / {len(bwd)}")
    feats = list(fwd) + list(bwd)
    t_idx = 0 if mode == "backward-only" else N - 1
    target = feats[t_idx]
    partners = [i for i in range(len(feats)) if i != t_idx]
    if partners:
        b = target.shape[0]
        P = len(partners)
        fused = satma(T.concat([target] * P, axis=0), T.concat([feats[i] for i in partners], axis=0))
        for n, i in enumerate(partners):
            feats[i] = fused[n * b:(n + 1) * b]
    return T.concat(feats, axis=1)

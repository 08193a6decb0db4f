"""Bidirectional temporal correlation with a learnable lookup spacing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import FeatureSet
from .config import MODES
from .nn import Module
from .tensor import Parameter, Tensor

ALPHA_MIN = 1e-3


class BadMode(ValueError):
    pass


class RadiusScale(Module):
    """Learnable scale on the lookup grid spacing, clamped below at 1e-3."""

    def __init__(self, init: float = 1.0, dtype=np.float32):
        self.alpha = Parameter(np.array([init], dtype=dtype))

    def __call__(self) -> Tensor:
        return T.clamp_min(self.alpha, ALPHA_MIN)


@dataclass
class CorrSet:
    forward: list[Tensor] = field(default_factory=list)
    backward: list[Tensor] = field(default_factory=list)
    mode: str = "bidirectional"
    offsets: dict = field(default_factory=dict)  # (direction, j) -> signed offset used


def grid_offsets(r: int) -> np.ndarray:
    """(2, (2r+1)^2) integer (dx, dy) offsets, rows (dy) outer, columns (dx) inner."""
    d = np.arange(-r, r + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    return np.stack([dx.ravel(), dy.ravel()]).astype(np.float64)


def pixel_grid(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """(2, h, w) array of (x, y) pixel coordinates."""
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([xs, ys]).astype(dtype)


def _as_alpha(alpha, dtype) -> Tensor:
    if isinstance(alpha, Tensor):
        return alpha
    return Tensor(np.array([float(alpha)], dtype=dtype))


def _flow_array(flow, shape, dtype) -> np.ndarray:
    if flow is None:
        return np.zeros(shape, dtype)
    return np.asarray(getattr(flow, "data", flow), dtype=dtype)


def correlate(f_ref: Tensor, f_adj: Tensor, centers: np.ndarray, alpha, r: int) -> Tensor:
    """Local-grid correlation of ``f_ref`` against ``f_adj`` sampled around ``centers``.

    ``f_ref``/``f_adj`` are (b, D, h, w); ``centers`` is a constant (b, 2, h, w)
    array of lookup positions in ``f_adj``. Output is (b, (2r+1)^2, h, w).
    """
    if f_ref.shape != f_adj.shape:
        raise T.ShapeMismatch(f"feature shapes differ: {f_ref.shape} vs {f_adj.shape}")
    b, D, h, w = f_ref.shape
    K = (2 * r + 1) ** 2
    alpha = _as_alpha(alpha, f_ref.dtype)
    delta = Tensor(grid_offsets(r).reshape(1, 2, K, 1, 1).astype(f_ref.dtype))
    spread = T.broadcast_to(T.mul(T.reshape(alpha, (1, 1, 1, 1, 1)), delta), (b, 2, K, h, w))
    coords = T.add(spread, Tensor(np.broadcast_to(centers[:, :, None], (b, 2, K, h, w)).astype(f_ref.dtype)))
    samples = T.bilinear_sample(f_adj, coords)                       # (b, D, K, h, w)
    ref = T.broadcast_to(T.reshape(f_ref, (b, D, 1, h, w)), (b, D, K, h, w))
    return T.mul(T.tsum(T.mul(ref, samples), axis=1), 1.0 / np.sqrt(D))


def corr_group(f_ref: Tensor, f_adj: Tensor, flow, j: int, alpha, r: int, n_groups: int) -> Tensor:
    """Correlation map between the reference features and group offset ``j``.

    The lookup centre for pixel p is ``p + j * flow / n_groups``; ``flow`` is
    at feature resolution, in feature pixels, and treated as a constant.
    """
    if f_ref.ndim == 3:
        out = corr_group(T.expand_dims(f_ref, 0), T.expand_dims(f_adj, 0),
                         None if flow is None else _flow_array(flow, (2,) + f_ref.shape[1:], f_ref.dtype)[None],
                         j, alpha, r, n_groups)
        return out[0]
    b, D, h, w = f_ref.shape
    fl = _flow_array(flow, (b, 2, h, w), np.float64)
    df = fl / n_groups
    centers = pixel_grid(h, w)[None] + j * df
    return correlate(f_ref, f_adj, centers, alpha, r)


def _pool2(f: Tensor) -> Tensor:
    b, c, h, w = f.shape
    return T.mean(T.reshape(f, (b, c, h // 2, 2, w // 2, 2)), axis=(3, 5))


def build_btc(features: FeatureSet, flow, alpha, r: int, mode: str, n_groups: int,
              levels: int = 1) -> CorrSet:
    """All correlation maps for one refinement step.

    Forward maps pair F_N with F_{N+j}, j = 1..N; backward maps pair F_N with
    F_{N-j}, j = 1..N-1. Every pair is evaluated in one batched lookup.
    """
    if mode not in MODES:
        raise BadMode(f"mode must be one of {MODES}, got {mode!r}")
    N = n_groups
    pairs: list[tuple[str, int, int]] = []    # (direction, j, source group)
    if mode != "backward-only":
        pairs += [("fwd", j, N + j) for j in range(1, N + 1)]
    if mode != "forward-only":
        pairs += [("bwd", j, N - j) for j in range(1, N)]
    out = CorrSet(mode=mode)
    if not pairs:
        return out
    ref = features[N]
    b, D, h, w = ref.shape
    P = len(pairs)
    adj = features.stacked([src for _, _, src in pairs])
    refs = T.concat([ref] * P, axis=0)
    fl = _flow_array(flow, (b, 2, h, w), np.float64)
    signed = np.array([j if d == "fwd" else -j for d, j, _ in pairs], dtype=np.float64)
    centers = (pixel_grid(h, w)[None, None] + signed[:, None, None, None, None] * (fl / N)[None])
    centers = centers.reshape(P * b, 2, h, w)
    maps = [correlate(refs, adj, centers, alpha, r)]
    if levels == 2:
        if h % 2 or w % 2:
            raise T.ShapeMismatch("two-level correlation needs even feature dims")
        pooled = correlate(refs, _pool2(adj), centers / 2.0, alpha, r)
        maps.append(pooled)
    corr = T.concat(maps, axis=1) if len(maps) > 1 else maps[0]
    for i, (d, j, _) in enumerate(pairs):
        piece = corr[i * b:(i + 1) * b]
        (out.forward if d == "fwd" else out.backward).append(piece)
        out.offsets[(d, j)] = float(signed[i])
    return out

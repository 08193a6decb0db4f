"""Voxel-grid event representation and temporal grouping."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .events import EventStream, InvalidInterval

VXG1_MAGIC = b"VXG1"


class VoxelError(ValueError):
    pass


class BinCountTooSmall(VoxelError):
    pass


class NotDivisible(VoxelError):
    pass


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    data: np.ndarray  # (bins, H, W), float64
    t0: float
    t1: float

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self.t0 == other.t0 and self.t1 == other.t1 and np.array_equal(self.data, other.data)


def splat(t, x, y, p, t0: float, t1: float, bins: int, height: int, width: int) -> np.ndarray:
    """Accumulate events with the triangular kernel in time and space.

    ``x``/``y`` may be fractional; integer coordinates land on one pixel.
    Events are assumed to already lie inside [t0, t1].
    """
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    ts = (bins - 1) * (t - t0) / (t1 - t0)
    b0 = np.floor(ts)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fb, fx, fy = ts - b0, x - x0, y - y0
    out = np.zeros(bins * height * width)
    for db, wb in ((0, 1.0 - fb), (1, fb)):
        for dy_, wy in ((0, 1.0 - fy), (1, fy)):
            for dx_, wx in ((0, 1.0 - fx), (1, fx)):
                w = p * wb * wy * wx
                bb, yy, xx = b0 + db, y0 + dy_, x0 + dx_
                ok = (w != 0) & (bb >= 0) & (bb < bins) & (yy >= 0) & (yy < height) & (xx >= 0) & (xx < width)
                if not ok.any():
                    continue
                idx = ((bb[ok] * height + yy[ok]) * width + xx[ok]).astype(np.int64)
                out += np.bincount(idx, weights=w[ok], minlength=out.size)
    return out.reshape(bins, height, width)


def voxelize(stream: EventStream, t0: float, t1: float, bins: int) -> VoxelGrid:
    """Voxel grid of the events with ``t0 <= t <= t1``.

    The event at normalized time ``(bins-1)(t-t0)/(t1-t0)`` is split between
    its two neighbouring bins with weights ``max(0, 1-|b-t*|)``.
    """
    if not t1 > t0:
        raise InvalidInterval(f"need t1 > t0, got [{t0}, {t1}]")
    if bins < 2:
        raise BinCountTooSmall(f"need at least 2 bins, got {bins}")
    lo = int(np.searchsorted(stream.t, np.ceil(t0), side="left"))
    hi = int(np.searchsorted(stream.t, np.floor(t1), side="right"))
    sl = slice(lo, max(lo, hi))
    data = splat(stream.t[sl], stream.x[sl], stream.y[sl], stream.p[sl],
                 t0, t1, bins, stream.height, stream.width)
    return VoxelGrid(data, float(t0), float(t1))


def _bin_time(v: VoxelGrid, b: int) -> float:
    return v.t0 + (v.t1 - v.t0) * b / (v.bins - 1)


def split_groups(v: VoxelGrid, n: int) -> list[VoxelGrid]:
    """Split the bin axis into ``n`` equal consecutive groups."""
    if n < 1 or v.bins % n:
        raise NotDivisible(f"{v.bins} bins cannot be split into {n} equal groups")
    per = v.bins // n
    return [VoxelGrid(v.data[g * per:(g + 1) * per].copy(),
                      _bin_time(v, g * per), _bin_time(v, (g + 1) * per - 1)) for g in range(n)]


def join_groups(groups: list[VoxelGrid]) -> VoxelGrid:
    return VoxelGrid(np.concatenate([g.data for g in groups]), groups[0].t0, groups[-1].t1)


def encode_vxg1(v: VoxelGrid) -> bytes:
    b, h, w = v.data.shape
    return VXG1_MAGIC + struct.pack("<HHH", b, h, w) + np.ascontiguousarray(v.data, "<f4").tobytes()


def decode_vxg1(data: bytes, t0: float = 0.0, t1: float = 1.0) -> VoxelGrid:
    if data[:4] != VXG1_MAGIC or len(data) < 10:
        raise VoxelError("missing VXG1 header")
    b, h, w = struct.unpack_from("<HHH", data, 4)
    if len(data) != 10 + 4 * b * h * w:
        raise VoxelError(f"VXG1 payload size mismatch for {b}x{h}x{w}")
    arr = np.frombuffer(data, "<f4", offset=10).reshape(b, h, w).astype(np.float32)
    return VoxelGrid(arr, t0, t1)

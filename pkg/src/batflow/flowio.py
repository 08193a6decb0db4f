"""Middlebury .flo files and colour-wheel flow rendering to binary PPM."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FLO_MAGIC = b"PIEH"  # 202021.25 as a little-endian float32


class FlowFormatError(ValueError):
    pass


def encode_flo(flow: np.ndarray) -> bytes:
    """``flow`` is (2, H, W); stored as interleaved (u, v) float32 rows."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise FlowFormatError(f"flow must be (2, H, W), got {flow.shape}")
    _, h, w = flow.shape
    body = np.ascontiguousarray(flow.transpose(1, 2, 0), dtype="<f4").tobytes()
    return FLO_MAGIC + struct.pack("<ii", w, h) + body


def decode_flo(data: bytes) -> np.ndarray:
    if data[:4] != FLO_MAGIC:
        raise FlowFormatError("bad .flo magic")
    w, h = struct.unpack_from("<ii", data, 4)
    if w <= 0 or h <= 0 or len(data) != 12 + 8 * w * h:
        raise FlowFormatError(f".flo size mismatch for {w}x{h}")
    uv = np.frombuffer(data, "<f4", offset=12).reshape(h, w, 2)
    return np.ascontiguousarray(uv.transpose(2, 0, 1)).astype(np.float32)


def write_flo(path, flow: np.ndarray):
    Path(path).write_bytes(encode_flo(flow))


def read_flo(path) -> np.ndarray:
    return decode_flo(Path(path).read_bytes())


def make_colorwheel() -> np.ndarray:
    """The standard 55-entry Middlebury colour wheel (RY, YG, GC, CB, BM, MR)."""
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))
    col = 0
    wheel[0:RY, 0] = 255
    wheel[0:RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY
    wheel[col:col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col:col + YG, 1] = 255
    col += YG
    wheel[col:col + GC, 1] = 255
    wheel[col:col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC
    wheel[col:col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col:col + CB, 2] = 255
    col += CB
    wheel[col:col + BM, 2] = 255
    wheel[col:col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM
    wheel[col:col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col:col + MR, 0] = 255
    return wheel


def flow_to_rgb(flow: np.ndarray, max_flow: float | None = None) -> np.ndarray:
    """(H, W, 3) uint8 image; magnitude normalized by ``max_flow`` or the field max."""
    u, v = np.asarray(flow, np.float64)
    rad = np.hypot(u, v)
    norm = max_flow if max_flow else float(rad.max())
    norm = norm if norm > 0 else 1.0
    u, v, rad = u / norm, v / norm, rad / norm
    wheel = make_colorwheel()
    n = wheel.shape[0]
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1) / 2 * (n - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % n
    f = fk - k0
    img = np.zeros(u.shape + (3,), np.uint8)
    inside = rad <= 1
    for i in range(3):
        c = (1 - f) * wheel[k0, i] / 255.0 + f * wheel[k1, i] / 255.0
        c = np.where(inside, 1 - rad * (1 - c), c * 0.75)
        img[..., i] = np.floor(255 * c)
    return img


def encode_ppm(img: np.ndarray) -> bytes:
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, np.uint8).tobytes()


def write_flow_ppm(path, flow: np.ndarray, max_flow: float | None = None):
    Path(path).write_bytes(encode_ppm(flow_to_rgb(flow, max_flow)))

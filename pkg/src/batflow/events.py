"""Event streams: parsing, serialization, slicing and threshold-crossing synthesis."""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

EVT1_MAGIC = b"EVT1"
EVT1_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
assert EVT1_RECORD.itemsize == 13


class EventError(ValueError):
    pass


class MalformedRecord(EventError):
    pass


class OutOfBounds(EventError):
    pass


class NonMonotonicTime(EventError):
    pass


class InvalidInterval(EventError):
    pass


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class EventStream:
    """Immutable, time-sorted events on a ``width`` x ``height`` sensor.

    Columns are stored as numpy arrays (``t`` int64 microseconds, ``x``/``y``
    int64, ``p`` int8). Construction validates bounds, polarity and order.
    """

    __slots__ = ("width", "height", "t", "x", "y", "p")

    def __init__(self, width: int, height: int, t=(), x=(), y=(), p=()):
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        p = np.asarray(p, dtype=np.int8).reshape(-1)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise MalformedRecord("event columns differ in length")
        if width <= 0 or height <= 0:
            raise EventError(f"invalid geometry {width}x{height}")
        if len(t):
            if (t < 0).any():
                raise MalformedRecord("negative timestamp")
            bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise OutOfBounds(f"event {i} at ({x[i]}, {y[i]}) outside {width}x{height}")
            if not np.isin(p, (-1, 1)).all():
                raise MalformedRecord("polarity must be +1 or -1")
            if (np.diff(t) < 0).any():
                raise NonMonotonicTime("events are not sorted by time")
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        for k, v in (("t", t), ("x", x), ("y", y), ("p", p)):
            object.__setattr__(self, k, _frozen(v))

    def __setattr__(self, key, value):
        raise AttributeError("EventStream is immutable")

    @classmethod
    def from_unsorted(cls, width, height, t, x, y, p) -> "EventStream":
        """Sort by time, breaking ties by (y, x); the order is stable otherwise."""
        t, x, y, p = (np.asarray(a) for a in (t, x, y, p))
        order = np.lexsort((x, y, t))
        return cls(width, height, t[order], x[order], y[order], p[order])

    @property
    def geometry(self) -> tuple[int, int]:
        return self.width, self.height

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __getitem__(self, i) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.geometry == other.geometry and len(self) == len(other)
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "txyp"))

    def __hash__(self):
        return hash((self.geometry, len(self), self.t.tobytes()[:64]))

    def __repr__(self):
        return f"EventStream({self.width}x{self.height}, n={len(self)})"

    def concat(self, other: "EventStream") -> "EventStream":
        if other.geometry != self.geometry:
            raise EventError("geometry mismatch")
        return EventStream(self.width, self.height, *(np.concatenate([getattr(self, k), getattr(other, k)])
                                                      for k in "txyp"))


# ---------------------------------------------------------------------------
# formats
# ---------------------------------------------------------------------------

def _csv_header(width: int, height: int) -> str:
    return f"# width={width} height={height}\n"


def _parse_csv(data: bytes, geometry, strict: bool) -> EventStream:
    text = data.decode("utf-8")
    cols: list[list[int]] = [[], [], [], []]
    width = height = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                k, _, v = tok.partition("=")
                if k == "width" and v.isdigit():
                    width = int(v)
                elif k == "height" and v.isdigit():
                    height = int(v)
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise MalformedRecord(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            vals = [int(s) for s in parts]
        except ValueError:
            raise MalformedRecord(f"line {lineno}: non-integer field in {line!r}") from None
        if vals[3] not in (1, -1):
            raise MalformedRecord(f"line {lineno}: polarity {vals[3]} not in {{1,-1}}")
        for c, v in zip(cols, vals):
            c.append(v)
    if geometry is None:
        if width is None or height is None:
            raise MalformedRecord("csv without header needs an explicit geometry")
        geometry = (width, height)
    return _finish(geometry, *cols, strict=strict)


def _finish(geometry, t, x, y, p, strict: bool) -> EventStream:
    w, h = geometry
    t = np.asarray(t, dtype=np.int64)
    if len(t) and (np.diff(t) < 0).any():
        if strict:
            raise NonMonotonicTime("timestamps decrease")
        order = np.argsort(t, kind="stable")
        t, x, y, p = t[order], np.asarray(x)[order], np.asarray(y)[order], np.asarray(p)[order]
    return EventStream(w, h, t, x, y, p)


def _parse_evt1(data: bytes, geometry, strict: bool) -> EventStream:
    if len(data) < 16 or data[:4] != EVT1_MAGIC:
        raise MalformedRecord("missing EVT1 header")
    w, h, n = struct.unpack_from("<HHQ", data, 4)
    body = data[16:]
    if len(body) != n * EVT1_RECORD.itemsize:
        raise MalformedRecord(f"EVT1 declares {n} events but payload holds {len(body)} bytes")
    if geometry is not None and tuple(geometry) != (w, h):
        raise MalformedRecord(f"EVT1 geometry {w}x{h} differs from expected {geometry}")
    rec = np.frombuffer(body, dtype=EVT1_RECORD, count=n)
    if n and not np.isin(rec["p"], (-1, 1)).all():
        raise MalformedRecord("polarity must be +1 or -1")
    if n and rec["t"].max() > np.iinfo(np.int64).max:
        raise MalformedRecord("timestamp overflow")
    return _finish((w, h), rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"], strict)


def parse_events(data: bytes, fmt: str = "csv", geometry: tuple[int, int] | None = None,
                 strict: bool = False) -> EventStream:
    """Decode ``csv`` or ``evt1`` bytes into a sorted, bounds-checked stream.

    ``geometry`` is (width, height). CSV files written by :func:`write_events`
    carry it in a ``# width=.. height=..`` header. Out-of-order input is
    stably re-sorted unless ``strict`` is set.
    """
    if fmt == "csv":
        return _parse_csv(data, geometry, strict)
    if fmt == "evt1":
        return _parse_evt1(data, geometry, strict)
    raise ValueError(f"unknown event format {fmt!r}")


def write_events(stream: EventStream, fmt: str = "csv") -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(_csv_header(stream.width, stream.height))
        for t, x, y, p in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()):
            buf.write(f"{t},{x},{y},{p}\n")
        return buf.getvalue().encode("utf-8")
    if fmt == "evt1":
        if stream.width > 0xFFFF or stream.height > 0xFFFF:
            raise EventError("EVT1 geometry limited to 65535")
        rec = np.empty(len(stream), dtype=EVT1_RECORD)
        rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
        return EVT1_MAGIC + struct.pack("<HHQ", stream.width, stream.height, len(stream)) + rec.tobytes()
    raise ValueError(f"unknown event format {fmt!r}")


def format_from_path(path) -> str:
    return "csv" if str(path).lower().endswith((".csv", ".txt")) else "evt1"


def read_events(path, geometry=None, strict=False) -> EventStream:
    with open(path, "rb") as f:
        return parse_events(f.read(), format_from_path(path), geometry, strict)


def save_events(stream: EventStream, path):
    with open(path, "wb") as f:
        f.write(write_events(stream, format_from_path(path)))


def slice_events(stream: EventStream, t0: float, t1: float) -> EventStream:
    """Events with ``t0 <= t <= t1`` (both ends closed)."""
    if t0 > t1:
        raise InvalidInterval(f"t0={t0} > t1={t1}")
    lo = 0 if t0 == -math.inf else int(np.searchsorted(stream.t, math.ceil(t0), side="left"))
    hi = len(stream) if t1 == math.inf else int(np.searchsorted(stream.t, math.floor(t1), side="right"))
    hi = max(lo, hi)
    return EventStream(stream.width, stream.height, stream.t[lo:hi], stream.x[lo:hi],
                       stream.y[lo:hi], stream.p[lo:hi])


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

TEXTURES = ("checkerboard", "random-bandlimited", "bar", "constant")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """A textured plane translating with constant or linearly changing velocity.

    ``velocity`` and ``acceleration`` are in pixels per interval (and per
    interval squared); an interval is ``interval_us`` long, defaulting to half
    of ``duration_us`` so one scene covers a past and a future window.
    """

    texture: str = "random-bandlimited"
    size: tuple[int, int] = (32, 32)
    velocity: tuple[float, float] = (0.0, 0.0)
    acceleration: tuple[float, float] = (0.0, 0.0)
    duration_us: int = 100_000
    threshold: float = 0.2
    seed: int = 0
    interval_us: int | None = None
    steps_per_interval: int = 256
    cell: float = 8.0
    max_frequency: float = 0.1
    contrast: float = 0.6
    components: int = 24

    def __post_init__(self):
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}; choose from {TEXTURES}")
        if not self.threshold > 0:
            raise ValueError("contrast threshold must be positive")
        if not self.duration_us > 0:
            raise ValueError("duration must be positive")
        if self.interval <= 0 or self.duration_us % self.interval:
            raise ValueError("duration must be a whole number of intervals")

    @property
    def interval(self) -> int:
        return self.interval_us if self.interval_us is not None else self.duration_us // 2

    @property
    def n_intervals(self) -> int:
        return self.duration_us // self.interval

    def displacement(self, tau):
        """Texture offset after ``tau`` intervals, as (dx, dy)."""
        (vx, vy), (ax, ay) = self.velocity, self.acceleration
        return vx * tau + 0.5 * ax * tau * tau, vy * tau + 0.5 * ay * tau * tau


class Texture:
    """Log intensity of the scene plane at continuous coordinates."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, X, Y):
        return self.fn(X, Y)

    def translated(self, X, Y, dx, dy) -> np.ndarray:
        """Frames (S, H, W) of the plane shifted by each (dx[s], dy[s])."""
        return np.stack([self.fn(X - a, Y - b) for a, b in zip(dx, dy)])


class WaveTexture(Texture):
    def __init__(self, fx, fy, phase, amp):
        self.fx, self.fy, self.phase, self.amp = fx, fy, phase, amp

    def __call__(self, X, Y):
        arg = 2 * np.pi * (np.multiply.outer(X, self.fx) + np.multiply.outer(Y, self.fy)) + self.phase
        return self.amp * np.cos(arg).sum(-1)

    def translated(self, X, Y, dx, dy):
        # a uniform shift only rotates each wave's phase
        base = np.exp(1j * (2 * np.pi * (np.multiply.outer(X, self.fx) + np.multiply.outer(Y, self.fy)) + self.phase))
        shift = np.exp(-2j * np.pi * (np.multiply.outer(self.fx, dx) + np.multiply.outer(self.fy, dy)))
        out = (base.reshape(-1, len(self.fx)) @ shift).real * self.amp
        return np.ascontiguousarray(out.T).reshape((len(dx),) + np.shape(X))


def make_texture(scene: SyntheticSceneSpec) -> Texture:
    """The scene's texture as a seeded log-intensity field."""
    rng = np.random.default_rng(scene.seed)
    W, H = scene.size
    if scene.texture == "constant":
        return Texture(lambda X, Y: np.full(np.broadcast(X, Y).shape, math.log(0.5)))
    if scene.texture == "checkerboard":
        ox, oy = rng.uniform(0, 2 * scene.cell, size=2)
        c = scene.cell

        def checker(X, Y):
            s = np.sin(np.pi * (X + ox) / c) * np.sin(np.pi * (Y + oy) / c)
            return np.log(0.5 + 0.4 * np.tanh(4.0 * s))
        return Texture(checker)
    if scene.texture == "bar":
        cx = W / 2 + rng.uniform(-1, 1)
        half = scene.cell / 2

        def bar(X, Y):
            inside = 0.5 * (np.tanh(2.0 * (X - cx + half)) - np.tanh(2.0 * (X - cx - half)))
            return np.log(0.1 + 0.8 * inside + 0 * Y)
        return Texture(bar)
    # random-bandlimited: plane waves with frequencies inside a disk
    k = scene.components
    r = scene.max_frequency * np.sqrt(rng.uniform(0.05, 1.0, k))
    ang = rng.uniform(0, 2 * np.pi, k)
    phase = rng.uniform(0, 2 * np.pi, k)
    return WaveTexture(r * np.cos(ang), r * np.sin(ang), phase, scene.contrast * np.sqrt(2.0 / k))


def threshold_events(log_frames: np.ndarray, times: np.ndarray, threshold: float):
    """Ideal event generator over sampled log-intensity frames.

    ``log_frames`` is (S, H, W) sampled at ``times`` (S,). Log intensity is
    linear between samples; an event fires each time it moves a further
    ``threshold`` away from the level at the pixel's previous event.
    Returns float timestamps and integer x, y, p arrays (unsorted).
    """
    log_frames = np.asarray(log_frames, dtype=np.float64)
    ref = log_frames[0].copy()
    prev = log_frames[0]
    ts, xs, ys, ps = [], [], [], []
    for k in range(1, len(times)):
        cur = log_frames[k]
        t_prev, dt = float(times[k - 1]), float(times[k] - times[k - 1])
        delta = cur - ref
        n = np.floor(np.abs(delta) / threshold).astype(np.int64)
        hit = np.nonzero(n)
        if hit[0].size:
            sign = np.sign(delta[hit])
            slope = cur[hit] - prev[hit]
            for m in range(1, int(n[hit].max()) + 1):
                sel = n[hit] >= m
                level = ref[hit][sel] + sign[sel] * m * threshold
                frac = (level - prev[hit][sel]) / slope[sel]
                ts.append(t_prev + np.clip(frac, 0.0, 1.0) * dt)
                ys.append(hit[0][sel])
                xs.append(hit[1][sel])
                ps.append(sign[sel].astype(np.int8))
            ref[hit] += sign * n[hit] * threshold
        prev = cur
    if not ts:
        return (np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int8))
    return np.concatenate(ts), np.concatenate(xs), np.concatenate(ys), np.concatenate(ps)


def synthesize_events(scene: SyntheticSceneSpec) -> tuple[EventStream, list[np.ndarray]]:
    """Simulate the scene; return the events and one (2, H, W) flow per interval.

    Flow k is the texture displacement between the start and end of
    interval k, identical at every pixel.
    """
    W, H = scene.size
    tex = make_texture(scene)
    steps = scene.steps_per_interval * scene.n_intervals
    taus = np.arange(steps + 1) / scene.steps_per_interval
    times = taus * scene.interval
    Y, X = np.mgrid[0:H, 0:W].astype(np.float64)
    dx, dy = scene.displacement(taus)
    frames = tex.translated(X, Y, np.broadcast_to(dx, taus.shape), np.broadcast_to(dy, taus.shape))
    t, x, y, p = threshold_events(frames, times, scene.threshold)
    t = np.clip(np.floor(t), 0, scene.duration_us).astype(np.int64)
    stream = EventStream.from_unsorted(W, H, t, x, y, p)
    flows = []
    for k in range(scene.n_intervals):
        a, b = scene.displacement(k), scene.displacement(k + 1)
        f = np.empty((2, H, W))
        f[0], f[1] = b[0] - a[0], b[1] - a[1]
        flows.append(f)
    return stream, flows

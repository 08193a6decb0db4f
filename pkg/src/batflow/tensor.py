"""Dense numpy tensors with tape-based reverse-mode differentiation.

Ops record onto the innermost active :class:`GradientTape` whenever one of
their inputs requires a gradient. Outside a tape every op is a plain numpy
computation, which is what inference uses.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

__all__ = [
    "Tensor", "Parameter", "GradientTape", "backward", "TensorError",
    "ShapeMismatch", "NotScalar", "NoTape", "TapeConsumed", "NonFiniteError",
]

CHECK_FINITE = True


class TensorError(Exception):
    pass


class ShapeMismatch(TensorError, ValueError):
    pass


class NotScalar(TensorError, ValueError):
    pass


class NoTape(TensorError, RuntimeError):
    pass


class TapeConsumed(TensorError, RuntimeError):
    pass


class NonFiniteError(TensorError, FloatingPointError):
    pass


_TAPES: list["GradientTape"] = []


class GradientTape:
    """Records the op graph built inside a ``with`` block.

    Nodes are stored in creation order, which is a topological order of the
    graph; :func:`backward` walks it in reverse.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def reset(self):
        for n in self.nodes:
            n._tape = None
        self.nodes = []
        self.consumed = False

    @property
    def parameters(self) -> list["Parameter"]:
        seen, out = set(), []
        for n in self.nodes:
            for p in n._parents:
                if isinstance(p, Parameter) and id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self._tape = None

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A named leaf tensor that always requires a gradient."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=None if like is None else like.dtype)


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError("non-finite value produced by " + getattr(backward_fn, "__qualname__", "op"))
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._tape = None
    if _TAPES and any(p.requires_grad for p in parents):
        tape = _TAPES[-1]
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._tape = tape
        tape.nodes.append(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def backward(loss: Tensor) -> list[Parameter]:
    """Propagate d(loss)/d(.) into ``.grad`` of every leaf that requires it.

    Returns the parameters reached. A tape can be differentiated once; call
    ``tape.reset()`` and re-run the forward pass to differentiate again.
    """
    if loss.size != 1:
        raise NotScalar(f"loss must have one element, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss._backward is None and not loss.requires_grad:
            raise NoTape("loss was not produced under an active GradientTape")
        raise NoTape("loss tape was reset")
    if tape.consumed:
        raise TapeConsumed("backward already ran on this tape; reset it first")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    reached: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p._backward is not None and p._tape is tape:
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
            else:
                pg = np.asarray(pg, dtype=p.data.dtype).reshape(p.shape)
                p.grad = pg.copy() if p.grad is None else p.grad + pg
                reached[id(p)] = p
    return [p for p in reached.values() if isinstance(p, Parameter)]


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ (use broadcast_to)")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return np.asarray(g.sum()).reshape(shape)


def _pair_tensors(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    return as_tensor(a, b), b


def add(a, b) -> Tensor:
    a, b = _pair_tensors(a, b)
    _check_same(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair_tensors(a, b)
    _check_same(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = float(b)
        return _make(a.data * np.asarray(s, a.dtype), (a,), lambda g: (g * s,))
    _check_same(a, b, "mul")
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)

    return _make(ad * bd, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def reciprocal(a: Tensor) -> Tensor:
    y = 1.0 / a.data
    return _make(y, (a,), lambda g: (-g * y * y,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (0.5 * g / y,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def tabs(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def relu(a: Tensor) -> Tensor:
    x = a.data
    mask = x > 0
    return _make(np.where(mask, x, 0).astype(x.dtype), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def clamp_min(a: Tensor, lo: float) -> Tensor:
    x = a.data
    mask = x >= lo
    return _make(np.maximum(x, lo).astype(x.dtype), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, idx) -> Tensor:
    shape, dt = a.shape, a.dtype

    def bw(g):
        out = np.zeros(shape, dt)
        if _fancy(idx):
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _make(a.data[idx], (a,), bw)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(s)) if i != axis % len(s)):
            raise ShapeMismatch(f"concat: {tensors[0].shape} vs {t.shape} on axis {axis}")
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return concat([expand_dims(t, axis) for t in tensors], axis)


def expand_dims(a: Tensor, axis: int) -> Tensor:
    return reshape(a, np.expand_dims(a.data, axis).shape)


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums over expanded axes."""
    src = a.shape
    shape = tuple(shape)
    try:
        y = np.broadcast_to(a.data, shape)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(src) if n == 1 and shape[i + lead] != 1)

    def bw(g):
        return (g.sum(axis=axes).reshape(src) if axes else g,)

    return _make(np.ascontiguousarray(y), (a,), bw)


def pad2d(a: Tensor, ph: int, pw: int) -> Tensor:
    if ph == 0 and pw == 0:
        return a
    width = [(0, 0)] * (a.ndim - 2) + [(ph, ph), (pw, pw)]
    H, W = a.shape[-2:]
    return _make(np.pad(a.data, width), (a,), lambda g: (g[..., ph:ph + H, pw:pw + W],))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(y), (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        # leading axes summed away undo batch broadcasting of a shared operand
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
            while ga.ndim > ad.ndim:
                ga = ga.sum(0)
        if b.requires_grad:
            gb = np.swapaxes(ad, -1, -2) @ g
            while gb.ndim > bd.ndim:
                gb = gb.sum(0)
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


# ---------------------------------------------------------------------------
# convolution / normalization
# ---------------------------------------------------------------------------

def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is (B, C_in, H, W) or (C_in, H, W); ``w`` is (C_out, C_in, kh, kw).
    """
    if x.ndim == 3:
        out = conv2d(expand_dims(x, 0), w, b, stride, padding)
        return reshape(out, out.shape[1:])
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ShapeMismatch("conv2d: stride must be >= 1")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if kh > Hp or kw > Wp:
        raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho, Wo = (Hp - kh) // sh + 1, (Wp - kw) // sw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    wmat = w.data.reshape(O, C * kh * kw)
    # im2col with rows (c, i, j) and columns (b, ho, wo); copying this way
    # keeps the innermost run along image rows
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(C * kh * kw, B * Ho * Wo)
    y = wmat @ cols
    if b is not None:
        y += b.data[:, None]
    y = np.ascontiguousarray(y.reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3))

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, B * Ho * Wo)
        gb = g2.sum(axis=1) if b is not None else None
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(C, kh, kw, B, Ho, Wo)
            if kh == 1 and kw == 1 and sh == 1 and sw == 1:
                gxp = gcols[:, 0, 0]
            else:
                gxp = np.zeros((C, B, Hp, Wp), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += gcols[:, i, j]
            gx = gxp[:, :, ph:ph + H, pw:pw + W].transpose(1, 0, 2, 3)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(y, parents, bw)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding=0) -> Tensor:
    """Per-channel 2-D cross-correlation; ``w`` is (C, kh, kw), stride 1."""
    if x.ndim != 4 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"depthwise_conv2d: input {x.shape} vs kernel {w.shape}")
    ph, pw = _pair(padding)
    B, C, H, W = x.shape
    _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    Hp, Wp = xp.shape[2:]
    if kh > Hp or kw > Wp:
        raise ShapeMismatch("depthwise_conv2d: kernel larger than padded input")
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    wd = w.data
    y = np.einsum("bchwij,cij->bchw", win, wd, optimize=True)
    if b is not None:
        y = y + b.data.reshape(1, C, 1, 1)

    def bw(g):
        gw = np.einsum("bchw,bchwij->cij", g, win, optimize=True)
        gxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + Ho, j:j + Wo] += g * wd[None, :, i, j, None, None]
        gx = gxp[:, :, ph:ph + H, pw:pw + W]
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    return _make(np.ascontiguousarray(y), (x, w, b) if b is not None else (x, w), bw)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes (no affine)."""
    xd = x.data
    mu = xd.mean(axis=(-2, -1), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(-2, -1), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=(-2, -1), keepdims=True)
        gym = (g * y).mean(axis=(-2, -1), keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _make(y, (x,), bw)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def bilinear_sample(source: Tensor, coords: Tensor) -> Tensor:
    """Sample ``source`` at real-valued pixel coordinates with zero padding.

    ``source`` is (B, C, H, W) or (C, H, W); ``coords`` is (B, 2, *S) or
    (2, *S) with channel 0 the column (x) and channel 1 the row (y). The
    result is (B, C, *S). Differentiable with respect to both arguments; at
    exact lattice coordinates the coordinate gradient is the right-hand one.
    """
    if source.ndim == 3:
        if coords.ndim < 2 or coords.shape[0] != 2:
            raise ShapeMismatch(f"bilinear_sample: coords {coords.shape} need a leading 2-axis")
        out = bilinear_sample(expand_dims(source, 0), expand_dims(coords, 0))
        return reshape(out, out.shape[1:])
    if source.ndim != 4 or coords.ndim < 3 or coords.shape[1] != 2 or coords.shape[0] != source.shape[0]:
        raise ShapeMismatch(f"bilinear_sample: source {source.shape} vs coords {coords.shape}")
    B, C, H, W = source.shape
    S = coords.shape[2:]
    P = int(np.prod(S))
    cd = coords.data.reshape(B, 2, P).astype(np.float64)
    x, y = cd[:, 0].ravel(), cd[:, 1].ravel()
    x0f, y0f = np.floor(x), np.floor(y)
    wx1, wy1 = x - x0f, y - y0f
    wx0, wy0 = 1.0 - wx1, 1.0 - wy1
    x0, y0 = x0f.astype(np.int64), y0f.astype(np.int64)
    batch_off = np.repeat(np.arange(B) * (H * W), P)

    # the four taps; out-of-frame taps point at entry 0 with zero weight
    taps = []
    for ox, oy, wt, gx_, gy_ in ((0, 0, wx0 * wy0, -wy0, -wx0), (1, 0, wx1 * wy0, wy0, -wx1),
                                 (0, 1, wx0 * wy1, -wy1, wx0), (1, 1, wx1 * wy1, wy1, wx1)):
        cx, cy = x0 + ox, y0 + oy
        ok = (cx >= 0) & (cx < W) & (cy >= 0) & (cy < H)
        idx = np.where(ok, batch_off + cy * W + cx, 0)
        taps.append((idx, ok, wt * ok, gx_ * ok, gy_ * ok))
    dt = source.dtype
    rows = np.concatenate([np.flatnonzero(t[1]) for t in taps])
    cols = np.concatenate([t[0][t[1]] for t in taps])
    vals = np.concatenate([t[2][t[1]] for t in taps]).astype(dt)
    op = sparse.csr_matrix((vals, (rows, cols)), shape=(B * P, B * H * W))
    src_rows = np.ascontiguousarray(source.data.transpose(0, 2, 3, 1)).reshape(B * H * W, C)
    out = np.asarray(op @ src_rows).reshape(B, P, C).transpose(0, 2, 1)

    def bw(g):
        g_rows = np.ascontiguousarray(g.reshape(B, C, P).transpose(0, 2, 1)).reshape(B * P, C)
        gsrc = gco = None
        if source.requires_grad:
            gsrc = np.asarray(op.T @ g_rows).reshape(B, H, W, C).transpose(0, 3, 1, 2)
        if coords.requires_grad:
            gx, gy = np.zeros(B * P), np.zeros(B * P)
            for idx, _, _, ax, ay in taps:
                t = np.einsum("ij,ij->i", g_rows, src_rows[idx])
                gx += ax * t
                gy += ay * t
            gco = np.stack([gx.reshape(B, P), gy.reshape(B, P)], axis=1).reshape(coords.shape).astype(coords.dtype)
        return gsrc, gco

    return _make(np.ascontiguousarray(out).reshape((B, C) + S), (source, coords), bw)


def interp_matrix(n_in: int, factor: int, dtype=np.float64) -> np.ndarray:
    """(n_in*factor, n_in) linear-interpolation matrix, half-pixel centers, edge clamped.

    Rows sum to one, so constant signals are reproduced exactly.
    """
    n_out = n_in * factor
    pos = (np.arange(n_out) + 0.5) / factor - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in), dtype)
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Spatially upsample (..., H, W) by an integer factor (values unscaled)."""
    if factor == 1:
        return x
    H, W = x.shape[-2:]
    my = Tensor(interp_matrix(H, factor, x.dtype))
    mxt = Tensor(interp_matrix(W, factor, x.dtype).T.copy())
    return matmul(matmul(my, x), mxt)

"""Separable ConvGRU, flow head and flow upsampling."""
from __future__ import annotations

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor


class BadFactor(ValueError):
    pass


class SepConvGRU(Module):
    """A 1x5 GRU followed by a 5x1 GRU sharing the same input ``x``."""

    def __init__(self, hidden: int, inp: int, rng, dtype):
        c = hidden + inp
        self.hidden = hidden
        self.convz1 = Conv2d(c, hidden, (1, 5), rng=rng, dtype=dtype, gain=1.0)
        self.convr1 = Conv2d(c, hidden, (1, 5), rng=rng, dtype=dtype, gain=1.0)
        self.convq1 = Conv2d(c, hidden, (1, 5), rng=rng, dtype=dtype, gain=1.0)
        self.convz2 = Conv2d(c, hidden, (5, 1), rng=rng, dtype=dtype, gain=1.0)
        self.convr2 = Conv2d(c, hidden, (5, 1), rng=rng, dtype=dtype, gain=1.0)
        self.convq2 = Conv2d(c, hidden, (5, 1), rng=rng, dtype=dtype, gain=1.0)

    @staticmethod
    def _gru(h, x, cz, cr, cq):
        hx = T.concat([h, x], axis=1)
        # z and r read the same input, so run them as one conv
        w = T.concat([cz.weight, cr.weight], axis=0)
        b = T.concat([cz.bias, cr.bias], axis=0)
        zr = T.sigmoid(T.conv2d(hx, w, b, 1, cz.padding))
        n = h.shape[1]
        z, r = zr[:, :n], zr[:, n:]
        q = T.tanh(cq(T.concat([T.mul(r, h), x], axis=1)))
        return T.add(T.mul(T.sub(1.0, z), h), T.mul(z, q))

    def __call__(self, h: Tensor, x: Tensor) -> Tensor:
        if h.shape[1] != self.hidden or h.shape[0] != x.shape[0] or h.shape[2:] != x.shape[2:]:
            raise T.ShapeMismatch(f"convgru_step: hidden {h.shape}, input {x.shape}")
        h = self._gru(h, x, self.convz1, self.convr1, self.convq1)
        return self._gru(h, x, self.convz2, self.convr2, self.convq2)


class FlowHead(Module):
    def __init__(self, hidden: int, mid: int, rng, dtype, zero_init: bool = False):
        self.conv1 = Conv2d(hidden, mid, 3, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(mid, 2, 3, rng=rng, dtype=dtype, gain=0.1)
        if zero_init:
            self.conv2.zero_()

    def __call__(self, h: Tensor) -> Tensor:
        return self.conv2(T.relu(self.conv1(h)))


def upsample_flow(flow: Tensor, factor: int) -> Tensor:
    """Bilinear x``factor`` upsampling; values are scaled into image pixels."""
    if not isinstance(factor, int) or factor < 1:
        raise BadFactor(f"upsampling factor must be a positive int, got {factor!r}")
    if factor == 1:
        return flow
    return T.mul(T.upsample_bilinear(flow, factor), float(factor))

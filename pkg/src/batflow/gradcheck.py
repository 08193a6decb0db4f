"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradientTape, Tensor, backward


def numeric_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """(f(x+h) - f(x-h)) / 2h for every coordinate of every input."""
    out = []
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(*inputs).data.sum())
            flat[i] = orig - h
            fm = float(fn(*inputs).data.sum())
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def analytic_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        with GradientTape():
            loss = fn(*inputs)
        if loss._tape is None:
            return [np.zeros_like(t.data) for t in inputs]
        backward(loss)
        return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    finally:
        for t, s in zip(inputs, saved):
            t.requires_grad = s
            t.grad = None


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape and central-difference gradients.

    ``fn`` must return a one-element tensor; ``inputs`` should be float64.
    Error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    inputs = list(inputs)
    ana = analytic_grad(fn, inputs)
    num = numeric_grad(fn, inputs, h)
    worst = 0.0
    for a, n in zip(ana, num):
        if a.size == 0:
            continue
        err = np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))
        worst = max(worst, float(err.max()))
    return worst

"""Sequence loss, metrics, AdamW with a one-cycle schedule, and the toy training loop."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import DataConfig, ModelConfig, TrainConfig
from .data import Sample, batch, make_dataset
from .model import BATNet
from .nn import encode_checkpoint
from .tensor import GradientTape, Parameter, Tensor, backward

log = logging.getLogger(__name__)


class EmptyMask(ValueError):
    pass


class DivergedLoss(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def _mask_array(valid, shape) -> np.ndarray:
    """(batch..., H, W) boolean mask; ``None`` means every pixel is valid."""
    if valid is None:
        m = np.ones(shape[:-3] + shape[-2:], bool)
    else:
        m = np.asarray(valid, bool)
        if m.shape != shape[:-3] + shape[-2:]:
            raise T.ShapeMismatch(f"mask {m.shape} does not match flow {shape}")
    if not m.any():
        raise EmptyMask("no valid pixels")
    return m


def sequence_loss(preds: list[Tensor], gt, valid=None, gamma: float = 0.8) -> Tensor:
    """sum_i gamma^(K-i) * mean over valid pixels of |f_i - f_gt|_1."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    gt = np.asarray(getattr(gt, "data", gt))
    K = len(preds)
    m = _mask_array(valid, gt.shape)
    weight = np.expand_dims(m, -3).astype(preds[0].dtype) / m.sum()
    wt = Tensor(np.broadcast_to(weight, gt.shape).copy())
    gtt = Tensor(gt.astype(preds[0].dtype))
    total = None
    for i, p in enumerate(preds, 1):
        if p.shape != gt.shape:
            raise T.ShapeMismatch(f"prediction {p.shape} vs ground truth {gt.shape}")
        term = T.mul(T.tsum(T.mul(T.tabs(T.sub(p, gtt)), wt)), gamma ** (K - i))
        total = term if total is None else T.add(total, term)
    return total


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    epe: float
    npe: dict[int, float]
    ae: float
    pct_out: float
    n_valid: int = 0

    def as_dict(self) -> dict:
        d = {"epe": self.epe, "1pe": self.npe[1], "2pe": self.npe[2], "3pe": self.npe[3],
             "ae": self.ae, "pct_out": self.pct_out, "n_valid": self.n_valid}
        return d

    def report(self) -> str:
        return "\n".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in self.as_dict().items())


def compute_metrics(pred, gt, valid=None) -> Metrics:
    """Endpoint, n-pixel, angular and outlier statistics over valid pixels.

    ``pred``/``gt`` are (..., 2, H, W). AE uses the angle between (u, v, 1)
    vectors; %Out counts EPE > 3 px that is also > 5% of the gt magnitude.
    """
    pred = np.asarray(getattr(pred, "data", pred), np.float64)
    gt = np.asarray(getattr(gt, "data", gt), np.float64)
    if pred.shape != gt.shape or pred.shape[-3] != 2:
        raise T.ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    m = _mask_array(valid, gt.shape)
    pu, pv = np.moveaxis(pred, -3, 0)
    gu, gv = np.moveaxis(gt, -3, 0)
    pu, pv, gu, gv = pu[m], pv[m], gu[m], gv[m]
    err = np.hypot(pu - gu, pv - gv)
    mag = np.hypot(gu, gv)
    cos = (pu * gu + pv * gv + 1.0) / np.sqrt((pu ** 2 + pv ** 2 + 1.0) * (gu ** 2 + gv ** 2 + 1.0))
    ae = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return Metrics(
        epe=float(err.mean()),
        npe={n: float(100.0 * (err > n).mean()) for n in (1, 2, 3)},
        ae=float(ae.mean()),
        pct_out=float(100.0 * ((err > 3.0) & (err > 0.05 * mag)).mean()),
        n_valid=int(m.sum()),
    )


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: list[Parameter], lr: float = 2e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.wd:
                p.data *= p.data.dtype.type(1 - self.lr * self.wd)
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class OneCycle:
    """Linear warm-up to ``max_lr`` then linear decay, as in the usual one-cycle policy."""

    def __init__(self, max_lr: float, total: int, pct_start: float = 0.05,
                 div: float = 25.0, final_div: float = 1e4):
        self.max_lr, self.total = max_lr, max(1, total)
        self.up = max(1, int(pct_start * self.total))
        self.lo = max_lr / div
        self.end = self.lo / final_div

    def __call__(self, step: int) -> float:
        if step < self.up:
            return self.lo + (self.max_lr - self.lo) * step / self.up
        frac = min(1.0, (step - self.up) / max(1, self.total - self.up))
        return self.max_lr + (self.end - self.max_lr) * frac


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None))
    if max_norm and total > max_norm:
        s = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(s)
    return total


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: BATNet
    losses: list[float]
    checkpoint: bytes
    seconds: float = 0.0
    history: list[dict] = field(default_factory=list)


def train_step(model: BATNet, opt: AdamW, groups: np.ndarray, gt: np.ndarray,
               gamma: float, clip: float, iters: int | None = None) -> float:
    opt.zero_grad()
    with GradientTape() as tape:
        preds = model(groups, iters)
        loss = sequence_loss(preds, gt, gamma=gamma)
    backward(loss)
    value = float(loss.data)
    clip_grad_norm(opt.params, clip)
    opt.step()
    tape.reset()
    return value


def train_toy(model_cfg: ModelConfig, train_cfg: TrainConfig, data_cfg: DataConfig | None = None,
              dataset: list[Sample] | None = None, seed: int | None = None,
              callback=None) -> TrainResult:
    """Train a fresh model on synthetic constant-flow scenes.

    Batches are drawn from a fixed pool with an RNG seeded from ``seed``, so
    two runs with the same arguments produce identical loss curves.
    """
    data_cfg = data_cfg or DataConfig()
    seed = train_cfg.seed if seed is None else seed
    model = BATNet(model_cfg, seed=seed)
    if dataset is None:
        dataset = make_dataset(train_cfg.pool, seed + 1, model_cfg, data_cfg)
    opt = AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    sched = OneCycle(train_cfg.lr, train_cfg.steps, train_cfg.pct_start)
    rng = np.random.default_rng(seed + 2)
    losses = []
    t0 = time.time()
    for step in range(train_cfg.steps):
        idx = rng.choice(len(dataset), size=train_cfg.batch, replace=False)
        groups, gt = batch([dataset[i] for i in idx])
        opt.lr = sched(step)
        try:
            loss = train_step(model, opt, groups, gt, train_cfg.gamma, train_cfg.clip)
        except T.NonFiniteError as e:
            raise DivergedLoss(f"non-finite value at step {step}: {e}") from e
        if not math.isfinite(loss):
            raise DivergedLoss(f"loss became {loss} at step {step}")
        losses.append(loss)
        if train_cfg.log_every and (step + 1) % train_cfg.log_every == 0:
            log.info("step %d loss %.4f lr %.2e alpha %.3f", step + 1,
                     float(np.mean(losses[-train_cfg.log_every:])), opt.lr, float(model.radius.alpha.data[0]))
        if callback is not None:
            callback(step, loss, model)
    return TrainResult(model, losses, encode_checkpoint(model.state_dict()), time.time() - t0)


def evaluate(model: BATNet, dataset: list[Sample], iters: int | None = None,
             batch_size: int = 4) -> tuple[Metrics, list[float]]:
    """Pooled metrics over the dataset plus the per-scene EPE list."""
    preds, gts, per_scene = [], [], []
    for i in range(0, len(dataset), batch_size):
        groups, gt = batch(dataset[i:i + batch_size])
        p = model.predict(groups, iters)
        preds.append(p)
        gts.append(gt)
        per_scene += [compute_metrics(p[k], gt[k]).epe for k in range(len(gt))]
    return compute_metrics(np.concatenate(preds), np.concatenate(gts)), per_scene


def write_metrics(metrics: Metrics, txt_path, json_path=None):
    Path(txt_path).write_text(metrics.report() + "\n")
    if json_path is not None:
        Path(json_path).write_text(json.dumps(metrics.as_dict(), indent=2, sort_keys=True) + "\n")

"""The full flow network: features, context, correlation, aggregation, refinement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import ContextNetwork, ContextState, FeatureExtractor, FeatureSet, context_input
from .config import ModelConfig
from .correlation import RadiusScale, build_btc
from .nn import Module
from .satma import SATMA, MotionEncoder, aggregate_all
from .tensor import Tensor
from .updater import FlowHead, SepConvGRU, upsample_flow


@dataclass
class IterationTrace:
    flow: list[np.ndarray] = field(default_factory=list)     # low-res flow entering each step
    df: list[np.ndarray] = field(default_factory=list)       # per-group step used for warping
    hidden_max: list[float] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)


class BATNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        dt = cfg.np_dtype
        self.cfg = cfg
        self.fnet = FeatureExtractor(cfg, rng)
        self.cnet = ContextNetwork(cfg, rng)
        self.radius = RadiusScale(cfg.alpha_init, dt)
        self.menc = MotionEncoder(cfg, rng)
        self.satma = SATMA(cfg, rng)
        n_motion = cfg.n_forward + cfg.n_backward
        self.gru = SepConvGRU(cfg.hidden_dim, n_motion * cfg.motion_dim + cfg.context_dim, rng, dt)
        self.head = FlowHead(cfg.hidden_dim, cfg.head_dim, rng, dt, zero_init=cfg.zero_init_head)

    # -- stages ------------------------------------------------------------
    def features(self, groups: np.ndarray) -> FeatureSet:
        """Feature maps for the groups this mode consumes (numbered from 1)."""
        cfg = self.cfg
        x = np.asarray(groups, dtype=cfg.np_dtype)[:, :cfg.input_groups]
        return self.fnet(Tensor(x))

    def context(self, groups: np.ndarray) -> ContextState:
        return self.cnet(Tensor(context_input(np.asarray(groups, self.cfg.np_dtype), self.cfg)))

    def motion(self, feats: FeatureSet, flow: Tensor) -> Tensor:
        cfg = self.cfg
        corr = build_btc(feats, flow, self.radius(), cfg.radius, cfg.mode, cfg.groups, cfg.corr_levels)
        maps = corr.forward + corr.backward
        b = flow.shape[0]
        enc = self.menc(T.concat(maps, axis=0), T.concat([flow] * len(maps), axis=0))
        parts = [enc[i * b:(i + 1) * b] for i in range(len(maps))]
        nf = len(corr.forward)
        return aggregate_all(self.satma, parts[:nf], parts[nf:], cfg.mode, cfg.groups)

    def iterate(self, feats: FeatureSet, ctx: ContextState, iters: int,
                trace: IterationTrace | None = None) -> list[Tensor]:
        """Refine from zero flow; return the full-resolution flow after each step."""
        if iters < 1:
            raise ValueError("need at least one iteration")
        cfg = self.cfg
        ref = feats.features
        b, h, w = ref.shape[0], ref.shape[-2], ref.shape[-1]
        flow = Tensor(np.zeros((b, 2, h, w), cfg.np_dtype))
        hidden = ctx.hidden
        preds = []
        for _ in range(iters):
            flow = flow.detach()
            if trace is not None:
                trace.flow.append(flow.data.copy())
                trace.df.append(flow.data / cfg.groups)
                trace.alpha.append(float(self.radius().data[0]))
            m_bid = self.motion(feats, flow)
            hidden = self.gru(hidden, T.concat([m_bid, ctx.context], axis=1))
            flow = T.add(flow, self.head(hidden))
            if trace is not None:
                trace.hidden_max.append(float(np.abs(hidden.data).max()))
            preds.append(upsample_flow(flow, cfg.stride))
        return preds

    def __call__(self, groups: np.ndarray, iters: int | None = None,
                 trace: IterationTrace | None = None) -> list[Tensor]:
        """``groups`` is (batch, G, B/N, H0, W0) voxel groups, oldest first.

        G is 2N (past then future window); in backward-only mode only the
        first N (past) groups are read, and G may be N.
        """
        groups = np.asarray(groups)
        if groups.ndim == 4:
            groups = groups[None]
        cfg = self.cfg
        if groups.shape[1] < cfg.input_groups or groups.shape[2] != cfg.bins_per_group:
            raise T.ShapeMismatch(f"expected (batch, >={cfg.input_groups}, {cfg.bins_per_group}, H, W) "
                                  f"voxel groups, got {groups.shape}")
        feats = self.features(groups)
        ctx = self.context(groups)
        return self.iterate(feats, ctx, iters or cfg.iters, trace)

    def predict(self, groups: np.ndarray, iters: int | None = None) -> np.ndarray:
        """Final full-resolution flow (batch, 2, H0, W0) without recording a tape."""
        return self(groups, iters)[-1].data

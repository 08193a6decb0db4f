import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from batflow import tensor as T
from batflow.config import ModelConfig

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def micro_config(**kw) -> ModelConfig:
    """A float64 network small enough for finite differences."""
    base = dict(groups=3, bins=6, radius=1, iters=2, stride=2, feature_dim=4, motion_dim=6,
                hidden_dim=4, context_dim=4, stage_dims=(3, 4, 4), corr_dims=(4, 4), flow_dims=(3, 3),
                head_dim=4, deform_points=4, deform_range=2.0, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def micro():
    return micro_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def relu_margin(fn, inputs) -> float:
    """Smallest |x| fed to any ReLU while evaluating ``fn``.

    Central differences straddling a kink are meaningless, so callers redraw
    inputs until every pre-activation is at least 1e-3 away from zero.
    """
    seen = [np.inf]
    orig = T.relu

    def spy(a):
        seen[0] = min(seen[0], float(np.abs(a.data).min()))
        return orig(a)

    T.relu = spy
    try:
        fn(*inputs)
    finally:
        T.relu = orig
    return seen[0]


def draw_smooth(seed, build):
    """Call ``build(rng)`` -> (fn, inputs) until no ReLU input is near its kink."""
    for attempt in range(50):
        fn, inputs = build(np.random.default_rng([seed, attempt]))
        if relu_margin(fn, inputs) > 1e-3:
            return fn, inputs
    raise RuntimeError("could not draw kink-free inputs")


class ReluPattern:
    """Records the on/off pattern of every ReLU evaluated inside the block."""

    def __enter__(self):
        self.masks = []
        self._orig = T.relu

        def spy(a):
            self.masks.append(np.packbits(a.data > 0).tobytes())
            return self._orig(a)

        T.relu = spy
        return self

    def __exit__(self, *exc):
        T.relu = self._orig


def kink_aware_grad_check(fn, params, h=1e-5):
    """Max relative error over coordinates whose +-h probes keep every ReLU
    on the same side of its kink; also returns how many were skipped."""
    from batflow.gradcheck import analytic_grad

    ana = analytic_grad(fn, params)
    with ReluPattern() as base:
        fn(*params)
    worst, skipped, total = 0.0, 0, 0
    for p, a in zip(params, ana):
        p.data = np.ascontiguousarray(p.data)
        flat, af = p.data.reshape(-1), a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            vals, same = [], True
            for x in (orig + h, orig - h):
                flat[i] = x
                with ReluPattern() as probe:
                    vals.append(float(fn(*params).data.sum()))
                same &= probe.masks == base.masks
            flat[i] = orig
            total += 1
            if not same:
                skipped += 1
                continue
            n = (vals[0] - vals[1]) / (2 * h)
            worst = max(worst, abs(af[i] - n) / max(1e-8, abs(af[i]) + abs(n)))
    return worst, skipped, total


ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    print(ACCEPTANCE[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

import numpy as np
import pytest
from hypothesis import given, strategies as st

from batflow.backbone import FeatureSet
from batflow.correlation import (ALPHA_MIN, BadMode, RadiusScale, build_btc, corr_group, correlate,
                                 grid_offsets, pixel_grid)
from batflow.tensor import Tensor


def brute_force_scores(f_ref, f_adj, r):
    """All (2r+1)^2 scores per pixel by explicit loops, integer offsets, zero outside."""
    D, h, w = f_ref.shape
    out = np.zeros(((2 * r + 1) ** 2, h, w))
    for y in range(h):
        for x in range(w):
            k = 0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        out[k, y, x] = f_ref[:, y, x] @ f_adj[:, yy, xx] / np.sqrt(D)
                    k += 1
    return out


def test_equal_unit_features_give_two():
    f = Tensor(np.ones((4, 5, 5)))
    c = corr_group(f, f, None, 1, 1.0, 0, 3)
    assert c.shape == (1, 5, 5)
    np.testing.assert_array_equal(c.data, 2.0)


def test_channel_count():
    f = Tensor(np.random.default_rng(0).normal(size=(3, 6, 6)))
    assert corr_group(f, f, None, 1, 1.0, 2, 3).shape == (25, 6, 6)


def test_grid_offsets_order():
    off = grid_offsets(1)
    assert off[:, 0].tolist() == [-1, -1]
    assert off[:, 1].tolist() == [0, -1]
    assert off[:, 4].tolist() == [0, 0]


@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 8, 9, 7))
    got = corr_group(Tensor(a), Tensor(b), None, 1, 1.0, 2, 3).data
    np.testing.assert_allclose(got, brute_force_scores(a, b, 2), atol=1e-12)


@given(st.integers(-2, 2), st.integers(-2, 2), st.integers(0, 2**32 - 1))
def test_argmax_recovers_translation(dx, dy, seed):
    rng = np.random.default_rng(seed)
    D, h, w, r = 16, 14, 14, 2
    ref = rng.normal(size=(D, h, w))
    ref /= np.linalg.norm(ref, axis=0)
    adj = np.roll(ref, (dy, dx), axis=(1, 2))       # adj(p + s) = ref(p)
    scores = corr_group(Tensor(ref), Tensor(adj), None, 1, 1.0, r, 3).data
    best = grid_offsets(r)[:, scores.argmax(0)]     # (2, h, w)
    m = 2 * r
    hit = (best[0] == dx) & (best[1] == dy)
    assert hit[m:-m, m:-m].mean() >= 0.95


def fourier_field(rng, D, h, w, shift=(0.0, 0.0)):
    """Smooth unit-ish features g(p - shift) from random plane waves."""
    k = rng.uniform(0.6, 1.2, D) * np.exp(1j * rng.uniform(0, 2 * np.pi, D))
    phase = rng.uniform(0, 2 * np.pi, D)
    x, y = pixel_grid(h, w)
    x, y = x - shift[0], y - shift[1]
    return np.cos(k.real[:, None, None] * x + k.imag[:, None, None] * y + phase[:, None, None]) * np.sqrt(2 / D)


@pytest.mark.parametrize("j", [1, 2, 3])
def test_center_channel_tracks_scaled_flow(j):
    N, D, h, w = 3, 64, 16, 16
    flow = np.zeros((2, h, w))
    flow[0], flow[1] = 1.2, -0.9                    # df = (0.4, -0.3)
    ref = fourier_field(np.random.default_rng(j), D, h, w)
    adj = fourier_field(np.random.default_rng(j), D, h, w, shift=(j * 0.4, j * -0.3))
    scores = corr_group(Tensor(ref), Tensor(adj), flow, j, 1.0, 2, N).data
    centre = scores.shape[0] // 2
    inner = (scores.argmax(0) == centre)[3:-3, 3:-3]
    assert inner.mean() >= 0.99


def test_alpha_is_clamped():
    rs = RadiusScale(1.0, np.float64)
    rs.alpha.data[:] = -3.0
    assert rs().data[0] == ALPHA_MIN


def test_alpha_scales_lookup():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 1, 4, 10, 10))
    centers = pixel_grid(10, 10)[None]
    wide = correlate(Tensor(a), Tensor(b), centers, 2.0, 1).data
    ref = correlate(Tensor(a), Tensor(b), centers, 1.0, 2).data
    # alpha = 2 with r = 1 samples the even offsets of the r = 2 grid
    np.testing.assert_allclose(wide, ref[:, [0, 2, 4, 10, 12, 14, 20, 22, 24]], atol=1e-12)


def _features(N=3, D=4, h=6, w=6, seed=0):
    return FeatureSet(Tensor(np.random.default_rng(seed).normal(size=(1, 2 * N, D, h, w))))


@pytest.mark.parametrize("mode,n_f,n_b", [("bidirectional", 3, 2), ("forward-only", 3, 0),
                                          ("backward-only", 0, 2)])
def test_group_counts(mode, n_f, n_b):
    c = build_btc(_features(), None, 1.0, 2, mode, 3)
    assert (len(c.forward), len(c.backward)) == (n_f, n_b)
    assert all(m.shape == (1, 25, 6, 6) for m in c.forward + c.backward)


def test_single_group_forward_only():
    c = build_btc(_features(N=1), None, 1.0, 1, "forward-only", 1)
    assert (len(c.forward), len(c.backward)) == (1, 0)


def test_signed_offsets_and_pairs():
    feats = _features()
    c = build_btc(feats, None, 1.0, 1, "bidirectional", 3)
    assert c.offsets == {("fwd", 1): 1, ("fwd", 2): 2, ("fwd", 3): 3, ("bwd", 1): -1, ("bwd", 2): -2}
    # backward map j=2 pairs F_3 with F_1
    want = corr_group(feats[3], feats[1], None, -2, 1.0, 1, 3)
    np.testing.assert_allclose(c.backward[1].data, want.data, atol=1e-12)


def test_backward_only_never_reads_target_stream():
    feats = _features()
    build_btc(feats, np.ones((1, 2, 6, 6)), 1.0, 2, "backward-only", 3)
    assert set(feats.accessed) <= {1, 2, 3}


def test_bad_mode():
    with pytest.raises(BadMode):
        build_btc(_features(), None, 1.0, 2, "sideways", 3)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from batflow.events import (Event, EventStream, MalformedRecord, NonMonotonicTime, OutOfBounds,
                            SyntheticSceneSpec, InvalidInterval, parse_events, slice_events,
                            synthesize_events, threshold_events, write_events)


def random_stream(seed, n=1000, w=64, h=48):
    rng = np.random.default_rng(seed)
    return EventStream(w, h, np.sort(rng.integers(0, 10**6, n)), rng.integers(0, w, n),
                       rng.integers(0, h, n), rng.choice([-1, 1], n))


events_strategy = st.integers(0, 300).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(0, 2**32 - 1)))


def test_parse_single_csv_record():
    s = parse_events(b"100,3,4,1\n", "csv", geometry=(640, 480))
    assert len(s) == 1
    assert s[0] == Event(t=100, x=3, y=4, p=1)


def test_parse_empty():
    assert len(parse_events(b"", "csv", geometry=(640, 480))) == 0


def test_out_of_bounds():
    with pytest.raises(OutOfBounds):
        parse_events(b"100,640,4,1\n", "csv", geometry=(640, 480))


@pytest.mark.parametrize("line", [b"1,2,3\n", b"1,2,x,1\n", b"1,2,3,0\n"])
def test_malformed(line):
    with pytest.raises(MalformedRecord):
        parse_events(line, "csv", geometry=(8, 8))


def test_truncated_evt1():
    data = write_events(random_stream(0, 10), "evt1")
    with pytest.raises(MalformedRecord):
        parse_events(data[:-3], "evt1")


def test_unsorted_input_is_stably_sorted():
    s = parse_events(b"5,1,1,1\n3,2,2,-1\n3,0,0,1\n", "csv", geometry=(4, 4))
    assert list(s.t) == [3, 3, 5]
    assert list(s.x) == [2, 0, 1]
    with pytest.raises(NonMonotonicTime):
        parse_events(b"5,1,1,1\n3,2,2,-1\n", "csv", geometry=(4, 4), strict=True)


def test_stream_is_immutable():
    s = random_stream(1, 5)
    with pytest.raises(AttributeError):
        s.width = 3
    with pytest.raises(ValueError):
        s.t[0] = 7


@pytest.mark.parametrize("fmt", ["csv", "evt1"])
def test_empty_stream_roundtrip(fmt):
    s = EventStream(32, 16)
    data = write_events(s, fmt)
    assert parse_events(data, fmt) == s


@pytest.mark.parametrize("fmt", ["csv", "evt1"])
def test_large_roundtrip(fmt):
    s = random_stream(7, 10_000)
    assert parse_events(write_events(s, fmt), fmt) == s


@given(events_strategy)
def test_evt1_roundtrip_is_bit_exact(args):
    n, seed = args
    s = random_stream(seed, n)
    data = write_events(s, "evt1")
    assert write_events(parse_events(data, "evt1"), "evt1") == data


def test_slice_identity_and_degenerate():
    s = random_stream(3, 500)
    assert slice_events(s, 0, math.inf) == s
    a = int(s.t[100])
    assert (slice_events(s, a, a).t == a).all()
    assert len(slice_events(s, a, a)) == int((s.t == a).sum())
    with pytest.raises(InvalidInterval):
        slice_events(s, 5, 4)


@given(st.integers(0, 2**32 - 1), st.integers(1, 10**6 - 1))
def test_disjoint_slices_cover(seed, cut):
    s = random_stream(seed, 300)
    left, right = slice_events(s, 0, cut - 1), slice_events(s, cut, math.inf)
    assert len(left) + len(right) == len(s)
    assert len(left) == int((s.t <= cut - 1).sum())


# -- synthesis -----------------------------------------------------------------

def test_constant_texture_is_silent():
    s, flows = synthesize_events(SyntheticSceneSpec(texture="constant", velocity=(3, 1)))
    assert len(s) == 0
    np.testing.assert_allclose(flows[0][0], 3.0)


@pytest.mark.parametrize("tex", ["checkerboard", "random-bandlimited", "bar"])
def test_static_scene_is_silent(tex):
    assert len(synthesize_events(SyntheticSceneSpec(texture=tex, velocity=(0, 0)))[0]) == 0


def test_threshold_hand_count():
    frames = np.zeros((2, 1, 1))
    frames[1] = 0.65
    t, x, y, p = threshold_events(frames, np.array([0.0, 100.0]), 0.2)
    assert len(t) == 3 and (p == 1).all()
    np.testing.assert_allclose(np.sort(t), [100 * 0.2 / 0.65, 100 * 0.4 / 0.65, 100 * 0.6 / 0.65])


def test_synthesis_is_seeded():
    spec = SyntheticSceneSpec(texture="random-bandlimited", velocity=(4, -2), seed=5)
    a, fa = synthesize_events(spec)
    b, fb = synthesize_events(spec)
    assert a == b and len(a) > 0
    np.testing.assert_array_equal(fa[1], fb[1])


def test_accelerating_scene_flow():
    spec = SyntheticSceneSpec(texture="checkerboard", velocity=(2, 0), acceleration=(2, 0), size=(16, 16))
    _, flows = synthesize_events(spec)
    # d(tau) = 2 tau + tau^2, so the intervals move 3 and then 5 px
    assert flows[0][0, 0, 0] == pytest.approx(3.0)
    assert flows[1][0, 0, 0] == pytest.approx(5.0)

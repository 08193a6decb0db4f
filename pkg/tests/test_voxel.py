import numpy as np
import pytest
from hypothesis import given, strategies as st

from batflow.events import EventStream, InvalidInterval
from batflow.voxel import (BinCountTooSmall, NotDivisible, VoxelGrid, decode_vxg1, encode_vxg1,
                           join_groups, split_groups, voxelize)


def stream_from(w, h, rows):
    t, x, y, p = zip(*rows) if rows else ((), (), (), ())
    return EventStream.from_unsorted(w, h, t, x, y, p)


def random_stream(seed, n, w=20, h=16, t1=14 * 64):
    rng = np.random.default_rng(seed)
    return EventStream.from_unsorted(w, h, rng.integers(0, t1 + 1, n), rng.integers(0, w, n),
                                     rng.integers(0, h, n), rng.choice([-1, 1], n))


def test_single_event_at_t0():
    v = voxelize(stream_from(8, 8, [(0, 3, 4, 1)]), 0, 100, 5)
    assert v.data[0, 4, 3] == 1
    assert v.data.sum() == 1 and np.count_nonzero(v.data) == 1


def test_half_bin_split():
    # t* = (B-1) t / T = 1.5 with B=5, T=100 -> t = 37.5; use T=200, t=75
    v = voxelize(stream_from(8, 8, [(75, 2, 2, 1)]), 0, 200, 5)
    assert v.data[1, 2, 2] == 0.5 and v.data[2, 2, 2] == 0.5
    assert v.data.sum() == 1


def test_empty_stream():
    v = voxelize(EventStream(6, 5), 0, 10, 15)
    assert v.shape == (15, 5, 6) and not v.data.any()


def test_errors():
    s = random_stream(0, 10)
    with pytest.raises(InvalidInterval):
        voxelize(s, 5, 5, 5)
    with pytest.raises(BinCountTooSmall):
        voxelize(s, 0, 10, 1)


@given(st.integers(0, 2**32 - 1), st.integers(0, 2000), st.integers(2, 20))
def test_conservation(seed, n, bins):
    s = random_stream(seed, n)
    v = voxelize(s, 0, 14 * 64, bins)
    assert abs(v.data.sum() - s.p.sum()) <= 1e-9 * max(1, n)


@given(st.integers(0, 2**32 - 1), st.integers(0, 500))
def test_polarity_antisymmetry(seed, n):
    s = random_stream(seed, n)
    flipped = EventStream(s.width, s.height, s.t, s.x, s.y, -s.p)
    a, b = voxelize(s, 0, 900, 15), voxelize(flipped, 0, 900, 15)
    np.testing.assert_array_equal(a.data, -b.data)


@given(st.integers(0, 2**32 - 1), st.integers(0, 500), st.integers(0, 500))
def test_linearity_on_dyadic_times(seed, n1, n2):
    # t* = t / 64 has at most six fractional bits, so every partial sum is exact
    a, b = random_stream(seed, n1), random_stream(seed + 1, n2)
    both = EventStream.from_unsorted(a.width, a.height, *(np.concatenate([getattr(a, k), getattr(b, k)])
                                                          for k in "txyp"))
    va, vb, vab = (voxelize(s, 0, 14 * 64, 15).data for s in (a, b, both))
    np.testing.assert_array_equal(vab, va + vb)


def test_split_join():
    v = voxelize(random_stream(2, 300), 0, 900, 15)
    parts = split_groups(v, 3)
    assert [p.bins for p in parts] == [5, 5, 5]
    np.testing.assert_array_equal(join_groups(parts).data, v.data)
    assert split_groups(v, 1)[0].data.tolist() == v.data.tolist()
    with pytest.raises(NotDivisible):
        split_groups(v, 4)


@given(st.integers(0, 2**32 - 1))
def test_vxg1_roundtrip(seed):
    data = np.random.default_rng(seed).normal(size=(6, 5, 7)).astype(np.float32)
    v = VoxelGrid(data, 0.0, 1.0)
    blob = encode_vxg1(v)
    back = decode_vxg1(blob)
    assert back.data.tobytes() == data.tobytes()
    assert encode_vxg1(back) == blob

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinyforge.geometry import (
    Region,
    apply_regions,
    apply_regions_bytes,
    flat_copy,
    fuse_regions,
    move_count,
    region_for_concat,
    region_for_gather,
    region_for_slice,
    region_for_transpose,
)
from tinyforge.tensor import TinyforgeError


def run(shape, regions, out_size):
    src = np.arange(np.prod(shape), dtype=np.int64)
    dst = np.full(out_size, -1, dtype=np.int64)
    apply_regions(src, regions, dst)
    return dst


class TestTranspose:
    def test_worked_example_2x3(self):
        (r,) = region_for_transpose([2, 3], (1, 0))
        assert r == Region((2, 3, 1), 0, (3, 1, 0), 0, (1, 2, 0))

    def test_matches_numpy_2d(self):
        shape = (4, 7)
        got = run(shape, region_for_transpose(shape, (1, 0)), 28)
        want = np.arange(28).reshape(shape).T.reshape(-1)
        assert np.array_equal(got, want)

    @pytest.mark.parametrize("perm", [(0, 2, 1), (1, 0, 2), (2, 1, 0), (1, 2, 0), (2, 0, 1)])
    def test_matches_numpy_3d(self, perm):
        shape = (2, 3, 4)
        got = run(shape, region_for_transpose(shape, perm), 24)
        want = np.arange(24).reshape(shape).transpose(perm).reshape(-1)
        assert np.array_equal(got, want)

    def test_identity_perm_is_flat_copy(self):
        (r,) = region_for_transpose([3, 5], (0, 1))
        assert r == flat_copy(15)

    def test_bad_perm(self):
        with pytest.raises(TinyforgeError, match="bad-perm"):
            region_for_transpose([2, 3], (0, 0))
        with pytest.raises(TinyforgeError, match="bad-perm"):
            region_for_transpose([2], (0,))


class TestSlice:
    def test_interior_2d(self):
        shape = (4, 6)
        regions = region_for_slice(shape, (1, 2), (2, 3))
        got = run(shape, regions, 6)
        want = np.arange(24).reshape(shape)[1:3, 2:5].reshape(-1)
        assert np.array_equal(got, want)

    def test_full_slice_is_whole_copy(self):
        regions = region_for_slice((3, 4), (0, 0), (3, 4))
        assert move_count(regions) == 12
        assert np.array_equal(run((3, 4), regions, 12), np.arange(12))

    def test_out_of_range(self):
        with pytest.raises(TinyforgeError, match="bad-range"):
            region_for_slice((4, 4), (2, 0), (3, 4))


class TestConcat:
    def test_axis0(self):
        shapes = [(2, 3), (1, 3)]
        regions = region_for_concat(shapes, 0)
        src = np.concatenate([np.arange(6), 100 + np.arange(3)])
        dst = np.full(9, -1, dtype=np.int64)
        # inputs are laid out back to back in one source buffer
        apply_regions(src[:6], regions[:1], dst)
        apply_regions(src[6:], regions[1:], dst)
        want = np.concatenate(
            [np.arange(6).reshape(2, 3), (100 + np.arange(3)).reshape(1, 3)]
        ).reshape(-1)
        assert np.array_equal(dst, want)

    def test_axis1_matches_numpy(self):
        a = np.arange(6).reshape(2, 3)
        b = 50 + np.arange(4).reshape(2, 2)
        regions = region_for_concat([a.shape, b.shape], 1)
        dst = np.full(10, -1, dtype=np.int64)
        apply_regions(a.reshape(-1), regions[:1], dst)
        apply_regions(b.reshape(-1), regions[1:], dst)
        assert np.array_equal(dst, np.concatenate([a, b], axis=1).reshape(-1))

    def test_one_region_per_input(self):
        regions = region_for_concat([(2, 2)] * 3, 0)
        assert len(regions) == 3
        assert move_count(regions) == 12

    def test_bad_shapes(self):
        with pytest.raises(TinyforgeError, match="bad-range"):
            region_for_concat([(2, 3), (2, 4)], 0)


class TestGather:
    def test_matches_numpy(self):
        shape = (5, 4)
        idx = [4, 0, 2, 2]
        got = run(shape, region_for_gather(shape, idx), 16)
        want = np.arange(20).reshape(shape)[idx].reshape(-1)
        assert np.array_equal(got, want)

    def test_run_merging(self):
        # [1,2,3] is one consecutive run -> one Region
        assert len(region_for_gather((6, 8), [1, 2, 3])) == 1
        assert len(region_for_gather((6, 8), [1, 3, 2])) == 3

    def test_bad_index(self):
        with pytest.raises(TinyforgeError, match="bad-range"):
            region_for_gather((3, 2), [3])


class TestApply:
    def test_bounds_checked(self):
        r = flat_copy(4, src_offset=2)
        with pytest.raises(TinyforgeError, match="region-oob"):
            apply_regions(np.arange(5), [r], np.zeros(4, dtype=np.int64))

    def test_untouched_destination_persists(self):
        dst = np.full(4, 9, dtype=np.int64)
        apply_regions(np.arange(2), [flat_copy(2)], dst)
        assert list(dst) == [0, 1, 9, 9]

    def test_bytes_form(self):
        src = np.arange(6, dtype=np.float32).tobytes()
        dst = bytearray(6 * 4)
        apply_regions_bytes(src, region_for_transpose((2, 3), (1, 0)), dst, 4)
        got = np.frombuffer(bytes(dst), dtype=np.float32)
        assert np.array_equal(got, np.arange(6, dtype=np.float32).reshape(2, 3).T.reshape(-1))


def check_fusion(shape, producers, consumers, out_size):
    """Fused regions must move bytes identically to the two-hop pipeline."""
    n = int(np.prod(shape))
    src = np.arange(n, dtype=np.int64)
    inter_size = max(int(r.dst_addrs().max()) for r in producers) + 1
    inter = np.full(inter_size, -1, dtype=np.int64)
    apply_regions(src, producers, inter)
    want = np.full(out_size, -1, dtype=np.int64)
    apply_regions(inter, consumers, want)
    fused, ok = fuse_regions(producers, consumers)
    got = np.full(out_size, -1, dtype=np.int64)
    if ok:
        apply_regions(src, fused, got)
    else:
        inter2 = np.full(inter_size, -1, dtype=np.int64)
        apply_regions(src, producers, inter2)
        apply_regions(inter2, consumers, got)
    assert np.array_equal(got, want)
    return fused, ok


class TestFusion:
    def test_transpose_of_transpose_is_flat_copy(self):
        shape = (4, 6)
        p = region_for_transpose(shape, (1, 0))
        c = region_for_transpose((6, 4), (1, 0))
        fused, ok = check_fusion(shape, p, c, 24)
        assert ok and fused == [flat_copy(24)]
        assert move_count(fused) == 24

    def test_slice_of_transpose(self):
        shape = (4, 6)
        p = region_for_transpose(shape, (1, 0))
        c = region_for_slice((6, 4), (1, 1), (2, 2))
        fused, ok = check_fusion(shape, p, c, 4)
        assert ok and len(fused) == 1

    def test_transpose_of_slice(self):
        shape = (5, 5)
        p = region_for_slice(shape, (1, 0), (3, 4))
        c = region_for_transpose((3, 4), (1, 0))
        fused, ok = check_fusion(shape, p, c, 12)
        assert ok

    def test_gather_consumer_fuses_per_region(self):
        shape = (4, 3)
        p = region_for_transpose(shape, (1, 0))
        c = region_for_gather((3, 4), [2, 0])
        fused, ok = check_fusion(shape, p, c, 8)
        assert ok and len(fused) == len(c)

    def test_uncovered_reads_fall_back(self):
        p = [flat_copy(4)]
        c = [flat_copy(6)]  # reads addresses the producer never wrote
        fused, ok = fuse_regions(p, c)
        assert not ok and fused == p + c

    def test_nonaffine_composition_falls_back(self):
        # producer scatters 0,1,2,3 -> 0,2,1,3; a flat consumer read is
        # then non-affine in the source
        p = [Region((4, 1, 1), 0, (1, 0, 0), 0, (1, 0, 0))]
        scatter = np.array([0, 2, 1, 3])
        p = [flat_copy(1, i, int(scatter[i])) for i in range(4)]
        c = [flat_copy(4)]
        fused, ok = fuse_regions(p, c)
        assert not ok
        # unfused pipeline still computes the right answer
        got = np.full(4, -1, dtype=np.int64)
        inter = np.full(4, -1, dtype=np.int64)
        apply_regions(np.arange(4), p, inter)
        apply_regions(inter, c, got)
        assert list(got) == [0, 2, 1, 3]

    def test_later_producer_wins_overlap(self):
        # overlapping producers leave a non-affine composite map; fusion
        # declines, and the two-stage pipeline honours write order
        p = [flat_copy(4), flat_copy(2, src_offset=0, dst_offset=2)]
        c = [flat_copy(4)]
        fused, ok = fuse_regions(p, c)
        assert not ok
        inter = np.full(4, -1, dtype=np.int64)
        got = np.full(4, -1, dtype=np.int64)
        apply_regions(np.arange(4), p, inter)
        apply_regions(inter, c, got)
        assert list(got) == [0, 1, 0, 1]

    @given(
        st.integers(2, 5),
        st.integers(2, 5),
        st.permutations([0, 1]),
        st.permutations([0, 1]),
    )
    @settings(max_examples=40, deadline=None)
    def test_random_transpose_chains(self, a, b, p1, p2):
        p = region_for_transpose((a, b), tuple(p1))
        mid = (b, a) if tuple(p1) == (1, 0) else (a, b)
        c = region_for_transpose(mid, tuple(p2))
        fused, ok = check_fusion((a, b), p, c, a * b)
        if ok:
            assert move_count(fused) <= move_count(p) + move_count(c)

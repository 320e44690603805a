import numpy as np
import pytest

from voxprior.errors import BinvoxFormatError, DimensionError
from voxprior.voxelgrid import (
    BinvoxMeta,
    ProbGrid,
    VoxelGrid,
    binarize,
    binvox_decode,
    binvox_encode,
    iou,
)


def grid_from_voxels(resolution, voxels):
    occ = np.zeros((resolution,) * 3, dtype=np.uint8)
    for x, y, z in voxels:
        occ[x, y, z] = 1
    return VoxelGrid(occ)


def brute_force_iou(a, b):
    """Triple-loop set counting, independent of the vectorized path."""
    inter = union = 0
    r = a.resolution
    for x in range(r):
        for y in range(r):
            for z in range(r):
                va, vb = a.occupancy[x, y, z], b.occupancy[x, y, z]
                if va and vb:
                    inter += 1
                if va or vb:
                    union += 1
    if union == 0:
        return 1.0
    return inter / union


class TestIou:
    def test_identical_nonempty(self):
        g = grid_from_voxels(4, [(0, 0, 0), (1, 2, 3)])
        assert iou(g, g) == 1.0

    def test_disjoint_nonempty(self):
        a = grid_from_voxels(4, [(0, 0, 0)])
        b = grid_from_voxels(4, [(1, 1, 1)])
        assert iou(a, b) == 0.0

    def test_half_overlap(self):
        # frozen from brute-force set counting: |inter|=1, |union|=2
        a = grid_from_voxels(2, [(0, 0, 0), (1, 0, 0)])
        b = grid_from_voxels(2, [(1, 0, 0)])
        assert iou(a, b) == 0.5

    def test_both_empty_is_one(self):
        a = VoxelGrid.empty(4)
        assert iou(a, VoxelGrid.empty(4)) == 1.0

    def test_resolution_mismatch(self):
        with pytest.raises(DimensionError):
            iou(VoxelGrid.empty(4), VoxelGrid.empty(8))

    def test_matches_brute_force_on_random_grids(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a = VoxelGrid((rng.random((4, 4, 4)) < 0.4).astype(np.uint8))
            b = VoxelGrid((rng.random((4, 4, 4)) < 0.4).astype(np.uint8))
            assert iou(a, b) == brute_force_iou(a, b)
            assert iou(a, b) == iou(b, a)
            assert 0.0 <= iou(a, b) <= 1.0
            assert iou(a, a) == 1.0


class TestBinarize:
    def test_all_high(self):
        p = ProbGrid(np.full((2, 2, 2), 0.9))
        assert binarize(p, 0.5).count() == 8

    def test_all_low(self):
        p = ProbGrid(np.full((2, 2, 2), 0.1))
        assert binarize(p, 0.5).count() == 0

    def test_boundary_is_inclusive(self):
        probs = np.zeros((2, 2, 2))
        probs[0, 0, 0] = 0.5
        probs[1, 0, 0] = 0.49
        g = binarize(ProbGrid(probs), 0.5)
        assert g.occupancy[0, 0, 0] == 1
        assert g.occupancy[1, 0, 0] == 0

    def test_threshold_out_of_range(self):
        p = ProbGrid(np.full((2, 2, 2), 0.5))
        for t in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                binarize(p, t)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        p = ProbGrid(rng.random((4, 4, 4)))
        lo = binarize(p, 0.3).occupancy
        hi = binarize(p, 0.7).occupancy
        # raising the threshold never adds voxels
        assert np.all(hi <= lo)


def make_binvox_bytes(dim, pairs, translate=b"0 0 0", scale=b"1"):
    header = b"#binvox 1\n"
    header += b"dim %d %d %d\n" % (dim, dim, dim)
    header += b"translate " + translate + b"\n"
    header += b"scale " + scale + b"\n"
    header += b"data\n"
    return header + bytes(b for pair in pairs for b in pair)


class TestBinvoxDecode:
    def test_full_minimal_file(self):
        data = make_binvox_bytes(2, [(1, 8)])
        grid, meta = binvox_decode(data)
        assert grid.resolution == 2
        assert grid.count() == 8
        assert meta.dims == (2, 2, 2)
        assert meta.translate == (0.0, 0.0, 0.0)
        assert meta.scale == 1.0

    def test_empty_minimal_file(self):
        grid, _ = binvox_decode(make_binvox_bytes(2, [(0, 8)]))
        assert grid.count() == 0

    def test_rle_sum_mismatch(self):
        with pytest.raises(BinvoxFormatError, match="sum to 9"):
            binvox_decode(make_binvox_bytes(2, [(1, 4), (0, 5)]))

    def test_bad_magic(self):
        with pytest.raises(BinvoxFormatError, match="magic"):
            binvox_decode(b"#voxbin 1\ndim 2 2 2\ndata\n")

    def test_bad_value_byte(self):
        err = None
        try:
            binvox_decode(make_binvox_bytes(2, [(1, 4), (7, 4)]))
        except BinvoxFormatError as e:
            err = e
        assert err is not None and err.offset is not None

    def test_axis_order_conversion(self):
        # one voxel at payload position 1: payload order is [x][z][y],
        # so flat index 1 is (x=0, z=0, y=1) -> internal (0, 1, 0)
        data = make_binvox_bytes(2, [(0, 1), (1, 1), (0, 6)])
        grid, _ = binvox_decode(data)
        assert grid.occupancy[0, 1, 0] == 1
        assert grid.count() == 1


class TestBinvoxRoundTrip:
    def test_empty_32(self):
        g = VoxelGrid.empty(32)
        out, meta = binvox_decode(binvox_encode(g))
        assert out == g
        assert meta.dims == (32, 32, 32)

    def test_full_32_pair_count(self):
        g = VoxelGrid.full(32)
        data = binvox_encode(g)
        out, _ = binvox_decode(data)
        assert out == g
        payload = data[data.index(b"data\n") + 5 :]
        # ceil(32768 / 255) RLE pairs
        assert len(payload) // 2 == -(-(32 ** 3) // 255)

    def test_random_grids_bit_exact(self):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            g = VoxelGrid((rng.random((8, 8, 8)) < rng.random()).astype(np.uint8))
            meta = BinvoxMeta((8, 8, 8), translate=(0.5, -1.25, 3.0), scale=2.5)
            out, meta2 = binvox_decode(binvox_encode(g, meta))
            assert out == g
            assert meta2 == meta

    def test_meta_dims_must_match(self):
        with pytest.raises(DimensionError):
            binvox_encode(VoxelGrid.empty(4), BinvoxMeta((8, 8, 8)))


class TestGridTypes:
    def test_grid_must_be_cubic(self):
        with pytest.raises(DimensionError):
            VoxelGrid(np.zeros((2, 2, 3), dtype=np.uint8))

    def test_grid_values_binary(self):
        with pytest.raises(ValueError):
            VoxelGrid(np.full((2, 2, 2), 3, dtype=np.uint8))

    def test_probgrid_range(self):
        with pytest.raises(ValueError):
            ProbGrid(np.full((2, 2, 2), 1.5))

    def test_meta_non_cubic_rejected(self):
        with pytest.raises(BinvoxFormatError):
            BinvoxMeta((2, 2, 3))

import math

import numpy as np
import pytest

import voxdet.voxelizer as vox
from voxdet.errors import InputError, InternalError
from voxdet.voxelizer import (
    VoxelGrid,
    quantize,
    quantize_points,
    voxel_cell,
    voxel_index,
    voxelize,
    voxelize_serial,
)

WAYSIDE_GRID = VoxelGrid((-75.2, -75.2, -2.0), (75.2, 75.2, 4.0), (0.1, 0.1, 0.15))


def small_grid():
    return VoxelGrid((-2.0, -2.0, -1.0), (2.0, 2.0, 1.0), (0.5, 0.5, 0.5))


def dict_oracle(points, grid):
    """Independent hash-map oracle: floor-quantize, group, average."""
    acc = {}
    order = []
    for row in np.asarray(points, dtype=np.float64):
        x, y, z = row[:3]
        ok = all(lo <= c < hi for c, lo, hi in zip((x, y, z), grid.range_min, grid.range_max))
        if not ok:
            continue
        cell = tuple(
            min(int(math.floor((c - lo) / g)), d - 1)
            for c, lo, g, d in zip((x, y, z), grid.range_min, grid.cell, grid.dims)
        )
        if cell not in acc:
            acc[cell] = [np.zeros(row.shape[0]), 0]
            order.append(cell)
        acc[cell][0] += row
        acc[cell][1] += 1
    coords = np.array(order, dtype=np.int64).reshape(-1, 3)
    counts = np.array([acc[c][1] for c in order], dtype=np.int64)
    feats = np.array([acc[c][0] / acc[c][1] for c in order]).reshape(-1, points.shape[1])
    return coords, feats, counts


class TestVoxelGrid:
    def test_dims_from_ranges(self):
        assert WAYSIDE_GRID.dims == (1504, 1504, 40)

    def test_full_model_grid_dims(self):
        grid = VoxelGrid((-80.0, -76.16, -2.0), (80.0, 76.16, 4.0), (0.1, 0.08, 0.15))
        assert grid.dims == (1600, 1904, 40)

    def test_rejects_non_positive_cell(self):
        with pytest.raises(InputError):
            VoxelGrid((0, 0, 0), (1, 1, 1), (0.5, 0.0, 0.5))

    def test_rejects_inverted_range(self):
        with pytest.raises(InputError):
            VoxelGrid((1, 0, 0), (0, 1, 1), (0.5, 0.5, 0.5))

    def test_rejects_misaligned_range(self):
        with pytest.raises(InputError):
            VoxelGrid((0, 0, 0), (1.13, 1, 1), (0.5, 0.5, 0.5))


class TestQuantize:
    def test_point_at_range_min_is_cell_zero(self):
        assert quantize((-75.2, -75.2, -2.0), WAYSIDE_GRID) == (0, 0, 0)

    def test_hand_computed_cell(self):
        # floor((0.05 + 75.2) / 0.1) = floor(752.5) = 752
        cell = quantize((0.05, -75.2, 0.0), WAYSIDE_GRID)
        assert cell[0] == 752

    def test_point_at_range_max_is_out_of_range(self):
        assert quantize((75.2, 0.0, 0.0), WAYSIDE_GRID) is None
        assert quantize((0.0, 0.0, 4.0), WAYSIDE_GRID) is None

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-80, 80, (500, 3))
        cells, ok = quantize_points(pts, WAYSIDE_GRID)
        for row, cell, valid in zip(pts, cells, ok):
            scalar = quantize(row, WAYSIDE_GRID)
            if scalar is None:
                assert not valid
            else:
                assert valid and tuple(cell) == scalar


class TestVoxelIndex:
    def test_origin_is_zero(self):
        assert voxel_index((0, 0, 0), small_grid()) == 0

    def test_x_major_layout(self):
        assert voxel_index((1, 0, 0), small_grid()) == 1

    def test_hand_computed_last_cell(self):
        grid = VoxelGrid((0, 0, 0), (4, 3, 2), (1.0, 1.0, 1.0))
        assert grid.dims == (4, 3, 2)
        assert voxel_index((3, 2, 1), grid) == 23 == grid.num_cells - 1

    def test_bijective_over_grid(self):
        grid = VoxelGrid((0, 0, 0), (4, 3, 2), (1.0, 1.0, 1.0))
        seen = set()
        for cz in range(2):
            for cy in range(3):
                for cx in range(4):
                    idx = voxel_index((cx, cy, cz), grid)
                    assert voxel_cell(idx, grid) == (cx, cy, cz)
                    seen.add(idx)
        assert seen == set(range(grid.num_cells))

    def test_out_of_dims_is_internal_error(self):
        with pytest.raises(InternalError):
            voxel_index((4, 0, 0), VoxelGrid((0, 0, 0), (4, 3, 2), (1, 1, 1)))
        with pytest.raises(InternalError):
            voxel_cell(24, VoxelGrid((0, 0, 0), (4, 3, 2), (1, 1, 1)))


class TestVoxelize:
    def test_two_points_one_cell_mean(self):
        pts = np.array([
            [0.1, 0.1, 0.1, 1.0, 1.0, 1.0],
            [0.2, 0.2, 0.2, 3.0, 5.0, 7.0],
        ])
        out = voxelize(pts, small_grid())
        assert len(out) == 1
        assert out.counts[0] == 2
        np.testing.assert_allclose(out.features[0, 3:], [2.0, 3.0, 4.0])

    def test_empty_cloud(self):
        out = voxelize(np.zeros((0, 6)), small_grid())
        assert len(out) == 0
        assert out.features.shape == (0, 6)

    def test_matches_dict_oracle(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-2.5, 2.5, (10_000, 6))
        out = voxelize(pts, small_grid())
        coords, feats, counts = dict_oracle(pts, small_grid())
        np.testing.assert_array_equal(out.coords, coords)
        np.testing.assert_array_equal(out.counts, counts)
        np.testing.assert_allclose(out.features, feats, rtol=1e-6)

    def test_counts_sum_to_in_range_points(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-3, 3, (5000, 6))
        _, ok = quantize_points(pts, small_grid())
        out = voxelize(pts, small_grid())
        assert out.counts.sum() == ok.sum()
        assert out.dropped_points == 0 and out.dropped_voxels == 0

    def test_permutation_invariant_sets_when_uncapped(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-2, 2, (3000, 6))
        a = voxelize(pts, small_grid())
        b = voxelize(pts[rng.permutation(pts.shape[0])], small_grid())

        def as_map(v):
            return {tuple(c): (int(n), f) for c, n, f in zip(v.coords, v.counts, v.features)}

        ma, mb = as_map(a), as_map(b)
        assert ma.keys() == mb.keys()
        for key in ma:
            assert ma[key][0] == mb[key][0]
            np.testing.assert_allclose(ma[key][1], mb[key][1], rtol=1e-6)

    def test_coords_roundtrip_linear_index(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-2, 2, (1000, 6))
        out = voxelize(pts, small_grid())
        for c in out.coords:
            assert voxel_cell(voxel_index(tuple(c), small_grid()), small_grid()) == tuple(c)

    def test_first_appearance_order(self):
        pts = np.array([
            [1.6, 1.6, 0.6, 0, 0, 0],   # cell A
            [-1.9, -1.9, -0.9, 0, 0, 0],  # cell B
            [1.7, 1.7, 0.7, 0, 0, 0],   # cell A again
        ])
        out = voxelize(pts, small_grid())
        assert len(out) == 2
        assert tuple(out.coords[0]) == quantize(pts[0, :3], small_grid())
        assert tuple(out.coords[1]) == quantize(pts[1, :3], small_grid())

    def test_point_cap_keeps_first_m_in_input_order(self):
        pts = np.zeros((3, 6))
        pts[:, :3] = 0.1  # all in one cell
        pts[:, 3] = [10.0, 20.0, 99.0]
        out = voxelize(pts, small_grid(), max_points_per_voxel=2)
        assert out.counts[0] == 2
        assert out.features[0, 3] == pytest.approx(15.0)
        assert out.dropped_points == 1

    def test_voxel_cap_keeps_first_voxels(self):
        pts = np.array([
            [0.1, 0.1, 0.1, 1, 0, 0],
            [1.6, 1.6, 0.6, 2, 0, 0],
            [-1.9, 0.1, 0.1, 3, 0, 0],
            [0.2, 0.1, 0.1, 5, 0, 0],  # first voxel again, still accepted
        ])
        out = voxelize(pts, small_grid(), max_voxels=2)
        assert len(out) == 2
        assert out.dropped_voxels == 1
        assert out.dropped_points == 1
        assert out.counts[0] == 2  # late point of an accepted voxel still counts
        assert out.features[0, 3] == pytest.approx(3.0)

    def test_all_feature_dims_averaged_including_dt(self):
        pts = np.zeros((2, 6))
        pts[:, :3] = 0.1
        pts[:, 5] = [0.0, 0.1]
        out = voxelize(pts, small_grid())
        assert out.features[0, 5] == pytest.approx(0.05)

    def test_serial_reference_agrees(self):
        rng = np.random.default_rng(5)
        for seed in range(10):
            pts = np.random.default_rng(seed).uniform(-2.4, 2.4, (800, 6))
            caps = [(None, None), (4, None), (None, 16), (3, 8)][seed % 4]
            a = voxelize(pts, small_grid(), *caps)
            b = voxelize_serial(pts, small_grid(), *caps)
            np.testing.assert_array_equal(a.coords, b.coords)
            np.testing.assert_array_equal(a.counts, b.counts)
            np.testing.assert_allclose(a.features, b.features, rtol=1e-12)
            assert a.dropped_points == b.dropped_points
            assert a.dropped_voxels == b.dropped_voxels

    def test_parallel_matches_serial(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform(-2.4, 2.4, (6000, 6))
        ref = voxelize_serial(pts, small_grid())
        for workers in (2, 3, 8):
            par = voxelize(pts, small_grid(), workers=workers)
            np.testing.assert_array_equal(par.coords, ref.coords)
            np.testing.assert_array_equal(par.counts, ref.counts)
            np.testing.assert_allclose(par.features, ref.features, rtol=1e-5)

    def test_dense_and_keyed_paths_identical(self, monkeypatch):
        rng = np.random.default_rng(7)
        pts = rng.uniform(-2.4, 2.4, (4000, 6))
        dense = voxelize(pts, small_grid())
        monkeypatch.setattr(vox, "DENSE_CELL_BUDGET", 0)
        keyed = voxelize(pts, small_grid())
        np.testing.assert_array_equal(dense.coords, keyed.coords)
        np.testing.assert_array_equal(dense.counts, keyed.counts)
        np.testing.assert_array_equal(dense.features, keyed.features)

    def test_rejects_bad_caps(self):
        with pytest.raises(InputError):
            voxelize(np.zeros((1, 6)), small_grid(), max_points_per_voxel=0)
        with pytest.raises(InputError):
            voxelize(np.zeros((1, 6)), small_grid(), max_voxels=0)

import numpy as np
import pytest

from voxdet.errors import InputError
from voxdet.ingest import convert_range_records, densify, filter_range, validate_pose
from voxdet.voxelizer import VoxelGrid


def record(rng=10.0, intensity=0.5, elongation=0.2, x=1.0, y=2.0, z=0.3):
    return [rng, intensity, elongation, x, y, z]


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    mat = np.eye(4)
    mat[:2, :2] = [[c, -s], [s, c]]
    return mat


def translation(tx, ty, tz):
    mat = np.eye(4)
    mat[:3, 3] = (tx, ty, tz)
    return mat


class TestConvertRangeRecords:
    def test_invalid_range_excluded(self):
        out = convert_range_records([record(rng=-1.0), record(rng=0.0), record(rng=5.0)])
        assert out.shape == (1, 6)

    def test_intensity_below_clamp_kept(self):
        out = convert_range_records([record(intensity=0.7)])
        assert out[0, 3] == 0.7

    def test_intensity_clamped_at_limit(self):
        out = convert_range_records([record(intensity=3.2)])
        assert out[0, 3] == 1.5

    def test_layout_and_dt(self):
        out = convert_range_records([record(x=1.0, y=2.0, z=3.0, elongation=0.4)])
        np.testing.assert_allclose(out[0], [1.0, 2.0, 3.0, 0.5, 0.4, 0.0])

    def test_order_preserved(self):
        recs = [record(x=float(i)) for i in range(5)]
        recs[2][0] = -1.0  # invalidate the middle record
        out = convert_range_records(recs)
        np.testing.assert_allclose(out[:, 0], [0, 1, 3, 4])

    def test_empty_input(self):
        assert convert_range_records([]).shape == (0, 6)

    def test_rejects_bad_clamp(self):
        with pytest.raises(InputError):
            convert_range_records([record()], clamp=0.0)


class TestDensify:
    def current(self):
        pts = np.zeros((2, 6))
        pts[:, 0] = [1.0, 2.0]
        return pts

    def previous(self):
        pts = np.zeros((3, 6))
        pts[:, 0] = [1.0, 0.0, -1.0]
        pts[:, 3] = 0.9
        return pts

    def test_identity_poses_concatenate_and_stamp(self):
        out = densify(self.current(), self.previous(), np.eye(4), np.eye(4), 0.1)
        assert out.shape == (5, 6)
        np.testing.assert_allclose(out[:2, 5], 0.0)
        np.testing.assert_allclose(out[2:, 5], 0.1)
        np.testing.assert_allclose(out[2:, :3], self.previous()[:, :3])
        np.testing.assert_allclose(out[2:, 3], 0.9)  # features carried over

    def test_pure_translation(self):
        out = densify(self.current(), self.previous(), np.eye(4), translation(1, 0, 0), 0.1)
        np.testing.assert_allclose(out[2:, 0], self.previous()[:, 0] + 1.0)

    def test_rotated_current_frame(self):
        # pose_cur = R_z(pi/2): previous point (1, 0, 0) lands at (0, -1, 0)
        prev = np.zeros((1, 6))
        prev[0, 0] = 1.0
        out = densify(np.zeros((0, 6)), prev, rot_z(np.pi / 2), np.eye(4), 0.1)
        np.testing.assert_allclose(out[0, :3], [0.0, -1.0, 0.0], atol=1e-12)

    def test_length_exactness(self):
        rng = np.random.default_rng(0)
        cur = rng.normal(size=(100, 6))
        prev = rng.normal(size=(70, 6))
        out = densify(cur, prev, rot_z(0.3), translation(1, 2, 3), 0.05)
        assert out.shape[0] == 170

    def test_round_trip_recovers_previous(self):
        rng = np.random.default_rng(1)
        prev = rng.normal(size=(50, 6))
        pose_cur = rot_z(0.7) @ translation(2, -1, 0.5)
        pose_prev = rot_z(-1.1) @ translation(-3, 4, 1.0)
        out = densify(np.zeros((0, 6)), prev, pose_cur, pose_prev, 0.1)
        rel = np.linalg.inv(pose_cur) @ pose_prev
        back = (out[:, :3] - rel[:3, 3]) @ np.linalg.inv(rel[:3, :3]).T
        np.testing.assert_allclose(back, prev[:, :3], atol=1e-9)

    def test_rejects_non_positive_lag(self):
        with pytest.raises(InputError):
            densify(self.current(), self.previous(), np.eye(4), np.eye(4), 0.0)

    def test_rejects_corrupt_pose(self):
        bad = np.eye(4)
        bad[3, 0] = 1.0
        with pytest.raises(InputError):
            densify(self.current(), self.previous(), bad, np.eye(4), 0.1)
        skewed = np.eye(4)
        skewed[0, 1] = 0.5  # rotation block no longer orthonormal
        with pytest.raises(InputError):
            densify(self.current(), self.previous(), np.eye(4), skewed, 0.1)

    def test_validate_pose_shape(self):
        with pytest.raises(InputError):
            validate_pose(np.eye(3))


class TestFilterRange:
    ROI = VoxelGrid((-75.2, -75.2, -2.0), (75.2, 75.2, 4.0), (0.1, 0.1, 0.15))

    def test_point_at_min_kept(self):
        pts = np.zeros((1, 6))
        pts[0, :3] = (-75.2, -75.2, -2.0)
        assert filter_range(pts, self.ROI).shape[0] == 1

    def test_point_at_max_dropped(self):
        pts = np.zeros((1, 6))
        pts[0, :3] = (75.2, 0.0, 0.0)
        assert filter_range(pts, self.ROI).shape[0] == 0

    def test_matches_per_point_scan(self):
        rng = np.random.default_rng(2)
        pts = np.zeros((5000, 6))
        pts[:, :3] = rng.uniform(-100, 100, (5000, 3))
        got = filter_range(pts, self.ROI)
        expected = [
            row for row in pts
            if all(lo <= c < hi for c, lo, hi in
                   zip(row[:3], self.ROI.range_min, self.ROI.range_max))
        ]
        np.testing.assert_array_equal(got, np.array(expected))

    def test_empty(self):
        assert filter_range(np.zeros((0, 6)), self.ROI).shape == (0, 6)

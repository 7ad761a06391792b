"""Range-record conversion, frame densification and ROI cropping.

Raw sensor rows are (range, intensity, elongation, x, y, z); converted
point rows are (x, y, z, intensity_clamp, elongation, dt) where dt is the
time lag against the current frame (0 for current-frame points). All
operations are pure and keep input ordering, so callers may shard the
per-point work freely.
"""
from __future__ import annotations

import numpy as np

from .errors import InputError
from .voxelizer import POINT_DIM, VoxelGrid

INTENSITY_CLAMP = 1.5

# Sweep interval of a 10 Hz scanner; default time lag of the previous frame.
DEFAULT_FRAME_LAG = 0.1

RANGE_RECORD_DIM = 6


def convert_range_records(records, clamp: float = INTENSITY_CLAMP) -> np.ndarray:
    """Turn (N, 6) range records into point rows, dropping invalid returns.

    A record is valid iff its range is strictly positive. Intensity is
    clamped at ``clamp``; dt is stamped 0. Output order matches the input
    order of the valid records.
    """
    if clamp <= 0:
        raise InputError(f"intensity clamp must be positive, got {clamp}")
    rec = np.asarray(records, dtype=np.float64)
    if rec.size == 0:
        return np.zeros((0, POINT_DIM))
    if rec.ndim != 2 or rec.shape[1] != RANGE_RECORD_DIM:
        raise InputError(f"range records must be (N, {RANGE_RECORD_DIM}), got {rec.shape}")
    rec = rec[rec[:, 0] > 0]
    out = np.empty((rec.shape[0], POINT_DIM))
    out[:, 0:3] = rec[:, 3:6]
    out[:, 3] = np.minimum(rec[:, 1], clamp)
    out[:, 4] = rec[:, 2]
    out[:, 5] = 0.0
    return out


def validate_pose(pose) -> np.ndarray:
    """Check a 4x4 rigid transform: unit bottom row, orthonormal rotation."""
    mat = np.asarray(pose, dtype=np.float64)
    if mat.shape != (4, 4):
        raise InputError(f"pose must be a 4x4 matrix, got shape {mat.shape}")
    if not np.array_equal(mat[3], [0.0, 0.0, 0.0, 1.0]):
        raise InputError("corrupt pose: bottom row must be (0, 0, 0, 1)")
    rot = mat[:3, :3]
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
        raise InputError("corrupt pose: rotation block is not orthonormal")
    return mat


def densify(current, previous, pose_cur, pose_prev, dt_prev: float = DEFAULT_FRAME_LAG) -> np.ndarray:
    """Merge the previous sweep into the current frame.

    Previous points are mapped by pose_cur^-1 @ pose_prev, their dt column
    set to ``dt_prev``, and appended after the current points.
    """
    if dt_prev <= 0:
        raise InputError(f"previous-frame time lag must be positive, got {dt_prev}")
    cur = np.asarray(current, dtype=np.float64).reshape(-1, POINT_DIM)
    prev = np.asarray(previous, dtype=np.float64).reshape(-1, POINT_DIM)
    mat_cur = validate_pose(pose_cur)
    mat_prev = validate_pose(pose_prev)
    try:
        rel = np.linalg.inv(mat_cur) @ mat_prev
    except np.linalg.LinAlgError as exc:
        raise InputError(f"corrupt pose: not invertible ({exc})") from exc
    moved = prev.copy()
    moved[:, 0:3] = prev[:, 0:3] @ rel[:3, :3].T + rel[:3, 3]
    moved[:, 5] = dt_prev
    return np.concatenate([cur, moved], axis=0)


def filter_range(points, roi: VoxelGrid) -> np.ndarray:
    """Keep points with min <= coord < max on all three axes, order kept."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, pts.shape[1] if pts.ndim == 2 else POINT_DIM)
    lo = np.array(roi.range_min)
    hi = np.array(roi.range_max)
    keep = np.all((pts[:, :3] >= lo) & (pts[:, :3] < hi), axis=1)
    return pts[keep]

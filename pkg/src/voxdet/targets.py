"""Dense training-target encoding for the anchor-free detection head.

Seven per-cell target groups are produced on the output-stride grid:
class heatmaps, a corner+center keypoint heatmap, local center offset,
z location, log box size, (sin, cos) yaw and a regression mask. The IoU
regression target is a scalar encoding handled by
``encode_iou_target`` / ``decode_iou_target``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import Box3D, box_corners_bev
from .voxelizer import VoxelGrid


@dataclass(frozen=True)
class HeadConfig:
    """Head-grid geometry and splat parameters.

    One output cell covers ``out_stride`` voxel cells in x and y. The
    Gaussian radius rule keeps any peak shifted within the radius above
    ``gaussian_overlap`` IoU with the true footprint.
    """

    out_stride: int = 8
    num_classes: int = 3
    min_radius_center: int = 2
    min_radius_keypoint: int = 1
    gaussian_overlap: float = 0.1
    max_objects: int = 500

    def __post_init__(self):
        if self.out_stride < 1:
            raise InputError(f"out_stride must be >= 1, got {self.out_stride}")
        if self.min_radius_center < 1 or self.min_radius_keypoint < 1:
            raise InputError("minimum Gaussian radii must be >= 1")
        if not 0.0 < self.gaussian_overlap < 1.0:
            raise InputError(f"gaussian_overlap must be in (0, 1), got {self.gaussian_overlap}")

    def map_shape(self, grid: VoxelGrid) -> tuple[int, int]:
        """(H, W) of the output maps for a voxel grid."""
        w = -(-grid.dims[0] // self.out_stride)
        h = -(-grid.dims[1] // self.out_stride)
        return h, w


@dataclass
class TargetSet:
    """Dense targets plus bookkeeping for the encoded foreground objects."""

    heatmap: np.ndarray  # (C, H, W) in [0, 1]
    keypoint_heatmap: np.ndarray  # (C, H, W)
    offset: np.ndarray  # (2, H, W), cell fractions, (u, v)
    z: np.ndarray  # (1, H, W) meters
    size: np.ndarray  # (3, H, W) log meters (l, w, h)
    yaw: np.ndarray  # (2, H, W), (sin, cos)
    reg_mask: np.ndarray  # (H, W) bool, true at encoded center cells
    obj_index: list = field(default_factory=list)  # [((u, v), box position)]
    skipped_out_of_range: int = 0
    skipped_max_objects: int = 0
    center_collisions: int = 0


def _radius_candidates(extent, overlap):
    """Positive roots of the three corner-shift overlap quadratics."""
    h, w = float(extent[0]), float(extent[1])
    a1 = 1.0
    b1 = h + w
    c1 = w * h * (1.0 - overlap) / (1.0 + overlap)
    r1 = (b1 + math.sqrt(b1 * b1 - 4.0 * a1 * c1)) / (2.0 * a1)

    a2 = 4.0
    b2 = 2.0 * (h + w)
    c2 = (1.0 - overlap) * w * h
    r2 = (b2 + math.sqrt(b2 * b2 - 4.0 * a2 * c2)) / (2.0 * a2)

    a3 = 4.0 * overlap
    b3 = -2.0 * overlap * (h + w)
    c3 = (overlap - 1.0) * w * h
    r3 = (b3 + math.sqrt(b3 * b3 - 4.0 * a3 * c3)) / (2.0 * a3)
    return r1, r2, r3


def gaussian_radius(bev_extent, overlap: float, min_radius: float = 0.0) -> float:
    """Smallest of the three quadratic-root radii, clamped below.

    ``bev_extent`` is the (length, width) footprint in output cells.
    """
    if bev_extent[0] <= 0 or bev_extent[1] <= 0:
        raise InputError(f"box extent must be positive, got {bev_extent}")
    if not 0.0 < overlap < 1.0:
        raise InputError(f"overlap must be in (0, 1), got {overlap}")
    return max(min_radius, min(_radius_candidates(bev_extent, overlap)))


def draw_gaussian(channel: np.ndarray, center_cell, radius: int) -> np.ndarray:
    """Max-merge a Gaussian splat of the given radius into a heatmap channel.

    sigma is tied to the splat diameter, (2 r + 1) / 6; the (2r+1)^2
    neighborhood is clipped to the map bounds. Returns the channel.
    """
    r = int(radius)
    u, v = int(center_cell[0]), int(center_cell[1])
    h, w = channel.shape
    if r < 1:
        raise InputError(f"splat radius must be >= 1, got {radius}")
    if not (0 <= u < w and 0 <= v < h):
        raise InputError(f"splat center {center_cell} outside {w}x{h} map")
    sigma = (2.0 * r + 1.0) / 6.0
    ax = np.arange(-r, r + 1, dtype=np.float64)
    patch = np.exp(-(ax[None, :] ** 2 + ax[:, None] ** 2) / (2.0 * sigma * sigma))
    left, right = min(u, r), min(w - u, r + 1)
    top, bottom = min(v, r), min(h - v, r + 1)
    view = channel[v - top:v + bottom, u - left:u + right]
    np.maximum(view, patch[r - top:r + bottom, r - left:r + right], out=view)
    return channel


def encode_iou_target(iou: float) -> float:
    """Map an IoU in [0, 1] to the regression range [-1, 1]."""
    if not 0.0 <= iou <= 1.0:
        raise InputError(f"IoU must be within [0, 1], got {iou}")
    return 2.0 * (iou - 0.5)


def decode_iou_target(encoded):
    """Inverse of :func:`encode_iou_target`; accepts scalars or arrays."""
    return np.asarray(encoded, dtype=np.float64) / 2.0 + 0.5


def _center_cell(box: Box3D, grid: VoxelGrid, cfg: HeadConfig):
    sx = grid.cell[0] * cfg.out_stride
    sy = grid.cell[1] * cfg.out_stride
    fu = (box.cx - grid.range_min[0]) / sx
    fv = (box.cy - grid.range_min[1]) / sy
    return fu, fv, int(math.floor(fu)), int(math.floor(fv))


def _in_detection_range(box: Box3D, grid: VoxelGrid) -> bool:
    for c, lo, hi in zip((box.cx, box.cy, box.cz), grid.range_min, grid.range_max):
        if not lo <= c < hi:
            return False
    return True


def encode_targets(boxes, grid: VoxelGrid, cfg: HeadConfig) -> TargetSet:
    """Encode ground-truth boxes into dense head targets.

    Boxes whose center falls outside the detection range produce no
    targets; past ``cfg.max_objects`` encoded objects the rest are
    skipped. Regression targets exist only at the single peak cell
    (regression radius 0); when two objects land on the same cell the
    later one wins and the collision is counted.
    """
    h, w = cfg.map_shape(grid)
    c = cfg.num_classes
    ts = TargetSet(
        heatmap=np.zeros((c, h, w)),
        keypoint_heatmap=np.zeros((c, h, w)),
        offset=np.zeros((2, h, w)),
        z=np.zeros((1, h, w)),
        size=np.zeros((3, h, w)),
        yaw=np.zeros((2, h, w)),
        reg_mask=np.zeros((h, w), dtype=bool),
    )
    sx = grid.cell[0] * cfg.out_stride
    sy = grid.cell[1] * cfg.out_stride
    encoded = 0
    for pos, box in enumerate(boxes):
        if not _in_detection_range(box, grid):
            ts.skipped_out_of_range += 1
            continue
        if encoded >= cfg.max_objects:
            ts.skipped_max_objects += 1
            continue
        fu, fv, u, v = _center_cell(box, grid, cfg)
        u = min(u, w - 1)
        v = min(v, h - 1)

        raw = min(_radius_candidates((box.l / sx, box.w / sy), cfg.gaussian_overlap))
        radius = max(cfg.min_radius_center, int(raw))
        draw_gaussian(ts.heatmap[box.class_id], (u, v), radius)

        kp_radius = max(cfg.min_radius_keypoint, int(raw / 2.0))
        draw_gaussian(ts.keypoint_heatmap[box.class_id], (u, v), kp_radius)
        for corner in box_corners_bev(box).vertices:
            cu = int(math.floor((corner[0] - grid.range_min[0]) / sx))
            cv = int(math.floor((corner[1] - grid.range_min[1]) / sy))
            if 0 <= cu < w and 0 <= cv < h:
                draw_gaussian(ts.keypoint_heatmap[box.class_id], (cu, cv), kp_radius)

        if ts.reg_mask[v, u]:
            ts.center_collisions += 1
        ts.offset[0, v, u] = fu - u
        ts.offset[1, v, u] = fv - v
        ts.z[0, v, u] = box.cz
        ts.size[0, v, u] = math.log(box.l)
        ts.size[1, v, u] = math.log(box.w)
        ts.size[2, v, u] = math.log(box.h)
        ts.yaw[0, v, u] = math.sin(box.yaw)
        ts.yaw[1, v, u] = math.cos(box.yaw)
        ts.reg_mask[v, u] = True
        ts.obj_index.append(((u, v), pos))
        encoded += 1
    return ts

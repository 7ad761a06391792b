"""Oriented- and axis-aligned-box geometry kernels.

Boxes live in a right-handed frame (x forward, y left, z up), are centered
at (cx, cy, cz) with size (l, w, h) and rotated about the z-axis by yaw.
BEV is the top-down projection onto the x-y plane. The rotated-overlap
kernels are compiled with numba because NMS and evaluation call them for
every candidate pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numba
import numpy as np

from .errors import InputError

TWO_PI = 2.0 * math.pi

# Intersections with area below this are treated as empty so collinear /
# corner-touching boxes report IoU 0 deterministically.
DEGENERATE_AREA = 1e-12

# Slack (meters, in the box frame) for face-inclusive containment tests;
# absorbs the rotation round-off of points lying exactly on a face.
_FACE_EPS = 1e-9


class ClassId(IntEnum):
    VEHICLE = 0
    PEDESTRIAN = 1
    CYCLIST = 2


def wrap_angle(yaw: float) -> float:
    """Wrap an angle to [-pi, pi]; in-range values pass through unchanged."""
    yaw = float(yaw)
    if -math.pi <= yaw <= math.pi:
        return yaw
    return math.remainder(yaw, TWO_PI)


@dataclass
class Box3D:
    """7-DoF oriented box with a class label and optional detection score.

    Sizes must be strictly positive; yaw is stored wrapped to [-pi, pi].
    """

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float
    class_id: ClassId = ClassId.VEHICLE
    score: float | None = None

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise InputError(
                f"box sizes must be strictly positive, got l={self.l} w={self.w} h={self.h}"
            )
        self.yaw = wrap_angle(self.yaw)
        self.class_id = ClassId(self.class_id)

    @property
    def bev_area(self) -> float:
        return self.l * self.w

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def params(self) -> np.ndarray:
        """(7,) float64 vector (cx, cy, cz, l, w, h, yaw)."""
        return np.array([self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw])


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an (N, 7) float64 array; empty lists give (0, 7)."""
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.stack([b.params() for b in boxes])


@dataclass
class PolygonBEV:
    """Convex counter-clockwise polygon in the BEV plane, vertices (N, 2)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise InputError(f"polygon needs at least 3 (x, y) vertices, got shape {v.shape}")
        nxt = np.roll(v, -1, axis=0)
        prv = np.roll(v, 1, axis=0)
        cross = (v[:, 0] - prv[:, 0]) * (nxt[:, 1] - v[:, 1]) - (
            v[:, 1] - prv[:, 1]
        ) * (nxt[:, 0] - v[:, 0])
        if np.any(cross < -1e-12):
            raise InputError("polygon vertices must be convex and counter-clockwise")
        self.vertices = v

    @property
    def area(self) -> float:
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        return float(0.5 * np.sum(v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]))


def box_corners_bev(box: Box3D) -> PolygonBEV:
    """4 counter-clockwise BEV corners of the yaw-rotated l x w footprint."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = 0.5 * box.l, 0.5 * box.w
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    world = np.empty_like(local)
    world[:, 0] = box.cx + local[:, 0] * c - local[:, 1] * s
    world[:, 1] = box.cy + local[:, 0] * s + local[:, 1] * c
    return PolygonBEV(world)


@numba.njit(cache=True)
def _corners_into(cx, cy, l, w, yaw, out):  # pragma: no cover - exercised via wrappers
    c = math.cos(yaw)
    s = math.sin(yaw)
    hl = 0.5 * l
    hw = 0.5 * w
    out[0, 0] = cx + hl * c - hw * s
    out[0, 1] = cy + hl * s + hw * c
    out[1, 0] = cx - hl * c - hw * s
    out[1, 1] = cy - hl * s + hw * c
    out[2, 0] = cx - hl * c + hw * s
    out[2, 1] = cy - hl * s - hw * c
    out[3, 0] = cx + hl * c + hw * s
    out[3, 1] = cy + hl * s - hw * c


@numba.njit(cache=True)
def _convex_quad_intersection_area(pa, pb):  # pragma: no cover
    """Sutherland-Hodgman clip of CCW quad ``pa`` by CCW quad ``pb``."""
    xs = np.empty(16)
    ys = np.empty(16)
    txs = np.empty(16)
    tys = np.empty(16)
    n = 4
    for i in range(4):
        xs[i] = pa[i, 0]
        ys[i] = pa[i, 1]
    for e in range(4):
        if n == 0:
            return 0.0
        ex0 = pb[e, 0]
        ey0 = pb[e, 1]
        ex1 = pb[(e + 1) % 4, 0]
        ey1 = pb[(e + 1) % 4, 1]
        dx = ex1 - ex0
        dy = ey1 - ey0
        m = 0
        for i in range(n):
            j = i + 1
            if j == n:
                j = 0
            si = dx * (ys[i] - ey0) - dy * (xs[i] - ex0)
            sj = dx * (ys[j] - ey0) - dy * (xs[j] - ex0)
            if si >= 0.0:
                txs[m] = xs[i]
                tys[m] = ys[i]
                m += 1
            if (si > 0.0 and sj < 0.0) or (si < 0.0 and sj > 0.0):
                t = si / (si - sj)
                txs[m] = xs[i] + t * (xs[j] - xs[i])
                tys[m] = ys[i] + t * (ys[j] - ys[i])
                m += 1
        n = m
        for i in range(m):
            xs[i] = txs[i]
            ys[i] = tys[i]
    if n < 3:
        return 0.0
    area = 0.0
    for i in range(n):
        j = i + 1
        if j == n:
            j = 0
        area += xs[i] * ys[j] - xs[j] * ys[i]
    return 0.5 * abs(area)


@numba.njit(cache=True)
def _iou_bev_params(ax, ay, al, aw, ayaw, bx, by, bl, bw, byaw):  # pragma: no cover
    if ayaw == 0.0 and byaw == 0.0:
        # Axis-aligned fast path keeps the zero-yaw case bit-equal to the
        # closed-form rectangle overlap.
        ix = min(ax + 0.5 * al, bx + 0.5 * bl) - max(ax - 0.5 * al, bx - 0.5 * bl)
        iy = min(ay + 0.5 * aw, by + 0.5 * bw) - max(ay - 0.5 * aw, by - 0.5 * bw)
        if ix <= 0.0 or iy <= 0.0:
            return 0.0
        inter = ix * iy
    else:
        ca = np.empty((4, 2))
        cb = np.empty((4, 2))
        _corners_into(ax, ay, al, aw, ayaw, ca)
        _corners_into(bx, by, bl, bw, byaw, cb)
        inter = _convex_quad_intersection_area(ca, cb)
    if inter < DEGENERATE_AREA:
        return 0.0
    return inter / (al * aw + bl * bw - inter)


@numba.njit(cache=True)
def _iou_bev_matrix(a, b):  # pragma: no cover
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = _iou_bev_params(
                a[i, 0], a[i, 1], a[i, 3], a[i, 4], a[i, 6],
                b[j, 0], b[j, 1], b[j, 3], b[j, 4], b[j, 6],
            )
    return out


def iou_bev_rotated(a: Box3D, b: Box3D) -> float:
    """BEV IoU of two yaw-rotated footprints via convex polygon clipping."""
    return float(
        _iou_bev_params(a.cx, a.cy, a.l, a.w, a.yaw, b.cx, b.cy, b.l, b.w, b.yaw)
    )


def iou_bev_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise rotated BEV IoU for (N, 7) x (M, 7) box parameter arrays."""
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    b = np.ascontiguousarray(np.asarray(b, dtype=np.float64))
    if a.ndim != 2 or a.shape[1] != 7 or b.ndim != 2 or b.shape[1] != 7:
        raise InputError("box arrays must have shape (N, 7)")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return _iou_bev_matrix(a, b)


def iou_3d_axis_aligned(a: Box3D, b: Box3D) -> float:
    """3D IoU with yaw dropped: extents are center +/- size/2 on each axis."""
    inter = 1.0
    for ca, sa, cb, sb in (
        (a.cx, a.l, b.cx, b.l),
        (a.cy, a.w, b.cy, b.w),
        (a.cz, a.h, b.cz, b.h),
    ):
        lo = max(ca - 0.5 * sa, cb - 0.5 * sb)
        hi = min(ca + 0.5 * sa, cb + 0.5 * sb)
        if hi <= lo:
            return 0.0
        inter *= hi - lo
    return inter / (a.volume + b.volume - inter)


def _local_frame(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Express (N, >=3) world points in the box frame (center origin, yaw 0)."""
    pts = np.asarray(points, dtype=np.float64)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = pts[:, 0] - box.cx
    dy = pts[:, 1] - box.cy
    out = pts.copy()
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = pts[:, 2] - box.cz
    return out


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Boolean mask of points inside the rotated box, faces inclusive."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise InputError("points must be an (N, >=3) array")
    local = _local_frame(pts[:, :3], box)
    return (
        (np.abs(local[:, 0]) <= 0.5 * box.l + _FACE_EPS)
        & (np.abs(local[:, 1]) <= 0.5 * box.w + _FACE_EPS)
        & (np.abs(local[:, 2]) <= 0.5 * box.h + _FACE_EPS)
    )


def point_in_box(point, box: Box3D) -> bool:
    """True iff the single (x, y, z) point lies inside the rotated box."""
    p = np.asarray(point, dtype=np.float64).reshape(1, -1)
    return bool(points_in_box(p, box)[0])

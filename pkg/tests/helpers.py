"""Shared test utilities: independent oracles and random fixtures.

Everything here is deliberately written against the raw math, not the
package internals, so the oracle path stays independent of the code
under test.
"""
from __future__ import annotations

import math

import numpy as np

from voxdet.geometry import Box3D, ClassId


def random_box(rng, center_range=10.0, size_range=(0.5, 5.0), cls=None) -> Box3D:
    l, w, h = rng.uniform(size_range[0], size_range[1], 3)
    return Box3D(
        cx=float(rng.uniform(-center_range, center_range)),
        cy=float(rng.uniform(-center_range, center_range)),
        cz=float(rng.uniform(-1.0, 2.0)),
        l=float(l), w=float(w), h=float(h),
        yaw=float(rng.uniform(-math.pi, math.pi)),
        class_id=ClassId(int(rng.integers(0, 3))) if cls is None else cls,
    )


def overlapping_box_pair(rng):
    """Two similar-scale boxes with nearby centers (likely overlapping)."""
    a = random_box(rng, center_range=2.0, size_range=(1.0, 4.0))
    b = Box3D(
        cx=a.cx + float(rng.uniform(-2.0, 2.0)),
        cy=a.cy + float(rng.uniform(-2.0, 2.0)),
        cz=a.cz,
        l=float(rng.uniform(1.0, 4.0)),
        w=float(rng.uniform(1.0, 4.0)),
        h=a.h,
        yaw=float(rng.uniform(-math.pi, math.pi)),
        class_id=a.class_id,
    )
    return a, b


def point_in_rect(px, py, box: Box3D) -> np.ndarray:
    """Vectorized BEV containment against a rotated rectangle."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = px - box.cx
    dy = py - box.cy
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return (np.abs(lx) <= 0.5 * box.l) & (np.abs(ly) <= 0.5 * box.w)


def mc_iou_bev(a: Box3D, b: Box3D, samples: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo BEV IoU oracle.

    Samples uniformly inside the smaller footprint (exact area), measures
    the fraction landing in the other box, and closes the union with the
    analytic footprint areas, so the only noise is the hit-rate estimate.
    """
    small, other = (a, b) if a.bev_area <= b.bev_area else (b, a)
    rng = np.random.default_rng(seed)
    lx = rng.uniform(-0.5 * small.l, 0.5 * small.l, samples)
    ly = rng.uniform(-0.5 * small.w, 0.5 * small.w, samples)
    c, s = math.cos(small.yaw), math.sin(small.yaw)
    px = small.cx + c * lx - s * ly
    py = small.cy + s * lx + c * ly
    inter = small.bev_area * np.mean(point_in_rect(px, py, other))
    union = a.bev_area + b.bev_area - inter
    return float(inter / union)


def aabb_iou_bev(a: Box3D, b: Box3D) -> float:
    """Closed-form axis-aligned BEV IoU (valid for zero-yaw boxes)."""
    ix = min(a.cx + a.l / 2, b.cx + b.l / 2) - max(a.cx - a.l / 2, b.cx - b.l / 2)
    iy = min(a.cy + a.w / 2, b.cy + b.w / 2) - max(a.cy - a.w / 2, b.cy - b.w / 2)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.bev_area + b.bev_area - inter)


def reference_nms(dets, thresholds, iou_fn) -> list[int]:
    """O(n^2) greedy NMS oracle over Detection objects, returns kept indices."""
    kept_all = []
    classes = sorted({d.class_id for d in dets})
    for cls in classes:
        idx = [i for i, d in enumerate(dets) if d.class_id == cls]
        idx.sort(key=lambda i: (-dets[i].confidence, i))
        kept = []
        for i in idx:
            ok = True
            for j in kept:
                if iou_fn(dets[i].box, dets[j].box) > thresholds[cls]:
                    ok = False
                    break
            if ok:
                kept.append(i)
        kept_all.extend(kept)
    return sorted(kept_all)


def reference_ap(confidences, tp_flags, num_gt, recall_points=101, weights=None) -> float:
    """Straight-line AP oracle: explicit loops, max-interpolated precision."""
    order = sorted(range(len(confidences)), key=lambda i: (-confidences[i], i))
    tps = [tp_flags[i] for i in order]
    ws = [1.0 if weights is None else weights[i] for i in order]
    if num_gt == 0:
        return 1.0 if not tps else 0.0
    if not tps:
        return 0.0
    pr = []
    cum_w = 0.0
    cum_tp = 0
    for rank, (tp, w) in enumerate(zip(tps, ws), start=1):
        if tp:
            cum_w += w
            cum_tp += 1
        pr.append((cum_tp / num_gt, cum_w / rank))
    total = 0.0
    # same sample grid as the implementation (identical float values);
    # the independent part is the explicit max-precision scan below
    for r in np.linspace(0.0, 1.0, recall_points):
        best = 0.0
        for recall, precision in pr:
            if recall >= r and precision > best:
                best = precision
        total += best
    return total / recall_points

"""Training losses with analytic gradients.

Heatmaps use the penalty-reduced focal loss of the center-heatmap
lineage (alpha = 2, beta = 4, normalized by the positive-cell count);
regression sub-heads use a masked mean L1; the encoded IoU uses masked
smooth L1. Every function returns (scalar loss, gradient wrt pred) so
the gradients can be checked against finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0

# Predicted heatmap probabilities are expected clamped into
# [EPS, 1 - EPS] by the caller before the focal loss.
EPS = 1e-6

TOTAL_LOSS_PARTS = ("heat", "off", "z", "size", "ori", "iou", "kps")


@dataclass(frozen=True)
class LossWeights:
    """Per-sub-task weights of the total objective (heatmap weight is 1)."""

    off: float = 2.0
    z: float = 2.0
    size: float = 2.0
    ori: float = 2.0
    iou: float = 2.0
    kps: float = 2.0

    def __post_init__(self):
        for name in ("off", "z", "size", "ori", "iou", "kps"):
            if getattr(self, name) < 0:
                raise InputError(f"loss weight {name} must be >= 0")


def _check_shapes(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InputError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    return pred, target


def focal_loss(pred, target):
    """Penalty-reduced focal loss over heatmaps.

    Cells with target exactly 1 contribute -(1-p)^a log p, the rest
    -(1-y)^b p^a log(1-p); the sum is divided by max(1, #positives).
    ``pred`` must lie strictly inside (0, 1).
    """
    pred, target = _check_shapes(pred, target)
    pos = target == 1.0
    num_pos = max(1, int(np.count_nonzero(pos)))

    grad = np.zeros_like(pred)
    p = pred[pos]
    pos_terms = -((1.0 - p) ** FOCAL_ALPHA) * np.log(p)
    grad[pos] = (
        FOCAL_ALPHA * (1.0 - p) ** (FOCAL_ALPHA - 1.0) * np.log(p)
        - ((1.0 - p) ** FOCAL_ALPHA) / p
    )

    q = pred[~pos]
    y = target[~pos]
    damp = (1.0 - y) ** FOCAL_BETA
    neg_terms = -damp * q ** FOCAL_ALPHA * np.log(1.0 - q)
    grad[~pos] = -damp * (
        FOCAL_ALPHA * q ** (FOCAL_ALPHA - 1.0) * np.log(1.0 - q)
        - q ** FOCAL_ALPHA / (1.0 - q)
    )

    loss = (pos_terms.sum() + neg_terms.sum()) / num_pos
    grad /= num_pos
    return float(loss), grad


def l1_masked(pred, target, mask):
    """Mean absolute error over masked cells; zero when the mask is empty."""
    pred, target = _check_shapes(pred, target)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    m = int(np.count_nonzero(mask))
    grad = np.zeros_like(pred)
    if m == 0:
        return 0.0, grad
    diff = pred - target
    grad[mask] = np.sign(diff[mask]) / m
    return float(np.abs(diff[mask]).sum() / m), grad


def smooth_l1(pred, target, mask, beta: float = 1.0):
    """Masked-mean smooth L1: quadratic below ``beta``, linear above."""
    if beta <= 0:
        raise InputError(f"smooth L1 transition must be positive, got {beta}")
    pred, target = _check_shapes(pred, target)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    m = int(np.count_nonzero(mask))
    grad = np.zeros_like(pred)
    if m == 0:
        return 0.0, grad
    d = (pred - target)[mask]
    quad = np.abs(d) < beta
    terms = np.where(quad, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    grad[mask] = np.where(quad, d / beta, np.sign(d)) / m
    return float(terms.sum() / m), grad


def total_loss(parts, weights: LossWeights = LossWeights()) -> float:
    """Weighted sum L = L_heat + sum_k lambda_k L_k over the sub-heads."""
    for name in TOTAL_LOSS_PARTS:
        if name not in parts:
            raise InputError(f"missing loss part '{name}'")
        if not np.isfinite(parts[name]):
            raise InputError(f"loss part '{name}' is not finite: {parts[name]}")
    return float(
        parts["heat"]
        + weights.off * parts["off"]
        + weights.z * parts["z"]
        + weights.size * parts["size"]
        + weights.ori * parts["ori"]
        + weights.iou * parts["iou"]
        + weights.kps * parts["kps"]
    )

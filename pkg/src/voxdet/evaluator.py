"""AP and heading-aware APH evaluation of detection sets.

Matching is greedy in descending confidence: a detection claims the
unmatched same-class ground-truth box with the highest IoU at or above
the class threshold, otherwise it is a false positive. APH runs the same
PR machinery but weights each true positive's precision contribution by
(1 - |heading error| / pi); recall keeps unweighted counts so a lone
perfect-overlap TP with a pi/2 heading error scores exactly 0.5.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import Box3D, ClassId, boxes_to_array, iou_bev_matrix, iou_3d_axis_aligned, wrap_angle

DEFAULT_MATCH_THRESHOLDS = {ClassId.VEHICLE: 0.7, ClassId.PEDESTRIAN: 0.5, ClassId.CYCLIST: 0.5}


@dataclass(frozen=True)
class EvalConfig:
    """Match thresholds, IoU flavor and PR sampling density."""

    iou_thresholds: dict = field(default_factory=lambda: dict(DEFAULT_MATCH_THRESHOLDS))
    iou_kind: str = "bev"  # "bev" (rotated) or "aa3d" (axis-aligned 3D)
    recall_points: int = 101

    def __post_init__(self):
        for cls, thr in self.iou_thresholds.items():
            if not 0.0 < thr <= 1.0:
                raise InputError(f"match threshold for {ClassId(cls).name} must be in (0, 1]")
        if self.iou_kind not in ("bev", "aa3d"):
            raise InputError(f"unknown IoU kind {self.iou_kind!r}")
        if self.recall_points < 2:
            raise InputError("need at least 2 recall sample points")


@dataclass
class MatchResult:
    """Per-detection outcome in descending-confidence order."""

    confidences: np.ndarray  # (N,) sorted descending
    tp: np.ndarray  # (N,) bool
    matched_gt: np.ndarray  # (N,) int, -1 for FP
    heading_error: np.ndarray  # (N,) |dyaw| in [0, pi], NaN for FP
    gt_matched: np.ndarray  # (G,) bool


def heading_difference(yaw_a: float, yaw_b: float) -> float:
    """|yaw_a - yaw_b| wrapped into [0, pi]."""
    return abs(wrap_angle(yaw_a - yaw_b))


def _iou_pairs(dets, gts, kind):
    if kind == "bev":
        return iou_bev_matrix(boxes_to_array(dets), boxes_to_array(gts))
    mat = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            mat[i, j] = iou_3d_axis_aligned(d, g)
    return mat


def match_detections(dets, gts, cfg: EvalConfig = EvalConfig()) -> MatchResult:
    """Greedily assign detections to ground truth, one claim per GT box.

    ``dets`` are Detection objects (rescored); ``gts`` are Box3D. Ties in
    confidence are broken by input position.
    """
    conf = np.array([d.confidence for d in dets], dtype=np.float64)
    if conf.size and np.any(np.isnan(conf)):
        raise InputError("detections must carry final confidence before matching")
    order = np.lexsort((np.arange(conf.size), -conf))
    gt_matched = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(conf.size, dtype=bool)
    matched_gt = np.full(conf.size, -1, dtype=np.int64)
    heading = np.full(conf.size, np.nan)
    if len(gts) and conf.size:
        ious = _iou_pairs([dets[i].box for i in order], gts, cfg.iou_kind)
        gt_cls = np.array([g.class_id for g in gts], dtype=np.int64)
        for rank, i in enumerate(order):
            det = dets[i]
            thr = cfg.iou_thresholds[det.class_id]
            cand = ious[rank].copy()
            cand[gt_matched | (gt_cls != int(det.class_id))] = -1.0
            j = int(np.argmax(cand))
            if cand[j] >= thr:
                gt_matched[j] = True
                tp[rank] = True
                matched_gt[rank] = j
                heading[rank] = heading_difference(det.box.yaw, gts[j].yaw)
    return MatchResult(conf[order], tp, matched_gt, heading, gt_matched)


def _interpolated_ap(precision_num: np.ndarray, tp: np.ndarray, num_gt: int,
                     recall_points: int) -> float:
    """Mean of max-interpolated precision over evenly spaced recall samples."""
    if num_gt == 0:
        return 1.0 if tp.size == 0 else 0.0
    if tp.size == 0:
        return 0.0
    ranks = np.arange(1, tp.size + 1, dtype=np.float64)
    precision = np.cumsum(precision_num) / ranks
    recall = np.cumsum(tp) / num_gt
    suffix_max = np.maximum.accumulate(precision[::-1])[::-1]
    samples = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, samples, side="left")
    vals = np.where(idx < tp.size, suffix_max[np.minimum(idx, tp.size - 1)], 0.0)
    return float(vals.mean())


def average_precision(match: MatchResult, num_gt: int, cfg: EvalConfig = EvalConfig()) -> float:
    """Area-style AP from a match result (101-point interpolation)."""
    if num_gt < 0:
        raise InputError("num_gt must be >= 0")
    return _interpolated_ap(match.tp.astype(np.float64), match.tp, num_gt, cfg.recall_points)


def heading_weights(match: MatchResult) -> np.ndarray:
    """(1 - |dyaw| / pi) per detection; FPs contribute 0."""
    w = np.zeros(match.tp.size, dtype=np.float64)
    if match.tp.any():
        w[match.tp] = 1.0 - match.heading_error[match.tp] / math.pi
    return w


def aph(match: MatchResult, num_gt: int, cfg: EvalConfig = EvalConfig()) -> float:
    """Heading-weighted AP: TP precision contributions scaled by accuracy."""
    if num_gt < 0:
        raise InputError("num_gt must be >= 0")
    return _interpolated_ap(heading_weights(match), match.tp, num_gt, cfg.recall_points)


@dataclass
class EvalReport:
    """Per-class AP/APH and their means over the three classes."""

    per_class: dict
    mean_ap: float
    mean_aph: float

    def as_dict(self) -> dict:
        return {
            "per_class": {
                ClassId(cls).name: {"ap": ap_v, "aph": aph_v}
                for cls, (ap_v, aph_v) in sorted(self.per_class.items())
            },
            "mean_ap": self.mean_ap,
            "mean_aph": self.mean_aph,
        }

    def as_table(self) -> str:
        rows = [f"{'class':<12}{'AP':>10}{'APH':>10}"]
        for cls, (ap_v, aph_v) in sorted(self.per_class.items()):
            rows.append(f"{ClassId(cls).name:<12}{ap_v:>10.4f}{aph_v:>10.4f}")
        rows.append(f"{'MEAN':<12}{self.mean_ap:>10.4f}{self.mean_aph:>10.4f}")
        return "\n".join(rows)


def evaluate(dets, gts, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Per-class AP/APH on a single scene (or pre-pooled) detection set."""
    return evaluate_scenes([(dets, gts)], cfg)


def evaluate_scenes(scene_pairs, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Pool match results over (dets, gts) pairs, then compute AP/APH.

    Matching never crosses scene boundaries; pooled detections are
    ordered by confidence descending with ties broken by (scene, rank).
    """
    per_class = {}
    for cls in ClassId:
        confs, tps, weights = [], [], []
        num_gt = 0
        for dets, gts in scene_pairs:
            d_cls = [d for d in dets if d.class_id == cls]
            g_cls = [g for g in gts if g.class_id == cls]
            num_gt += len(g_cls)
            if not d_cls:
                continue
            match = match_detections(d_cls, g_cls, cfg)
            confs.append(match.confidences)
            tps.append(match.tp)
            weights.append(heading_weights(match))
        if confs:
            conf = np.concatenate(confs)
            tp = np.concatenate(tps)
            w = np.concatenate(weights)
            scene_id = np.concatenate(
                [np.full(len(c), s, dtype=np.int64) for s, c in enumerate(confs)]
            )
            rank = np.concatenate([np.arange(len(c), dtype=np.int64) for c in confs])
            order = np.lexsort((rank, scene_id, -conf))
            tp, w = tp[order], w[order]
        else:
            tp = np.zeros(0, dtype=bool)
            w = np.zeros(0)
        ap_v = _interpolated_ap(tp.astype(np.float64), tp, num_gt, cfg.recall_points)
        aph_v = _interpolated_ap(w, tp, num_gt, cfg.recall_points)
        per_class[cls] = (ap_v, aph_v)
    mean_ap = float(np.mean([v[0] for v in per_class.values()]))
    mean_aph = float(np.mean([v[1] for v in per_class.values()]))
    return EvalReport(per_class, mean_ap, mean_aph)

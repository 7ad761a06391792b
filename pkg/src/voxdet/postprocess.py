"""Head-output post-processing: peaks, box decoding, rescoring, NMS.

Decoding inverts the target encoding cell by cell; the IoU-aware
confidence f = score^(1-alpha) * iou^alpha then drives a class-specific
rotated-BEV NMS. All orderings are deterministic (documented tie-breaks)
so repeated runs are bit-stable.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError
from .geometry import Box3D, ClassId, boxes_to_array, iou_bev_matrix
from .targets import HeadConfig, TargetSet, decode_iou_target
from .voxelizer import VoxelGrid

DEFAULT_ALPHAS = {ClassId.VEHICLE: 0.68, ClassId.PEDESTRIAN: 0.71, ClassId.CYCLIST: 0.65}
DEFAULT_NMS_THRESHOLDS = {ClassId.VEHICLE: 0.8, ClassId.PEDESTRIAN: 0.55, ClassId.CYCLIST: 0.55}
DEFAULT_PRE_NMS_TOP_K = 500


@dataclass
class Detection:
    """Decoded box with classification score, predicted IoU and confidence."""

    box: Box3D
    class_id: ClassId
    score: float
    iou_pred: float
    confidence: float = float("nan")


@dataclass(frozen=True)
class RescoreConfig:
    """Per-class alpha of the IoU-aware confidence function."""

    alphas: dict = field(default_factory=lambda: dict(DEFAULT_ALPHAS))

    def __post_init__(self):
        for cls, alpha in self.alphas.items():
            if not 0.0 <= alpha <= 1.0:
                raise InputError(f"alpha for {ClassId(cls).name} must be in [0, 1], got {alpha}")


@dataclass(frozen=True)
class NmsConfig:
    """Per-class rotated-IoU suppression thresholds and the pre-NMS cap."""

    iou_thresholds: dict = field(default_factory=lambda: dict(DEFAULT_NMS_THRESHOLDS))
    pre_top_k: int = DEFAULT_PRE_NMS_TOP_K

    def __post_init__(self):
        for cls, thr in self.iou_thresholds.items():
            if not 0.0 < thr <= 1.0:
                raise InputError(f"NMS threshold for {ClassId(cls).name} must be in (0, 1], got {thr}")
        if self.pre_top_k < 1:
            raise InputError("pre-NMS top-K must be >= 1")


@dataclass
class HeadMaps:
    """Per-cell head outputs consumed by decoding (keypoints are train-only)."""

    heatmap: np.ndarray  # (C, H, W)
    offset: np.ndarray  # (2, H, W)
    z: np.ndarray  # (1, H, W)
    size: np.ndarray  # (3, H, W), log sizes
    yaw: np.ndarray  # (2, H, W), (sin, cos)
    iou: np.ndarray  # (1, H, W), encoded IoU


def head_maps_from_targets(ts: TargetSet, iou_fill: float = 1.0) -> HeadMaps:
    """Ideal-head oracle: targets become the head outputs, IoU map constant."""
    return HeadMaps(
        heatmap=ts.heatmap,
        offset=ts.offset,
        z=ts.z,
        size=ts.size,
        yaw=ts.yaw,
        iou=np.full_like(ts.z, iou_fill),
    )


@dataclass
class PeakSet:
    """Top-scoring heatmap cells: class ids, (u, v) cells and scores."""

    class_ids: np.ndarray  # (N,) int64
    cells: np.ndarray  # (N, 2) int64, (u, v)
    scores: np.ndarray  # (N,) float64

    def __len__(self) -> int:
        return self.class_ids.shape[0]


def topk_peaks(heatmap: np.ndarray, k: int) -> PeakSet:
    """K highest-scoring (class, cell) entries across all classes.

    Sorted by descending score; ties broken by (class, v, u) ascending,
    which is exactly ascending C-order flat index.
    """
    if k < 1:
        raise InputError(f"top-K must be >= 1, got {k}")
    hm = np.asarray(heatmap, dtype=np.float64)
    if hm.ndim != 3:
        raise InputError(f"heatmap must be (C, H, W), got shape {hm.shape}")
    c, h, w = hm.shape
    flat = np.ascontiguousarray(hm).ravel()
    take = min(int(k), flat.size)
    if take == flat.size:
        sel = np.argsort(-flat, kind="stable")
    else:
        part = np.argpartition(-flat, take - 1)[:take]
        kth = flat[part].min()
        above = np.flatnonzero(flat > kth)
        tied = np.flatnonzero(flat == kth)
        cand = np.concatenate([above, tied[: take - above.size]])
        sel = cand[np.argsort(-flat[cand], kind="stable")]
    cls, rem = np.divmod(sel, h * w)
    v, u = np.divmod(rem, w)
    return PeakSet(cls.astype(np.int64), np.stack([u, v], axis=1), flat[sel])


def decode_boxes(peaks: PeakSet, maps: HeadMaps, grid: VoxelGrid, cfg: HeadConfig) -> list[Detection]:
    """Decode peaks into detections by inverting the target encoding."""
    h, w = cfg.map_shape(grid)
    if len(peaks) and (peaks.cells[:, 0].max() >= w or peaks.cells[:, 1].max() >= h):
        raise InputError("peak cell outside the head map")
    sx = grid.cell[0] * cfg.out_stride
    sy = grid.cell[1] * cfg.out_stride
    dets = []
    for i in range(len(peaks)):
        u, v = int(peaks.cells[i, 0]), int(peaks.cells[i, 1])
        cx = grid.range_min[0] + (u + maps.offset[0, v, u]) * sx
        cy = grid.range_min[1] + (v + maps.offset[1, v, u]) * sy
        box = Box3D(
            cx=cx,
            cy=cy,
            cz=float(maps.z[0, v, u]),
            l=float(np.exp(maps.size[0, v, u])),
            w=float(np.exp(maps.size[1, v, u])),
            h=float(np.exp(maps.size[2, v, u])),
            yaw=float(np.arctan2(maps.yaw[0, v, u], maps.yaw[1, v, u])),
            class_id=ClassId(int(peaks.class_ids[i])),
        )
        iou_pred = float(np.clip(decode_iou_target(maps.iou[0, v, u]), 0.0, 1.0))
        dets.append(Detection(box, box.class_id, float(peaks.scores[i]), iou_pred))
    return dets


def rescore(score: float, iou_pred: float, alpha: float) -> float:
    """IoU-aware confidence f = score^(1-alpha) * iou^alpha, with 0^0 = 1."""
    if not (0.0 <= score <= 1.0 and 0.0 <= iou_pred <= 1.0 and 0.0 <= alpha <= 1.0):
        raise InputError(
            f"rescore inputs must be in [0, 1], got score={score} iou={iou_pred} alpha={alpha}"
        )
    return float(score ** (1.0 - alpha) * iou_pred ** alpha)


def rescore_detections(dets, cfg: RescoreConfig = RescoreConfig()) -> list[Detection]:
    """Fill the final confidence of every detection from its class alpha."""
    out = []
    for d in dets:
        alpha = cfg.alphas[d.class_id]
        out.append(replace(d, confidence=rescore(d.score, d.iou_pred, alpha)))
    return out


def _confidence_order(dets, indices):
    conf = np.array([dets[i].confidence for i in indices])
    if np.any(np.isnan(conf)):
        raise InputError("detections must be rescored before NMS")
    return [indices[j] for j in np.lexsort((np.array(indices), -conf))]


def class_nms(dets, cfg: NmsConfig = NmsConfig()) -> list[Detection]:
    """Greedy per-class suppression on rotated BEV IoU.

    Within each class, detections are visited in descending confidence
    (ties by input position) and kept iff their IoU with every kept box
    of that class stays at or below the class threshold. Classes never
    suppress each other. The output is ordered by descending confidence
    (ties by input position).
    """
    if not dets:
        return []
    params = boxes_to_array([d.box for d in dets])
    kept_all = []
    for cls in sorted({d.class_id for d in dets}):
        thr = cfg.iou_thresholds[cls]
        order = _confidence_order(dets, [i for i, d in enumerate(dets) if d.class_id == cls])
        kept: list[int] = []
        for i in order:
            if kept:
                ious = iou_bev_matrix(params[i:i + 1], params[kept])[0]
                if np.any(ious > thr):
                    continue
            kept.append(i)
        kept_all.extend(kept)
    return [dets[i] for i in _confidence_order(dets, kept_all)]

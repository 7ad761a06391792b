"""Training-time scene augmentation.

Three stages mirror the usual LiDAR copy-paste recipe: a ground-truth
database of cropped objects pasted collision-free into scenes, global
flip / rotate / scale / translate, and per-instance pose noise. Every
operation is pure and deterministic given its seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import Box3D, ClassId, boxes_to_array, iou_bev_matrix, points_in_box, wrap_angle

DEFAULT_SAMPLES_PER_CLASS = {ClassId.VEHICLE: 15, ClassId.PEDESTRIAN: 10, ClassId.CYCLIST: 10}

INSTANCE_ROT_RANGE = math.pi / 20.0
INSTANCE_LOC_SIGMA = 0.1  # meters, standard deviation


@dataclass
class Scene:
    """A point cloud with its labeled boxes."""

    points: np.ndarray  # (N, 6) point rows
    boxes: list

    def copy(self) -> "Scene":
        return Scene(self.points.copy(), [replace_box(b) for b in self.boxes])


def replace_box(box: Box3D, **changes) -> Box3D:
    params = dict(cx=box.cx, cy=box.cy, cz=box.cz, l=box.l, w=box.w, h=box.h,
                  yaw=box.yaw, class_id=box.class_id, score=box.score)
    params.update(changes)
    return Box3D(**params)


@dataclass
class GtDatabase:
    """Cropped ground-truth objects in box-local coordinates, per class."""

    entries: dict = field(default_factory=lambda: {cls: [] for cls in ClassId})

    def add(self, box: Box3D, local_points: np.ndarray):
        self.entries[box.class_id].append((box, local_points))

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())


def _to_local(points: np.ndarray, box: Box3D) -> np.ndarray:
    """World point rows into the box frame (center at origin, yaw 0)."""
    out = points.copy()
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = points[:, 0] - box.cx
    dy = points[:, 1] - box.cy
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = points[:, 2] - box.cz
    return out


def _to_world(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Inverse of :func:`_to_local` for the same box."""
    out = points.copy()
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out[:, 0] = box.cx + c * points[:, 0] - s * points[:, 1]
    out[:, 1] = box.cy + s * points[:, 0] + c * points[:, 1]
    out[:, 2] = box.cz + points[:, 2]
    return out


def build_gt_database(scenes) -> GtDatabase:
    """Crop every labeled box of every scene into box-local storage.

    Boxes with no interior points are stored with empty point sets.
    """
    db = GtDatabase()
    for scene in scenes:
        pts = np.asarray(scene.points, dtype=np.float64)
        for box in scene.boxes:
            inside = points_in_box(pts, box) if pts.size else np.zeros(0, dtype=bool)
            db.add(replace_box(box), _to_local(pts[inside], box))
    return db


def sample_gt(db: GtDatabase, scene: Scene, wanted=None, rng_seed: int = 0) -> Scene:
    """Paste stored objects into the scene at their recorded world poses.

    Candidates are drawn without replacement per class; one is rejected
    when its rotated BEV IoU with any existing or already-placed box is
    above zero. Shortfalls (rejections, small database) are normal.
    """
    if wanted is None:
        wanted = dict(DEFAULT_SAMPLES_PER_CLASS)
    rng = np.random.default_rng(rng_seed)
    boxes = [replace_box(b) for b in scene.boxes]
    clouds = [np.asarray(scene.points, dtype=np.float64)]
    placed = boxes_to_array(boxes)
    for cls in ClassId:
        pool = db.entries.get(cls, [])
        want = int(wanted.get(cls, 0))
        if not pool or want <= 0:
            continue
        for idx in rng.permutation(len(pool)):
            if want == 0:
                break
            box, local = pool[idx]
            cand = boxes_to_array([box])
            if placed.shape[0] and float(iou_bev_matrix(cand, placed).max()) > 0.0:
                continue
            boxes.append(replace_box(box))
            if local.shape[0]:
                clouds.append(_to_world(local, box))
            placed = np.concatenate([placed, cand], axis=0)
            want -= 1
    return Scene(np.concatenate(clouds, axis=0), boxes)


@dataclass(frozen=True)
class GlobalTransformSpec:
    """Whole-scene flip / rotation / scaling / translation parameters."""

    flip_x: bool = False
    flip_y: bool = False
    rotation: float = 0.0
    scale: float = 1.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.scale <= 0:
            raise InputError(f"scale must be positive, got {self.scale}")


def draw_global_transform(rng: np.random.Generator,
                          rotation_range: float = math.pi / 4.0,
                          scale_range: tuple[float, float] = (0.95, 1.05),
                          translation_range: float = 0.2) -> GlobalTransformSpec:
    """Random spec: each flip with probability 0.5, U(-r, r) rotation,
    U(lo, hi) scale and per-axis U(-t, t) translation."""
    return GlobalTransformSpec(
        flip_x=bool(rng.random() < 0.5),
        flip_y=bool(rng.random() < 0.5),
        rotation=float(rng.uniform(-rotation_range, rotation_range)),
        scale=float(rng.uniform(*scale_range)),
        translation=tuple(rng.uniform(-translation_range, translation_range, 3)),
    )


def apply_global_transform(scene: Scene, spec: GlobalTransformSpec) -> Scene:
    """Apply flip -> rotate (about z) -> scale -> translate consistently.

    flip_x mirrors across the y-z plane (x negated, yaw -> pi - yaw);
    flip_y mirrors across the x-z plane (y negated, yaw -> -yaw).
    """
    pts = np.asarray(scene.points, dtype=np.float64).copy()
    params = boxes_to_array(scene.boxes)
    if spec.flip_x:
        pts[:, 0] = -pts[:, 0]
        if params.size:
            params[:, 0] = -params[:, 0]
            params[:, 6] = math.pi - params[:, 6]
    if spec.flip_y:
        pts[:, 1] = -pts[:, 1]
        if params.size:
            params[:, 1] = -params[:, 1]
            params[:, 6] = -params[:, 6]
    if spec.rotation != 0.0:
        c, s = math.cos(spec.rotation), math.sin(spec.rotation)
        rot = np.array([[c, -s], [s, c]])
        pts[:, 0:2] = pts[:, 0:2] @ rot.T
        if params.size:
            params[:, 0:2] = params[:, 0:2] @ rot.T
            params[:, 6] += spec.rotation
    if spec.scale != 1.0:
        pts[:, 0:3] *= spec.scale
        if params.size:
            params[:, 0:6] *= spec.scale
    shift = np.asarray(spec.translation, dtype=np.float64)
    pts[:, 0:3] += shift
    if params.size:
        params[:, 0:3] += shift
    boxes = [
        replace_box(b, cx=p[0], cy=p[1], cz=p[2], l=p[3], w=p[4], h=p[5],
                    yaw=wrap_angle(p[6]))
        for b, p in zip(scene.boxes, params)
    ]
    return Scene(pts, boxes)


def instance_noise(scene: Scene, rng_seed: int = 0,
                   rot_range: float = INSTANCE_ROT_RANGE,
                   loc_sigma: float = INSTANCE_LOC_SIGMA) -> Scene:
    """Perturb each box independently: U(-rot_range, rot_range) rotation
    about the box center plus N(0, loc_sigma) translation per axis.

    Interior points follow their box; points outside every box are left
    untouched. A point inside several boxes follows the highest-index
    box containing it.
    """
    rng = np.random.default_rng(rng_seed)
    pts = np.asarray(scene.points, dtype=np.float64).copy()
    boxes = []
    owner = np.full(pts.shape[0], -1, dtype=np.int64)
    for i, box in enumerate(scene.boxes):
        owner[points_in_box(pts, box)] = i
    for i, box in enumerate(scene.boxes):
        dtheta = float(rng.uniform(-rot_range, rot_range))
        shift = rng.normal(0.0, loc_sigma, 3)
        mine = owner == i
        if np.any(mine):
            c, s = math.cos(dtheta), math.sin(dtheta)
            dx = pts[mine, 0] - box.cx
            dy = pts[mine, 1] - box.cy
            pts[mine, 0] = box.cx + c * dx - s * dy + shift[0]
            pts[mine, 1] = box.cy + s * dx + c * dy + shift[1]
            pts[mine, 2] += shift[2]
        boxes.append(replace_box(
            box,
            cx=box.cx + shift[0], cy=box.cy + shift[1], cz=box.cz + shift[2],
            yaw=wrap_angle(box.yaw + dtheta),
        ))
    return Scene(pts, boxes)

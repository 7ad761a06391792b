"""Binary and JSON interchange formats shared across the toolkit.

Formats (all little-endian):
  * point clouds  "PCPD": magic, u16 version=1, u64 count, u8 dim=6,
    float32 rows (x, y, z, intensity_clamp, elongation, dt)
  * voxel dumps   "VOXL": magic, u64 count, u8 dim, per voxel
    (u32 c_x, u32 c_y, u32 c_z, u32 count, float32 x dim)
  * target dumps  "TGTS": magic, u32 (C, H, W), float32 planes in order
    heatmap[C], keypoints[C], offset[2], z[1], size[3], yaw[2],
    then the regression mask as one u8 plane
  * checkpoints   "CKPT": magic, u32 tensor count, per tensor
    (u16 name length, UTF-8 name, u8 rank, u32 dims, float32 data)
  * poses: JSON array of 16 numbers, row-major 4x4
  * detections / ground-truth boxes: JSON lines
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import Box3D, ClassId
from .postprocess import Detection
from .targets import TargetSet
from .voxelizer import POINT_DIM, SparseVoxels

PCPD_MAGIC = b"PCPD"
PCPD_VERSION = 1
VOXL_MAGIC = b"VOXL"
TGTS_MAGIC = b"TGTS"
CKPT_MAGIC = b"CKPT"


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise InputError(f"truncated file while reading {what}")
    return data


def _expect_magic(fh, magic: bytes, path):
    got = fh.read(len(magic))
    if got != magic:
        raise InputError(f"{path}: bad magic {got!r}, expected {magic!r}")


def write_pcpd(path, points) -> None:
    pts = np.asarray(points, dtype=np.float32)
    if pts.size == 0:
        pts = pts.reshape(0, POINT_DIM)
    if pts.ndim != 2 or pts.shape[1] != POINT_DIM:
        raise InputError(f"point rows must have {POINT_DIM} features, got shape {pts.shape}")
    with open(path, "wb") as fh:
        fh.write(PCPD_MAGIC)
        fh.write(struct.pack("<HQB", PCPD_VERSION, pts.shape[0], POINT_DIM))
        fh.write(pts.astype("<f4").tobytes(order="C"))


def read_pcpd(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _expect_magic(fh, PCPD_MAGIC, path)
        version, count, dim = struct.unpack("<HQB", _read_exact(fh, 11, "PCPD header"))
        if version != PCPD_VERSION:
            raise InputError(f"{path}: unsupported PCPD version {version}")
        if dim != POINT_DIM:
            raise InputError(f"{path}: unsupported feature dim {dim}")
        raw = _read_exact(fh, count * dim * 4, "PCPD payload")
    return np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(np.float64)


def write_voxl(path, voxels: SparseVoxels) -> None:
    dim = voxels.features.shape[1]
    with open(path, "wb") as fh:
        fh.write(VOXL_MAGIC)
        fh.write(struct.pack("<QB", len(voxels), dim))
        for i in range(len(voxels)):
            fh.write(struct.pack("<4I", *(int(c) for c in voxels.coords[i]),
                                 int(voxels.counts[i])))
            fh.write(voxels.features[i].astype("<f4").tobytes())


def read_voxl(path) -> SparseVoxels:
    with open(path, "rb") as fh:
        _expect_magic(fh, VOXL_MAGIC, path)
        count, dim = struct.unpack("<QB", _read_exact(fh, 9, "VOXL header"))
        coords = np.zeros((count, 3), dtype=np.int32)
        counts = np.zeros(count, dtype=np.int64)
        features = np.zeros((count, dim))
        for i in range(count):
            cx, cy, cz, n = struct.unpack("<4I", _read_exact(fh, 16, "VOXL record"))
            coords[i] = (cx, cy, cz)
            counts[i] = n
            features[i] = np.frombuffer(_read_exact(fh, dim * 4, "VOXL features"), dtype="<f4")
    return SparseVoxels(coords, features, counts)


def write_tgts(path, ts: TargetSet) -> None:
    c, h, w = ts.heatmap.shape
    planes = np.concatenate([ts.heatmap, ts.keypoint_heatmap, ts.offset,
                             ts.z, ts.size, ts.yaw], axis=0)
    with open(path, "wb") as fh:
        fh.write(TGTS_MAGIC)
        fh.write(struct.pack("<3I", c, h, w))
        fh.write(planes.astype("<f4").tobytes(order="C"))
        fh.write(ts.reg_mask.astype(np.uint8).tobytes(order="C"))


def read_tgts(path) -> TargetSet:
    with open(path, "rb") as fh:
        _expect_magic(fh, TGTS_MAGIC, path)
        c, h, w = struct.unpack("<3I", _read_exact(fh, 12, "TGTS header"))
        num_planes = 2 * c + 8
        raw = _read_exact(fh, num_planes * h * w * 4, "TGTS planes")
        planes = np.frombuffer(raw, dtype="<f4").reshape(num_planes, h, w).astype(np.float64)
        mask = np.frombuffer(_read_exact(fh, h * w, "TGTS mask"), dtype=np.uint8)
    return TargetSet(
        heatmap=planes[:c],
        keypoint_heatmap=planes[c:2 * c],
        offset=planes[2 * c:2 * c + 2],
        z=planes[2 * c + 2:2 * c + 3],
        size=planes[2 * c + 3:2 * c + 6],
        yaw=planes[2 * c + 6:2 * c + 8],
        reg_mask=mask.reshape(h, w).astype(bool),
    )


def write_ckpt(path, checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(checkpoint)))
        for name, tensor in checkpoint.items():
            arr = np.asarray(tensor, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_ckpt(path):
    with open(path, "rb") as fh:
        _expect_magic(fh, CKPT_MAGIC, path)
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "CKPT header"))
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "CKPT name length"))
            name = _read_exact(fh, name_len, "CKPT name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "CKPT rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "CKPT dims"))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(_read_exact(fh, 4 * n, "CKPT data"), dtype="<f4")
            out[name] = data.reshape(shape).copy()
    return out


def write_pose(path, pose) -> None:
    mat = np.asarray(pose, dtype=np.float64)
    if mat.shape != (4, 4):
        raise InputError(f"pose must be 4x4, got {mat.shape}")
    Path(path).write_text(json.dumps([float(x) for x in mat.ravel(order="C")]))


def read_pose(path) -> np.ndarray:
    try:
        values = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed pose JSON ({exc})") from exc
    if not isinstance(values, list) or len(values) != 16:
        raise InputError(f"{path}: pose JSON must be an array of 16 numbers")
    return np.array(values, dtype=np.float64).reshape(4, 4)


def _box_dict(box: Box3D) -> dict:
    return {
        "cx": box.cx, "cy": box.cy, "cz": box.cz,
        "l": box.l, "w": box.w, "h": box.h,
        "yaw": box.yaw, "class": ClassId(box.class_id).name,
    }


def write_boxes_jsonl(path, boxes) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for box in boxes:
            fh.write(json.dumps(_box_dict(box)) + "\n")


def _parse_box(record: dict, path) -> Box3D:
    try:
        return Box3D(
            cx=record["cx"], cy=record["cy"], cz=record["cz"],
            l=record["l"], w=record["w"], h=record["h"],
            yaw=record["yaw"], class_id=ClassId[record["class"]],
        )
    except KeyError as exc:
        raise InputError(f"{path}: record missing field {exc}") from exc


def read_boxes_jsonl(path) -> list:
    return [_parse_box(record, path) for record in _read_jsonl(path)]


def write_detections_jsonl(path, dets) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dets:
            record = _box_dict(d.box)
            record.update(score=d.score, iou_pred=d.iou_pred, confidence=d.confidence)
            fh.write(json.dumps(record) + "\n")


def read_detections_jsonl(path) -> list:
    dets = []
    for record in _read_jsonl(path):
        box = _parse_box(record, path)
        try:
            dets.append(Detection(
                box=box, class_id=box.class_id, score=record["score"],
                iou_pred=record["iou_pred"], confidence=record["confidence"],
            ))
        except KeyError as exc:
            raise InputError(f"{path}: detection record missing field {exc}") from exc
    return dets


def _read_jsonl(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InputError(f"{path}:{line_no}: malformed JSON ({exc})") from exc
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def save_gt_database(db, index_path, blob_path) -> None:
    """Persist a GT database as an index JSON plus one PCPD blob."""
    index = []
    chunks = []
    offset = 0
    for cls in sorted(db.entries):
        for box, local in db.entries[cls]:
            pts = np.asarray(local, dtype=np.float32).reshape(-1, POINT_DIM)
            index.append({
                **_box_dict(box),
                "point_count": int(pts.shape[0]),
                "byte_offset": offset,
            })
            chunks.append(pts)
            offset += pts.shape[0] * POINT_DIM * 4
    all_pts = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, POINT_DIM), np.float32)
    write_pcpd(blob_path, all_pts)
    Path(index_path).write_text(json.dumps(index, indent=1))


def load_gt_database(index_path, blob_path):
    from .augment import GtDatabase  # local import to avoid a cycle

    try:
        index = json.loads(Path(index_path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{index_path}: malformed index JSON ({exc})") from exc
    blob = read_pcpd(blob_path)
    db = GtDatabase()
    for entry in index:
        box = Box3D(
            cx=entry["cx"], cy=entry["cy"], cz=entry["cz"],
            l=entry["l"], w=entry["w"], h=entry["h"],
            yaw=entry["yaw"], class_id=ClassId[entry["class"]],
        )
        start = entry["byte_offset"] // (POINT_DIM * 4)
        db.add(box, blob[start:start + entry["point_count"]])
    return db

"""Synthetic scenes, the end-to-end pipeline runner and the benchmark.

The neural network is replaced by an ideal-head oracle: the encoded
targets are fed straight into decoding with the IoU map set to 1, so the
whole pre/post chain is exercised and exactly checkable. Externally
produced "TGTS" head maps can be decoded through the same path.
"""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io_formats
from .augment import Scene
from .config import PipelineConfig
from .errors import InputError
from .evaluator import EvalReport, evaluate_scenes
from .geometry import Box3D, ClassId, boxes_to_array, iou_bev_matrix
from .ingest import densify, filter_range
from .postprocess import (
    PeakSet,
    class_nms,
    decode_boxes,
    head_maps_from_targets,
    rescore_detections,
    topk_peaks,
)
from .targets import encode_targets
from .voxelizer import voxelize

# Mean (l, w, h) per class; synthetic sizes are drawn within +/- 20 %.
CLASS_SIZES = {
    ClassId.VEHICLE: (4.5, 2.0, 1.7),
    ClassId.PEDESTRIAN: (0.9, 0.9, 1.7),
    ClassId.CYCLIST: (1.8, 0.8, 1.7),
}

# Surface samples sit this fraction inside the box so containment
# survives float round-trips through rigid transforms.
_SURFACE_INSET = 1.0 - 1e-6

BENCH_STAGES = ("ingest", "voxelize", "encode", "decode", "nms", "e2e")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic scene."""

    rng_seed: int = 0
    counts: dict = field(default_factory=lambda: {
        ClassId.VEHICLE: 8, ClassId.PEDESTRIAN: 6, ClassId.CYCLIST: 6,
    })
    range_x: tuple[float, float] = (-20.0, 20.0)
    range_y: tuple[float, float] = (-20.0, 20.0)
    range_z: tuple[float, float] = (-2.0, 4.0)
    points_per_object: tuple[int, int] = (40, 120)
    ground_points: int = 2000

    def __post_init__(self):
        if any(int(n) < 0 for n in self.counts.values()):
            raise InputError("object counts must be >= 0")
        if self.points_per_object[0] < 1 or self.points_per_object[1] < self.points_per_object[0]:
            raise InputError("points_per_object must be a non-empty (lo, hi) range")
        if self.ground_points < 0:
            raise InputError("ground point count must be >= 0")


def _sample_box(rng, cls, spec: SynthSpec) -> Box3D:
    mean = CLASS_SIZES[cls]
    l, w, h = (m * rng.uniform(0.8, 1.2) for m in mean)
    margin = max(l, w)
    cx = rng.uniform(spec.range_x[0] + margin, spec.range_x[1] - margin)
    cy = rng.uniform(spec.range_y[0] + margin, spec.range_y[1] - margin)
    return Box3D(cx=cx, cy=cy, cz=0.5 * h, l=l, w=w, h=h,
                 yaw=rng.uniform(-np.pi, np.pi), class_id=cls)


def _surface_points(rng, box: Box3D, n: int) -> np.ndarray:
    """Uniform samples on the box surface, inset slightly for stability."""
    half = 0.5 * np.array([box.l, box.w, box.h])
    areas = np.array([box.w * box.h, box.l * box.h, box.l * box.w])  # +/-x, +/-y, +/-z
    probs = np.repeat(areas, 2) / (2.0 * areas.sum())
    faces = rng.choice(6, size=n, p=probs)
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    local[np.arange(n), axis] = sign * half[axis]
    local *= _SURFACE_INSET
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    pts = np.empty((n, 6))
    pts[:, 0] = box.cx + c * local[:, 0] - s * local[:, 1]
    pts[:, 1] = box.cy + s * local[:, 0] + c * local[:, 1]
    pts[:, 2] = box.cz + local[:, 2]
    pts[:, 3] = rng.uniform(0.0, 1.2, n)  # intensity, already clamped scale
    pts[:, 4] = rng.uniform(0.0, 0.5, n)  # elongation
    pts[:, 5] = 0.0
    return pts


def synth_scene(spec: SynthSpec) -> Scene:
    """Deterministic synthetic scene: non-overlapping boxes plus ground.

    Placement rejects any candidate whose BEV IoU with an accepted box is
    above zero; every object point satisfies containment by construction.
    """
    rng = np.random.default_rng(spec.rng_seed)
    boxes: list[Box3D] = []
    placed = np.zeros((0, 7))
    for cls, count in spec.counts.items():
        accepted = 0
        attempts = 0
        while accepted < int(count) and attempts < 200 * max(1, int(count)):
            attempts += 1
            cand = _sample_box(rng, ClassId(cls), spec)
            arr = boxes_to_array([cand])
            if placed.shape[0] and float(iou_bev_matrix(arr, placed).max()) > 0.0:
                continue
            boxes.append(cand)
            placed = np.concatenate([placed, arr], axis=0)
            accepted += 1
    clouds = []
    for box in boxes:
        n = int(rng.integers(spec.points_per_object[0], spec.points_per_object[1] + 1))
        clouds.append(_surface_points(rng, box, n))
    if spec.ground_points:
        ground = np.empty((spec.ground_points, 6))
        ground[:, 0] = rng.uniform(*spec.range_x, spec.ground_points)
        ground[:, 1] = rng.uniform(*spec.range_y, spec.ground_points)
        ground[:, 2] = np.abs(rng.normal(0.0, 0.02, spec.ground_points))
        ground[:, 3] = rng.uniform(0.0, 1.2, spec.ground_points)
        ground[:, 4] = rng.uniform(0.0, 0.5, spec.ground_points)
        ground[:, 5] = 0.0
        clouds.append(ground)
    points = np.concatenate(clouds, axis=0) if clouds else np.zeros((0, 6))
    return Scene(points, boxes)


def write_scene(scene_dir, scene: Scene, previous: np.ndarray | None = None) -> None:
    """Persist a scene as PCPD clouds, identity poses and a box JSONL."""
    d = Path(scene_dir)
    d.mkdir(parents=True, exist_ok=True)
    io_formats.write_pcpd(d / "points.pcpd", scene.points)
    io_formats.write_boxes_jsonl(d / "boxes.jsonl", scene.boxes)
    io_formats.write_pose(d / "pose_cur.json", np.eye(4))
    if previous is not None:
        io_formats.write_pcpd(d / "prev.pcpd", previous)
        io_formats.write_pose(d / "pose_prev.json", np.eye(4))


def write_corpus(out_dir, num_scenes: int, base_seed: int = 0,
                 spec: SynthSpec | None = None, with_previous: bool = True) -> list[Path]:
    """Write ``num_scenes`` seeded scenes under ``out_dir``."""
    dirs = []
    for i in range(num_scenes):
        s = spec or SynthSpec()
        s = SynthSpec(rng_seed=base_seed + i, counts=dict(s.counts),
                      range_x=s.range_x, range_y=s.range_y, range_z=s.range_z,
                      points_per_object=s.points_per_object,
                      ground_points=s.ground_points)
        scene = synth_scene(s)
        prev = None
        if with_previous:
            # Stand-in previous sweep: the ground-plane slice of the scene.
            ground = scene.points[scene.points[:, 2] <= 0.25]
            prev = ground[: max(1, ground.shape[0] // 2)]
        scene_dir = Path(out_dir) / f"scene_{i:04d}"
        write_scene(scene_dir, scene, prev)
        dirs.append(scene_dir)
    return sorted(dirs)


def scene_dirs(corpus_dir) -> list[Path]:
    dirs = sorted(p for p in Path(corpus_dir).iterdir() if p.is_dir())
    if not dirs:
        raise InputError(f"no scene directories under {corpus_dir}")
    return dirs


@dataclass
class SceneResult:
    detections: list
    gt_in_range: list
    num_points: int
    num_voxels: int


def _load_scene(scene_dir, cfg: PipelineConfig):
    d = Path(scene_dir)
    points = io_formats.read_pcpd(d / "points.pcpd")
    boxes = io_formats.read_boxes_jsonl(d / "boxes.jsonl")
    prev_path = d / "prev.pcpd"
    previous = None
    poses = (np.eye(4), np.eye(4))
    if cfg.num_frames >= 2 and prev_path.exists():
        previous = io_formats.read_pcpd(prev_path)
        poses = (io_formats.read_pose(d / "pose_cur.json"),
                 io_formats.read_pose(d / "pose_prev.json"))
    return points, previous, poses, boxes


def _in_range_boxes(boxes, grid) -> list:
    kept = []
    for b in boxes:
        if all(lo <= c < hi for c, lo, hi in
               zip((b.cx, b.cy, b.cz), grid.range_min, grid.range_max)):
            kept.append(b)
    return kept


def run_scene(points, previous, poses, boxes, cfg: PipelineConfig,
              workers: int | None = None) -> SceneResult:
    """Ideal-head pipeline over one scene's arrays."""
    grid = cfg.infer_grid()
    head_cfg = cfg.head_config()
    if previous is not None:
        points = densify(points, previous, poses[0], poses[1], cfg.frame_lag)
    points = filter_range(points, grid)
    voxels = voxelize(points, grid, cfg.max_points_per_voxel, cfg.max_voxels,
                      workers=workers)
    targets = encode_targets(boxes, grid, head_cfg)
    maps = head_maps_from_targets(targets, iou_fill=1.0)
    heat = maps.heatmap.copy()
    heat[heat < cfg.score_threshold] = 0.0
    peaks = topk_peaks(heat, cfg.top_k)
    keep = peaks.scores >= cfg.score_threshold
    peaks = PeakSet(peaks.class_ids[keep], peaks.cells[keep], peaks.scores[keep])
    dets = decode_boxes(peaks, maps, grid, head_cfg)
    if cfg.rescore_before_nms:
        dets = class_nms(rescore_detections(dets, cfg.rescore_config()), cfg.nms_config())
    else:
        # NMS on raw classification scores, IoU-aware rescoring afterwards.
        pre = [replace(d, confidence=d.score) for d in dets]
        dets = rescore_detections(class_nms(pre, cfg.nms_config()), cfg.rescore_config())
    return SceneResult(dets, _in_range_boxes(boxes, grid), points.shape[0], len(voxels))


def run_pipeline(cfg: PipelineConfig, corpus_dir, output_dir=None,
                 workers: int | None = None):
    """Run every scene of a corpus and evaluate against its ground truth.

    Returns (per-scene results, EvalReport). When ``output_dir`` is given,
    per-scene detection JSONL files and the metric report are written.
    """
    results = []
    for scene_dir in scene_dirs(corpus_dir):
        points, previous, poses, boxes = _load_scene(scene_dir, cfg)
        results.append((scene_dir, run_scene(points, previous, poses, boxes, cfg, workers)))
    report = evaluate_scenes(
        [(r.detections, r.gt_in_range) for _, r in results], cfg.eval_config())
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for scene_dir, r in results:
            io_formats.write_detections_jsonl(out / f"{scene_dir.name}_dets.jsonl", r.detections)
        (out / "report.json").write_text(json.dumps(report.as_dict(), indent=1))
    return [r for _, r in results], report


def _percentile(samples, q: float) -> float:
    return float(np.percentile(np.asarray(samples), q))


def bench(stage: str, corpus_dir, repetitions: int, cfg: PipelineConfig,
          workers: int | None = None) -> dict:
    """Per-stage wall-clock benchmark over a corpus.

    Data is loaded once outside the timers; one extra warm-up repetition
    runs first and is discarded. Reports min/median/p95 seconds per
    repetition plus voxelize throughput in points/s.
    """
    if repetitions < 3:
        raise InputError(f"need at least 3 repetitions, got {repetitions}")
    if stage not in BENCH_STAGES:
        raise InputError(f"unknown stage {stage!r}; choose from {BENCH_STAGES}")
    grid = cfg.infer_grid()
    head_cfg = cfg.head_config()
    scenes = [_load_scene(d, cfg) for d in scene_dirs(corpus_dir)]

    prepared = []
    total_points = 0
    for points, previous, poses, boxes in scenes:
        if previous is not None:
            points = densify(points, previous, poses[0], poses[1], cfg.frame_lag)
        cropped = filter_range(points, grid)
        targets = encode_targets(boxes, grid, head_cfg)
        maps = head_maps_from_targets(targets, iou_fill=1.0)
        heat = maps.heatmap.copy()
        heat[heat < cfg.score_threshold] = 0.0
        peaks = topk_peaks(heat, cfg.top_k)
        dets = rescore_detections(
            decode_boxes(peaks, maps, grid, head_cfg), cfg.rescore_config())
        prepared.append((points, cropped, boxes, maps, heat, peaks, dets))
        total_points += cropped.shape[0]

    def run_ingest():
        for points, previous, poses, _ in scenes:
            if previous is not None:
                points = densify(points, previous, poses[0], poses[1], cfg.frame_lag)
            filter_range(points, grid)

    def run_voxelize():
        for _, cropped, *_ in prepared:
            voxelize(cropped, grid, cfg.max_points_per_voxel, cfg.max_voxels, workers=workers)

    def run_encode():
        for _, _, boxes, *_ in prepared:
            encode_targets(boxes, grid, head_cfg)

    def run_decode():
        for *_, maps, heat, _, _ in prepared:
            decode_boxes(topk_peaks(heat, cfg.top_k), maps, grid, head_cfg)

    def run_nms():
        for *_, dets in prepared:
            class_nms(dets, cfg.nms_config())

    def run_e2e():
        for points, previous, poses, boxes in scenes:
            run_scene(points, previous, poses, boxes, cfg, workers)

    runners = {
        "ingest": run_ingest,
        "voxelize": run_voxelize,
        "encode": run_encode,
        "decode": run_decode,
        "nms": run_nms,
        "e2e": run_e2e,
    }
    wanted = list(BENCH_STAGES[:-1]) + ["e2e"] if stage == "e2e" else [stage]
    report = {"stages": {}, "repetitions": repetitions, "scenes": len(scenes)}
    for name in wanted:
        fn = runners[name]
        fn()  # warm-up, discarded
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        report["stages"][name] = {
            "min_s": min(samples),
            "median_s": statistics.median(samples),
            "p95_s": _percentile(samples, 95.0),
            "samples": samples,
        }
        if name == "voxelize":
            report["voxelize_throughput_pts_per_s"] = (
                total_points / report["stages"][name]["median_s"]
                if report["stages"][name]["median_s"] > 0 else float("inf")
            )
    return report


def bench_table(report: dict) -> str:
    rows = [f"{'stage':<10}{'min ms':>12}{'median ms':>12}{'p95 ms':>12}"]
    for name, stats in report["stages"].items():
        rows.append(
            f"{name:<10}{stats['min_s'] * 1e3:>12.3f}"
            f"{stats['median_s'] * 1e3:>12.3f}{stats['p95_s'] * 1e3:>12.3f}"
        )
    if "voxelize_throughput_pts_per_s" in report:
        rows.append(f"voxelize throughput: {report['voxelize_throughput_pts_per_s']:.0f} points/s")
    return "\n".join(rows)

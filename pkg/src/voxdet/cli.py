"""Command-line interface binding the pipeline modules together.

Exit codes: 0 success, 2 bad input, 3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import io_formats
from .augment import (
    Scene,
    apply_global_transform,
    build_gt_database,
    draw_global_transform,
    instance_noise,
    sample_gt,
)
from .config import PipelineConfig, load_config, preset
from .errors import InputError, InternalError, VoxdetError
from .evaluator import evaluate_scenes
from .geometry import Box3D, ClassId, iou_3d_axis_aligned, iou_bev_rotated
from .harness import (
    BENCH_STAGES,
    SynthSpec,
    bench,
    bench_table,
    run_pipeline,
    write_corpus,
)
from .ingest import convert_range_records, densify, filter_range
from .model_utils import fold_batchnorm, swa_average
from .postprocess import (
    Detection,
    NmsConfig,
    PeakSet,
    class_nms,
    decode_boxes,
    head_maps_from_targets,
    rescore,
    rescore_detections,
    topk_peaks,
)
from .targets import encode_targets
from .voxelizer import voxelize

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_INTERNAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxdet",
        description="Deterministic LiDAR detection pre/post-processing pipeline",
    )
    parser.add_argument("--config", type=Path, help="JSON pipeline config file")
    parser.add_argument("--preset", default="base", help="named preset: base | lite | full")
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    parser.add_argument("--threads", type=int, default=None, help="worker count for parallel stages")
    parser.add_argument("--output-dir", type=Path, default=Path("."), help="directory for outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene corpus")
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--vehicles", type=int, default=8)
    p.add_argument("--pedestrians", type=int, default=6)
    p.add_argument("--cyclists", type=int, default=6)
    p.add_argument("--half-extent", type=float, default=20.0,
                   help="scene half extent in meters for x and y")

    p = sub.add_parser("ingest", help="convert range-record CSV files to a PCPD cloud")
    p.add_argument("--current", type=Path, required=True,
                   help="CSV with rows range,intensity,elongation,x,y,z")
    p.add_argument("--previous", type=Path, help="optional previous-frame CSV")
    p.add_argument("--pose-cur", type=Path, help="pose JSON of the current frame")
    p.add_argument("--pose-prev", type=Path, help="pose JSON of the previous frame")
    p.add_argument("--crop", action="store_true", help="crop to the configured inference range")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("voxelize", help="voxelize a PCPD cloud into a VOXL dump")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--max-points-per-voxel", type=int, default=None)
    p.add_argument("--max-voxels", type=int, default=None)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("augment", help="augment a corpus with GT sampling, global noise")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--wanted", default="15,10,10",
                   help="per-class sample counts vehicle,pedestrian,cyclist")

    p = sub.add_parser("encode", help="encode a scene's boxes into a TGTS dump")
    p.add_argument("--scene", type=Path, required=True, help="scene directory")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("decode", help="decode a TGTS dump into detection JSONL")
    p.add_argument("--targets", type=Path, required=True)
    p.add_argument("--score-threshold", type=float, default=None)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    p.add_argument("--dets", type=Path, required=True, nargs="+")
    p.add_argument("--gts", type=Path, required=True, nargs="+")
    p.add_argument("-o", "--output", type=Path)

    p = sub.add_parser("run", help="run the ideal-head pipeline over a corpus")
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("bench", help="benchmark pipeline stages over a corpus")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--stage", default="e2e", choices=BENCH_STAGES)
    p.add_argument("--repetitions", type=int, default=5)

    p = sub.add_parser("swa-avg", help="average checkpoints element-wise")
    p.add_argument("checkpoints", type=Path, nargs="+")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("fold-bn", help="fold batch-norm parameters into linear layers")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--pairs", type=Path, required=True,
                   help="JSON list of [conv_prefix, bn_prefix] name pairs")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("kernel", help="run one numeric kernel over JSON stdin/stdout")
    p.add_argument("op", choices=["iou-bev", "iou-3d", "nms", "rescore", "evaluate"])

    return parser


def _pipeline_config(args) -> PipelineConfig:
    if args.config is not None:
        return load_config(args.config)
    return preset(args.preset)


def _read_csv_records(path: Path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot parse range records from {path}: {exc}") from exc
    return np.array(rows, dtype=np.float64).reshape(-1, 6)


def _box_from_flat(vals, cls) -> Box3D:
    return Box3D(cx=vals[0], cy=vals[1], cz=vals[2], l=vals[3], w=vals[4],
                 h=vals[5], yaw=vals[6], class_id=ClassId(int(cls)))


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        counts={ClassId.VEHICLE: args.vehicles, ClassId.PEDESTRIAN: args.pedestrians,
                ClassId.CYCLIST: args.cyclists},
        range_x=(-args.half_extent, args.half_extent),
        range_y=(-args.half_extent, args.half_extent),
    )
    dirs = write_corpus(args.output_dir, args.scenes, base_seed=args.seed, spec=spec)
    print(f"wrote {len(dirs)} scenes under {args.output_dir}")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    cfg = _pipeline_config(args)
    points = convert_range_records(_read_csv_records(args.current))
    if args.previous is not None:
        if args.pose_cur is None or args.pose_prev is None:
            raise InputError("densification needs --pose-cur and --pose-prev")
        prev = convert_range_records(_read_csv_records(args.previous))
        points = densify(points, prev, io_formats.read_pose(args.pose_cur),
                         io_formats.read_pose(args.pose_prev), cfg.frame_lag)
    if args.crop:
        points = filter_range(points, cfg.infer_grid())
    io_formats.write_pcpd(args.output, points)
    print(f"wrote {points.shape[0]} points to {args.output}")
    return EXIT_OK


def _cmd_voxelize(args) -> int:
    cfg = _pipeline_config(args)
    points = io_formats.read_pcpd(args.input)
    voxels = voxelize(points, cfg.infer_grid(), args.max_points_per_voxel,
                      args.max_voxels, workers=args.threads)
    io_formats.write_voxl(args.output, voxels)
    print(f"wrote {len(voxels)} voxels to {args.output} "
          f"(dropped {voxels.dropped_points} points, {voxels.dropped_voxels} voxels)")
    return EXIT_OK


def _load_scene_for_augment(scene_dir: Path) -> Scene:
    return Scene(io_formats.read_pcpd(scene_dir / "points.pcpd"),
                 io_formats.read_boxes_jsonl(scene_dir / "boxes.jsonl"))


def _cmd_augment(args) -> int:
    wanted_counts = [int(x) for x in args.wanted.split(",")]
    if len(wanted_counts) != 3:
        raise InputError("--wanted must be three comma-separated counts")
    wanted = dict(zip(ClassId, wanted_counts))
    dirs = sorted(p for p in args.corpus.iterdir() if p.is_dir())
    if not dirs:
        raise InputError(f"no scene directories under {args.corpus}")
    scenes = [_load_scene_for_augment(d) for d in dirs]
    db = build_gt_database(scenes)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    io_formats.save_gt_database(db, args.output_dir / "gt_index.json",
                                args.output_dir / "gt_points.pcpd")
    rng = np.random.default_rng(args.seed)
    for d, scene in zip(dirs, scenes):
        seed = int(rng.integers(0, 2 ** 31))
        out = sample_gt(db, scene, wanted, rng_seed=seed)
        out = apply_global_transform(out, draw_global_transform(np.random.default_rng(seed + 1)))
        out = instance_noise(out, rng_seed=seed + 2)
        target = args.output_dir / d.name
        target.mkdir(parents=True, exist_ok=True)
        io_formats.write_pcpd(target / "points.pcpd", out.points)
        io_formats.write_boxes_jsonl(target / "boxes.jsonl", out.boxes)
    print(f"augmented {len(dirs)} scenes into {args.output_dir}")
    return EXIT_OK


def _cmd_encode(args) -> int:
    cfg = _pipeline_config(args)
    boxes = io_formats.read_boxes_jsonl(args.scene / "boxes.jsonl")
    ts = encode_targets(boxes, cfg.infer_grid(), cfg.head_config())
    io_formats.write_tgts(args.output, ts)
    print(f"encoded {len(ts.obj_index)} objects to {args.output}")
    return EXIT_OK


def _cmd_decode(args) -> int:
    cfg = _pipeline_config(args)
    threshold = cfg.score_threshold if args.score_threshold is None else args.score_threshold
    ts = io_formats.read_tgts(args.targets)
    expected = cfg.head_config().map_shape(cfg.infer_grid())
    if ts.heatmap.shape[1:] != expected:
        raise InputError(
            f"{args.targets}: target maps are {ts.heatmap.shape[1:]}, but the "
            f"configured grid decodes {expected}; pass the matching --config"
        )
    maps = head_maps_from_targets(ts, iou_fill=1.0)
    heat = maps.heatmap.copy()
    heat[heat < threshold] = 0.0
    peaks = topk_peaks(heat, cfg.top_k)
    keep = peaks.scores >= threshold
    peaks = PeakSet(peaks.class_ids[keep], peaks.cells[keep], peaks.scores[keep])
    dets = decode_boxes(peaks, maps, cfg.infer_grid(), cfg.head_config())
    dets = class_nms(rescore_detections(dets, cfg.rescore_config()), cfg.nms_config())
    io_formats.write_detections_jsonl(args.output, dets)
    print(f"decoded {len(dets)} detections to {args.output}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _pipeline_config(args)
    if len(args.dets) != len(args.gts):
        raise InputError("need one ground-truth file per detection file")
    pairs = [
        (io_formats.read_detections_jsonl(d), io_formats.read_boxes_jsonl(g))
        for d, g in zip(args.dets, args.gts)
    ]
    report = evaluate_scenes(pairs, cfg.eval_config())
    print(report.as_table())
    if args.output is not None:
        args.output.write_text(json.dumps(report.as_dict(), indent=1))
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    _, report = run_pipeline(cfg, args.corpus, output_dir=args.output_dir,
                             workers=args.threads)
    print(report.as_table())
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _pipeline_config(args)
    report = bench(args.stage, args.corpus, args.repetitions, cfg, workers=args.threads)
    print(bench_table(report))
    args.output_dir.mkdir(parents=True, exist_ok=True)
    (args.output_dir / "bench.json").write_text(json.dumps(report, indent=1))
    return EXIT_OK


def _cmd_swa_avg(args) -> int:
    checkpoints = [io_formats.read_ckpt(p) for p in args.checkpoints]
    io_formats.write_ckpt(args.output, swa_average(checkpoints))
    print(f"averaged {len(checkpoints)} checkpoints into {args.output}")
    return EXIT_OK


def _cmd_fold_bn(args) -> int:
    ckpt = io_formats.read_ckpt(args.checkpoint)
    try:
        pairs = json.loads(args.pairs.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.pairs}: malformed JSON ({exc})") from exc
    for conv, bn in pairs:
        w, b = fold_batchnorm(
            ckpt[f"{conv}.weight"], ckpt[f"{conv}.bias"],
            ckpt[f"{bn}.gamma"], ckpt[f"{bn}.beta"],
            ckpt[f"{bn}.mean"], ckpt[f"{bn}.var"],
            float(ckpt[f"{bn}.eps"]) if f"{bn}.eps" in ckpt else 1e-5,
        )
        ckpt[f"{conv}.weight"] = w.astype(np.float32)
        ckpt[f"{conv}.bias"] = b.astype(np.float32)
        for suffix in ("gamma", "beta", "mean", "var", "eps"):
            ckpt.pop(f"{bn}.{suffix}", None)
    io_formats.write_ckpt(args.output, ckpt)
    print(f"folded {len(pairs)} layer pairs into {args.output}")
    return EXIT_OK


def _cmd_kernel(args) -> int:
    try:
        payload = json.load(sys.stdin)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed kernel JSON on stdin: {exc}") from exc
    if args.op == "iou-bev":
        a = _box_from_flat(payload["a"], payload.get("class_a", 0))
        b = _box_from_flat(payload["b"], payload.get("class_b", 0))
        out = {"iou": iou_bev_rotated(a, b)}
    elif args.op == "iou-3d":
        a = _box_from_flat(payload["a"], payload.get("class_a", 0))
        b = _box_from_flat(payload["b"], payload.get("class_b", 0))
        out = {"iou": iou_3d_axis_aligned(a, b)}
    elif args.op == "rescore":
        out = {"confidence": rescore(payload["score"], payload["iou"], payload["alpha"])}
    elif args.op == "nms":
        boxes = payload["boxes"]
        scores = payload["scores"]
        classes = payload["classes"]
        if not (len(boxes) == len(scores) == len(classes)):
            raise InputError("nms arrays must share one length")
        dets = [
            Detection(box=_box_from_flat(b, c), class_id=ClassId(int(c)),
                      score=float(s), iou_pred=1.0, confidence=float(s))
            for b, s, c in zip(boxes, scores, classes)
        ]
        cfg = NmsConfig(iou_thresholds={
            ClassId(int(k)): float(v)
            for k, v in payload.get("thresholds", {
                0: 0.8, 1: 0.55, 2: 0.55}).items()
        })
        kept = class_nms(dets, cfg)
        ids = {id(d) for d in kept}
        out = {"keep": [i for i, d in enumerate(dets) if id(d) in ids]}
    else:  # evaluate
        dets = [
            Detection(box=_box_from_flat(b, c), class_id=ClassId(int(c)),
                      score=float(s), iou_pred=1.0, confidence=float(s))
            for b, s, c in zip(payload["det_boxes"], payload["det_scores"],
                               payload["det_classes"])
        ]
        gts = [
            _box_from_flat(b, c)
            for b, c in zip(payload["gt_boxes"], payload["gt_classes"])
        ]
        report = evaluate_scenes([(dets, gts)])
        out = report.as_dict()
    json.dump(out, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "voxelize": _cmd_voxelize,
    "augment": _cmd_augment,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "run": _cmd_run,
    "bench": _cmd_bench,
    "swa-avg": _cmd_swa_avg,
    "fold-bn": _cmd_fold_bn,
    "kernel": _cmd_kernel,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (InputError, VoxdetError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())

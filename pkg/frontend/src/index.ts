/**
 * Flat-array bindings for the LiDAR detection pipeline core.
 *
 * Every function takes plain typed arrays, marshals them over the core's
 * documented interfaces (binary point-cloud / voxel files and the JSON
 * kernel channel of the CLI) and returns callee-allocated typed arrays.
 * Inputs are never mutated. Core errors are re-thrown as `Error` with
 * the original message.
 */

import { writeFileSync, readFileSync } from "node:fs";
import { join } from "node:path";

import {
  CLASS_NAMES,
  POINT_DIM,
  VoxelizeResult,
  decodeVoxl,
  encodeBoxesJsonl,
  encodePcpd,
} from "./formats.js";
import { runCli, withTempDir } from "./runner.js";

export { POINT_DIM, CLASS_NAMES, encodePcpd, decodePcpd, decodeVoxl } from "./formats.js";
export type { VoxelizeResult } from "./formats.js";
export { cliCommand } from "./runner.js";

export interface GridSpec {
  /** (min, max) metric range per axis, x / y / z. */
  rangeX: [number, number];
  rangeY: [number, number];
  rangeZ: [number, number];
  /** Cell size per axis in meters. */
  cell: [number, number, number];
}

export interface VoxelizeOptions {
  maxPointsPerVoxel?: number;
  maxVoxels?: number;
}

export interface EvalReport {
  per_class: Record<string, { ap: number; aph: number }>;
  mean_ap: number;
  mean_aph: number;
}

function boxPayload(box: ArrayLike<number>): number[] {
  if (box.length !== 7) {
    throw new Error(`a box is 7 numbers (cx, cy, cz, l, w, h, yaw), got ${box.length}`);
  }
  return Array.from(box);
}

function kernel<T>(op: string, payload: unknown): T {
  const out = runCli(["kernel", op], JSON.stringify(payload));
  return JSON.parse(out.toString("utf-8")) as T;
}

/**
 * Mean-feature voxelization of a flat (N * 6) float32 cloud.
 *
 * Delegates to the core voxelizer through its point-cloud and voxel-dump
 * formats; voxels arrive in first-appearance order with exact counts.
 */
export function voxelize(
  cloud: Float32Array,
  grid: GridSpec,
  options: VoxelizeOptions = {},
): VoxelizeResult {
  if (cloud.length % POINT_DIM !== 0) {
    throw new Error(
      `point buffer length ${cloud.length} is not divisible by ${POINT_DIM}`,
    );
  }
  if (cloud.length === 0) {
    return {
      coords: new Int32Array(0),
      features: new Float32Array(0),
      counts: new Int32Array(0),
      dim: POINT_DIM,
    };
  }
  return withTempDir((dir) => {
    const configPath = join(dir, "grid.json");
    writeFileSync(
      configPath,
      JSON.stringify({
        infer_range_x: grid.rangeX,
        infer_range_y: grid.rangeY,
        range_z: grid.rangeZ,
        cell: grid.cell,
      }),
    );
    const cloudPath = join(dir, "cloud.pcpd");
    writeFileSync(cloudPath, encodePcpd(cloud));
    const outPath = join(dir, "out.voxl");
    const args = [
      "--config", configPath,
      "voxelize", "--input", cloudPath, "-o", outPath,
    ];
    if (options.maxPointsPerVoxel !== undefined) {
      args.push("--max-points-per-voxel", String(options.maxPointsPerVoxel));
    }
    if (options.maxVoxels !== undefined) {
      args.push("--max-voxels", String(options.maxVoxels));
    }
    runCli(args);
    return decodeVoxl(readFileSync(outPath));
  });
}

/** Rotated BEV IoU of two 7-number boxes. */
export function iouBev(a: ArrayLike<number>, b: ArrayLike<number>): number {
  return kernel<{ iou: number }>("iou-bev", {
    a: boxPayload(a),
    b: boxPayload(b),
  }).iou;
}

/** Axis-aligned 3D IoU (yaw ignored) of two 7-number boxes. */
export function iou3d(a: ArrayLike<number>, b: ArrayLike<number>): number {
  return kernel<{ iou: number }>("iou-3d", {
    a: boxPayload(a),
    b: boxPayload(b),
  }).iou;
}

/** IoU-aware confidence f = score^(1 - alpha) * iou^alpha. */
export function rescore(score: number, iou: number, alpha: number): number {
  return kernel<{ confidence: number }>("rescore", { score, iou, alpha }).confidence;
}

/**
 * Class-specific rotated NMS over flat arrays.
 *
 * `boxes` is (N * 7) row-major; `scores` and `classes` have length N.
 * Returns indices of the kept boxes in ascending input order.
 */
export function nms(
  boxes: Float32Array | Float64Array,
  scores: ArrayLike<number>,
  classes: ArrayLike<number>,
  thresholds?: Record<number, number>,
): Uint32Array {
  const n = scores.length;
  if (boxes.length !== n * 7 || classes.length !== n) {
    throw new Error(
      `nms arrays disagree: ${boxes.length} box values, ${n} scores, ${classes.length} classes`,
    );
  }
  const rows: number[][] = [];
  for (let i = 0; i < n; i++) {
    rows.push(Array.from(boxes.subarray(i * 7, i * 7 + 7)));
  }
  const payload: Record<string, unknown> = {
    boxes: rows,
    scores: Array.from(scores),
    classes: Array.from(classes),
  };
  if (thresholds !== undefined) {
    payload.thresholds = thresholds;
  }
  const kept = kernel<{ keep: number[] }>("nms", payload).keep;
  return Uint32Array.from(kept.sort((a, b) => a - b));
}

export interface DetectionArrays {
  /** (N * 7) row-major box parameters. */
  boxes: Float32Array | Float64Array;
  scores: ArrayLike<number>;
  classes: ArrayLike<number>;
}

export interface GroundTruthArrays {
  boxes: Float32Array | Float64Array;
  classes: ArrayLike<number>;
}

function boxRows(boxes: Float32Array | Float64Array, n: number): number[][] {
  if (boxes.length !== n * 7) {
    throw new Error(`box buffer length ${boxes.length} is not 7 x ${n}`);
  }
  const rows: number[][] = [];
  for (let i = 0; i < n; i++) {
    rows.push(Array.from(boxes.subarray(i * 7, i * 7 + 7)));
  }
  return rows;
}

/** Per-class AP / heading-weighted APH plus their means over the classes. */
export function evaluate(dets: DetectionArrays, gts: GroundTruthArrays): EvalReport {
  return kernel<EvalReport>("evaluate", {
    det_boxes: boxRows(dets.boxes, dets.scores.length),
    det_scores: Array.from(dets.scores),
    det_classes: Array.from(dets.classes),
    gt_boxes: boxRows(gts.boxes, gts.classes.length),
    gt_classes: Array.from(gts.classes),
  });
}

/**
 * File-based evaluation through the core's `eval` subcommand; same
 * metrics as {@link evaluate} but exercised over the JSONL interface.
 */
export function evaluateViaFiles(dets: DetectionArrays, gts: GroundTruthArrays): EvalReport {
  return withTempDir((dir) => {
    const detPath = join(dir, "dets.jsonl");
    const gtPath = join(dir, "gts.jsonl");
    const reportPath = join(dir, "report.json");
    writeFileSync(detPath, encodeBoxesJsonl(dets.boxes, dets.classes, dets.scores));
    writeFileSync(gtPath, encodeBoxesJsonl(gts.boxes, gts.classes));
    runCli(["eval", "--dets", detPath, "--gts", gtPath, "-o", reportPath]);
    return JSON.parse(readFileSync(reportPath, "utf-8")) as EvalReport;
  });
}

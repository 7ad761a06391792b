/**
 * Binary interchange formats shared with the core pipeline.
 *
 * Point clouds ("PCPD"): magic, u16 version = 1, u64 count, u8 dim = 6,
 * then float32 little-endian rows (x, y, z, intensity, elongation, dt).
 * Voxel dumps ("VOXL"): magic, u64 count, u8 dim, then per voxel
 * (u32 cx, u32 cy, u32 cz, u32 count, float32 * dim).
 */

export const POINT_DIM = 6;

const PCPD_MAGIC = "PCPD";
const PCPD_VERSION = 1;
const VOXL_MAGIC = "VOXL";

export interface VoxelizeResult {
  /** (M * 3) cell indices, row-major (cx, cy, cz). */
  coords: Int32Array;
  /** (M * dim) mean feature vectors, row-major. */
  features: Float32Array;
  /** (M) point counts per voxel. */
  counts: Int32Array;
  /** Feature dimension of one voxel row. */
  dim: number;
}

export function encodePcpd(points: Float32Array): Buffer {
  if (points.length % POINT_DIM !== 0) {
    throw new Error(
      `point buffer length ${points.length} is not divisible by ${POINT_DIM}`,
    );
  }
  const count = points.length / POINT_DIM;
  const out = Buffer.alloc(15 + points.length * 4);
  out.write(PCPD_MAGIC, 0, "ascii");
  out.writeUInt16LE(PCPD_VERSION, 4);
  out.writeBigUInt64LE(BigInt(count), 6);
  out.writeUInt8(POINT_DIM, 14);
  const view = new DataView(out.buffer, out.byteOffset + 15);
  for (let i = 0; i < points.length; i++) {
    view.setFloat32(i * 4, points[i], true);
  }
  return out;
}

export function decodePcpd(buf: Buffer): Float32Array {
  if (buf.length < 15 || buf.toString("ascii", 0, 4) !== PCPD_MAGIC) {
    throw new Error("not a PCPD point-cloud file");
  }
  const version = buf.readUInt16LE(4);
  if (version !== PCPD_VERSION) {
    throw new Error(`unsupported PCPD version ${version}`);
  }
  const count = Number(buf.readBigUInt64LE(6));
  const dim = buf.readUInt8(14);
  const expected = 15 + count * dim * 4;
  if (buf.length < expected) {
    throw new Error("truncated PCPD payload");
  }
  const view = new DataView(buf.buffer, buf.byteOffset + 15);
  const out = new Float32Array(count * dim);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getFloat32(i * 4, true);
  }
  return out;
}

export function decodeVoxl(buf: Buffer): VoxelizeResult {
  if (buf.length < 13 || buf.toString("ascii", 0, 4) !== VOXL_MAGIC) {
    throw new Error("not a VOXL voxel dump");
  }
  const count = Number(buf.readBigUInt64LE(4));
  const dim = buf.readUInt8(12);
  const record = 16 + dim * 4;
  if (buf.length < 13 + count * record) {
    throw new Error("truncated VOXL payload");
  }
  const coords = new Int32Array(count * 3);
  const counts = new Int32Array(count);
  const features = new Float32Array(count * dim);
  const view = new DataView(buf.buffer, buf.byteOffset + 13);
  for (let i = 0; i < count; i++) {
    const base = i * record;
    coords[i * 3] = view.getUint32(base, true);
    coords[i * 3 + 1] = view.getUint32(base + 4, true);
    coords[i * 3 + 2] = view.getUint32(base + 8, true);
    counts[i] = view.getUint32(base + 12, true);
    for (let d = 0; d < dim; d++) {
      features[i * dim + d] = view.getFloat32(base + 16 + d * 4, true);
    }
  }
  return { coords, features, counts, dim };
}

export interface BoxRecord {
  cx: number;
  cy: number;
  cz: number;
  l: number;
  w: number;
  h: number;
  yaw: number;
  class: string;
  score?: number;
  iou_pred?: number;
  confidence?: number;
}

export const CLASS_NAMES = ["VEHICLE", "PEDESTRIAN", "CYCLIST"] as const;

/** One JSON line per box, the core's detection/ground-truth format. */
export function encodeBoxesJsonl(
  boxes: ArrayLike<number>,
  classes: ArrayLike<number>,
  scores?: ArrayLike<number>,
): string {
  const n = classes.length;
  if (boxes.length !== n * 7) {
    throw new Error(`box buffer length ${boxes.length} is not 7 x ${n}`);
  }
  const lines: string[] = [];
  for (let i = 0; i < n; i++) {
    const record: BoxRecord = {
      cx: boxes[i * 7],
      cy: boxes[i * 7 + 1],
      cz: boxes[i * 7 + 2],
      l: boxes[i * 7 + 3],
      w: boxes[i * 7 + 4],
      h: boxes[i * 7 + 5],
      yaw: boxes[i * 7 + 6],
      class: CLASS_NAMES[classes[i]],
    };
    if (scores !== undefined) {
      record.score = scores[i];
      record.iou_pred = 1.0;
      record.confidence = scores[i];
    }
    lines.push(JSON.stringify(record));
  }
  return lines.join("\n") + (n ? "\n" : "");
}

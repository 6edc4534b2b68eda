/**
 * Writer/reader for the grounding pipeline's flat binary checkpoint
 * container: magic "TPCK", version u32, tensor count u32, then per tensor
 * name length u32 + UTF-8 name, rank u32, dims u32 each, raw
 * little-endian float32 values.
 */

import { createHash } from "node:crypto";
import { writeFileSync, readFileSync } from "node:fs";

const MAGIC = "TPCK";
const VERSION = 1;

export interface Tensor {
  name: string;
  shape: number[];
  /** row-major values */
  values: Float32Array;
}

export interface TpckManifest {
  format: "TPCK";
  version: number;
  tensors: { name: string; shape: number[]; count: number }[];
  sha256: string;
}

export function encodeTpck(tensors: Tensor[]): Buffer {
  const parts: Buffer[] = [];
  parts.push(Buffer.from(MAGIC, "ascii"));
  const header = Buffer.alloc(8);
  header.writeUInt32LE(VERSION, 0);
  header.writeUInt32LE(tensors.length, 4);
  parts.push(header);
  for (const t of tensors) {
    const count = t.shape.reduce((a, b) => a * b, 1);
    if (count !== t.values.length) {
      throw new Error(`tensor ${t.name}: shape ${t.shape} != ${t.values.length} values`);
    }
    const name = Buffer.from(t.name, "utf-8");
    const meta = Buffer.alloc(4 + name.length + 4 + 4 * t.shape.length);
    let offset = 0;
    meta.writeUInt32LE(name.length, offset);
    offset += 4;
    name.copy(meta, offset);
    offset += name.length;
    meta.writeUInt32LE(t.shape.length, offset);
    offset += 4;
    for (const dim of t.shape) {
      meta.writeUInt32LE(dim, offset);
      offset += 4;
    }
    parts.push(meta);
    const data = Buffer.alloc(4 * t.values.length);
    for (let i = 0; i < t.values.length; i++) {
      data.writeFloatLE(t.values[i], 4 * i);
    }
    parts.push(data);
  }
  return Buffer.concat(parts);
}

export function writeTpck(path: string, tensors: Tensor[]): TpckManifest {
  const blob = encodeTpck(tensors);
  writeFileSync(path, blob);
  const manifest: TpckManifest = {
    format: "TPCK",
    version: VERSION,
    tensors: tensors.map((t) => ({
      name: t.name,
      shape: t.shape,
      count: t.values.length,
    })),
    sha256: createHash("sha256").update(blob).digest("hex"),
  };
  writeFileSync(path + ".manifest.json", JSON.stringify(manifest, null, 2) + "\n");
  return manifest;
}

export function readTpck(path: string): Tensor[] {
  const blob = readFileSync(path);
  if (blob.subarray(0, 4).toString("ascii") !== MAGIC) {
    throw new Error(`${path}: bad magic`);
  }
  const version = blob.readUInt32LE(4);
  if (version !== VERSION) {
    throw new Error(`${path}: unsupported version ${version}`);
  }
  const count = blob.readUInt32LE(8);
  let offset = 12;
  const tensors: Tensor[] = [];
  for (let i = 0; i < count; i++) {
    const nameLen = blob.readUInt32LE(offset);
    offset += 4;
    const name = blob.subarray(offset, offset + nameLen).toString("utf-8");
    offset += nameLen;
    const rank = blob.readUInt32LE(offset);
    offset += 4;
    const shape: number[] = [];
    for (let d = 0; d < rank; d++) {
      shape.push(blob.readUInt32LE(offset));
      offset += 4;
    }
    const n = shape.reduce((a, b) => a * b, 1);
    const values = new Float32Array(n);
    for (let v = 0; v < n; v++) {
      values[v] = blob.readFloatLE(offset);
      offset += 4;
    }
    tensors.push({ name, shape, values });
  }
  return tensors;
}

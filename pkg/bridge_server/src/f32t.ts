/**
 * The .f32t tensor raster and the wire encoding of arrays.
 *
 * File layout: magic "F32T", three little-endian uint32 (C, H, W), then
 * C*H*W little-endian IEEE-754 float32 in planar channel order. On the
 * wire the same float32 payload travels base64-wrapped next to its shape.
 */

import { readFileSync } from 'fs';

export interface Tensor {
  shape: number[];
  data: Float64Array; // float64 working copy; serialization narrows back
}

const MAGIC = 'F32T';

export function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function readF32t(path: string): Tensor {
  const buf = readFileSync(path);
  if (buf.length < 16 || buf.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error(`${path}: not an .f32t file`);
  }
  const c = buf.readUInt32LE(4);
  const h = buf.readUInt32LE(8);
  const w = buf.readUInt32LE(12);
  if (c === 0 || h === 0 || w === 0) {
    throw new Error(`${path}: zero-sized tensor ${c}x${h}x${w}`);
  }
  const count = c * h * w;
  if (buf.length !== 16 + 4 * count) {
    throw new Error(`${path}: truncated payload`);
  }
  const view = new DataView(buf.buffer, buf.byteOffset + 16, 4 * count);
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = view.getFloat32(4 * i, true);
  }
  return { shape: [c, h, w], data };
}

export interface WireArray {
  shape: number[];
  data: string;
}

export function encodeArray(t: Tensor): WireArray {
  const count = elementCount(t.shape);
  const bytes = Buffer.alloc(4 * count);
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.length);
  for (let i = 0; i < count; i++) {
    view.setFloat32(4 * i, t.data[i], true);
  }
  return { shape: [...t.shape], data: bytes.toString('base64') };
}

export function decodeArray(obj: unknown): Tensor {
  if (typeof obj !== 'object' || obj === null || !('shape' in obj) || !('data' in obj)) {
    throw new Error(`array payload must carry 'shape' and 'data'`);
  }
  const { shape, data } = obj as { shape: unknown; data: unknown };
  if (
    !Array.isArray(shape) ||
    shape.length === 0 ||
    !shape.every((d) => Number.isInteger(d) && d >= 1)
  ) {
    throw new Error(`bad array shape ${JSON.stringify(shape)}`);
  }
  if (typeof data !== 'string' || !/^[A-Za-z0-9+/]*={0,2}$/.test(data) || data.length % 4 !== 0) {
    throw new Error('array data is not valid base64');
  }
  const raw = Buffer.from(data, 'base64');
  const count = elementCount(shape as number[]);
  if (raw.length !== 4 * count) {
    throw new Error(
      `array data holds ${raw.length} bytes, shape [${shape.join(', ')}] needs ${4 * count}`
    );
  }
  const view = new DataView(raw.buffer, raw.byteOffset, raw.length);
  const out = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = view.getFloat32(4 * i, true);
  }
  return { shape: shape as number[], data: out };
}

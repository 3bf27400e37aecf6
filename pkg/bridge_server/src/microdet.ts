/**
 * The micro detector the reference server wraps: two stride-2 convolutions
 * with edge-replicated padding and ReLU, then a 1x1 sigmoid head. One
 * detection per (feature cell, class) on a fixed 16-pixel anchor grid. The
 * 1x1 head makes the gradient of any cell's class logit with respect to the
 * feature stack closed-form: the head weight row at that cell, zero
 * elsewhere.
 *
 * All arithmetic runs in float64 over float32-quantized weights, matching
 * in-process consumers of the same weight files to well below the 1e-6
 * interchange tolerance.
 */

import { readFileSync } from 'fs';
import { join } from 'path';
import { readF32t, Tensor } from './f32t.js';

export const CELL_STRIDE = 4;
export const ANCHOR_SIDE = 4 * CELL_STRIDE;

export interface Model {
  inputChw: [number, number, number];
  k: number;
  nClasses: number;
  label: string;
  conv1W: Tensor; // (k, 3, 5, 5)
  conv1B: Tensor; // (k)
  conv2W: Tensor; // (k, k, 3, 3)
  conv2B: Tensor; // (k)
  headW: Tensor; // (nClasses + 1, k)
  headB: Tensor; // (nClasses + 1)
}

export interface Detection {
  box: [number, number, number, number];
  class_id: number;
  score: number;
}

interface LayerEntry {
  name: string;
  shape: number[];
  file: string;
}

export function loadWeights(dir: string): Model {
  const manifest = JSON.parse(readFileSync(join(dir, 'weights.json'), 'utf8'));
  if (manifest.format !== 'microdet-weights' || manifest.version !== 1) {
    throw new Error(`${dir}: not a micro-detector weights manifest`);
  }
  const tensors = new Map<string, Tensor>();
  for (const layer of manifest.layers as LayerEntry[]) {
    const t = readF32t(join(dir, layer.file));
    const want = layer.shape.reduce((a: number, b: number) => a * b, 1);
    if (t.data.length !== want) {
      throw new Error(`${layer.file}: holds ${t.data.length} values, manifest says ${want}`);
    }
    tensors.set(layer.name, { shape: layer.shape, data: t.data });
  }
  const get = (name: string): Tensor => {
    const t = tensors.get(name);
    if (!t) throw new Error(`${dir}: manifest lists no layer '${name}'`);
    return t;
  };
  const [c, h, w] = manifest.input as [number, number, number];
  if (c !== 3 || h % 4 || w % 4) {
    throw new Error(`${dir}: unsupported input geometry [${c}, ${h}, ${w}]`);
  }
  return {
    inputChw: [c, h, w],
    k: manifest.maps as number,
    nClasses: manifest.classes as number,
    label: String(manifest.label ?? 'custom'),
    conv1W: get('conv1.weight'),
    conv1B: get('conv1.bias'),
    conv2W: get('conv2.weight'),
    conv2B: get('conv2.bias'),
    headW: get('head.weight'),
    headB: get('head.bias'),
  };
}

/** Stride-2 cross-correlation with edge-replicated borders. */
function convStride2(x: Tensor, w: Tensor, b: Tensor, pad: number): Tensor {
  const [cIn, h, wd] = x.shape;
  const [cOut, , kh, kw] = w.shape;
  const oh = Math.floor((h + 2 * pad - kh) / 2) + 1;
  const ow = Math.floor((wd + 2 * pad - kw) / 2) + 1;
  const out = new Float64Array(cOut * oh * ow);
  for (let co = 0; co < cOut; co++) {
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        let acc = 0;
        for (let ci = 0; ci < cIn; ci++) {
          for (let ky = 0; ky < kh; ky++) {
            let yy = oy * 2 + ky - pad;
            yy = yy < 0 ? 0 : yy >= h ? h - 1 : yy;
            for (let kx = 0; kx < kw; kx++) {
              let xx = ox * 2 + kx - pad;
              xx = xx < 0 ? 0 : xx >= wd ? wd - 1 : xx;
              acc +=
                w.data[((co * cIn + ci) * kh + ky) * kw + kx] *
                x.data[(ci * h + yy) * wd + xx];
            }
          }
        }
        out[(co * oh + oy) * ow + ox] = acc + b.data[co];
      }
    }
  }
  return { shape: [cOut, oh, ow], data: out };
}

function reluInPlace(t: Tensor): Tensor {
  for (let i = 0; i < t.data.length; i++) {
    if (t.data[i] < 0) t.data[i] = 0;
  }
  return t;
}

export function features(model: Model, image: Tensor): Tensor {
  const [c, h, w] = model.inputChw;
  if (image.shape.length !== 3 || image.shape[0] !== c || image.shape[1] !== h || image.shape[2] !== w) {
    throw new Error(
      `image shape [${image.shape.join(', ')}] does not match detector input [${c}, ${h}, ${w}]`
    );
  }
  const a1 = reluInPlace(convStride2(image, model.conv1W, model.conv1B, 2));
  return reluInPlace(convStride2(a1, model.conv2W, model.conv2B, 1));
}

function sigmoid(x: number): number {
  return 1 / (1 + Math.exp(-x));
}

export function anchorBox(cx: number, cy: number): [number, number, number, number] {
  const x = (cx + 0.5) * CELL_STRIDE;
  const y = (cy + 0.5) * CELL_STRIDE;
  const half = ANCHOR_SIDE / 2;
  return [x - half, y - half, x + half, y + half];
}

export interface DetectResult {
  detections: Detection[];
  cells: Array<[number, number]>; // (cx, cy) per detection, for grad lookup
  features: Tensor;
}

/**
 * One detection per (cell, class), sorted by score descending; ties keep
 * the row-major cell, class-minor enumeration order.
 */
export function detect(model: Model, image: Tensor): DetectResult {
  const feats = features(model, image);
  const [k, fh, fw] = feats.shape;
  const ncls = model.nClasses;
  const n = fh * fw * ncls;
  const scores = new Float64Array(n);
  for (let cy = 0; cy < fh; cy++) {
    for (let cx = 0; cx < fw; cx++) {
      for (let cls = 0; cls < ncls; cls++) {
        let logit = model.headB.data[cls];
        for (let i = 0; i < k; i++) {
          logit += model.headW.data[cls * k + i] * feats.data[(i * fh + cy) * fw + cx];
        }
        scores[(cy * fw + cx) * ncls + cls] = sigmoid(logit);
      }
    }
  }
  const order = Array.from({ length: n }, (_, i) => i);
  order.sort((a, b) => scores[b] - scores[a] || a - b);
  const detections: Detection[] = [];
  const cells: Array<[number, number]> = [];
  for (const idx of order) {
    const cell = Math.floor(idx / ncls);
    const cls = idx % ncls;
    const cy = Math.floor(cell / fw);
    const cx = cell % fw;
    detections.push({ box: anchorBox(cx, cy), class_id: cls, score: scores[idx] });
    cells.push([cx, cy]);
  }
  return { detections, cells, features: feats };
}

/** Gradient of one detection's pre-sigmoid logit w.r.t. the feature stack. */
export function gradFeatures(model: Model, cx: number, cy: number, cls: number): Tensor {
  const [, h, w] = model.inputChw;
  const fh = h / 4;
  const fw = w / 4;
  const grads = new Float64Array(model.k * fh * fw);
  for (let i = 0; i < model.k; i++) {
    grads[(i * fh + cy) * fw + cx] = model.headW.data[cls * model.k + i];
  }
  return { shape: [model.k, fh, fw], data: grads };
}

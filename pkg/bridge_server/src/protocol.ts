/**
 * Request handling for the line-delimited JSON bridge protocol, version 1.
 *
 * One request per line, one reply per line:
 *
 *   hello    -> version, capabilities, input geometry
 *   detect   -> detections sorted by score descending (remembered for grad)
 *   features -> the conv2 feature stack as a wire array
 *   grad     -> gradient for detection `target` of the last detect reply
 *   shutdown -> ok, then the caller stops the loop
 *
 * Every failure is {"ok": false, "error": ...} and leaves the session
 * usable; only transport death ends it.
 */

import { decodeArray, encodeArray } from './f32t.js';
import { detect, features, gradFeatures, Model } from './microdet.js';

export const PROTOCOL_VERSION = 1;
export const CAPABILITIES = ['detect', 'features', 'grad_features'];

export interface Session {
  model: Model;
  lastCells: Array<[number, number, number]>; // (cx, cy, class) per detection
  done: boolean;
}

export function newSession(model: Model): Session {
  return { model, lastCells: [], done: false };
}

function imageOf(req: Record<string, unknown>) {
  return decodeArray(req['image']);
}

export function handleRequest(session: Session, req: Record<string, unknown>): object {
  const op = req['op'];
  switch (op) {
    case 'hello': {
      return {
        ok: true,
        version: PROTOCOL_VERSION,
        capabilities: CAPABILITIES,
        input: session.model.inputChw,
      };
    }
    case 'detect': {
      const result = detect(session.model, imageOf(req));
      session.lastCells = result.cells.map(
        ([cx, cy], i) => [cx, cy, result.detections[i].class_id] as [number, number, number]
      );
      return { ok: true, detections: result.detections };
    }
    case 'features': {
      return { ok: true, features: encodeArray(features(session.model, imageOf(req))) };
    }
    case 'grad': {
      // The 1x1 head makes the gradient a function of the cell alone, but
      // the image payload must still be well-formed.
      imageOf(req);
      const target = req['target'];
      if (
        typeof target !== 'number' ||
        !Number.isInteger(target) ||
        target < 0 ||
        target >= session.lastCells.length
      ) {
        throw new Error(`grad target ${JSON.stringify(target)} is not a prior detection`);
      }
      const [cx, cy, cls] = session.lastCells[target];
      return { ok: true, grads: encodeArray(gradFeatures(session.model, cx, cy, cls)) };
    }
    case 'shutdown': {
      session.done = true;
      return { ok: true };
    }
    default:
      throw new Error(`unknown op ${JSON.stringify(op)}`);
  }
}

export function handleLine(session: Session, line: string): string {
  let reply: object;
  try {
    const req = JSON.parse(line);
    if (typeof req !== 'object' || req === null || Array.isArray(req)) {
      throw new Error('request must be a JSON object');
    }
    reply = handleRequest(session, req as Record<string, unknown>);
  } catch (exc) {
    reply = { ok: false, error: exc instanceof Error ? exc.message : String(exc) };
  }
  return JSON.stringify(reply);
}

/**
 * Reference bridge sidecar: answers the protocol on stdin/stdout around a
 * micro-detector weights directory.
 *
 *   node dist/server.js --weights <dir> [--device cpu] [--selector conv2]
 *
 * Diagnostics go to stderr; stdout carries protocol replies only. A model
 * that fails to load still answers the first request with ok: false, then
 * the process exits nonzero. EOF on stdin or a shutdown request ends the
 * loop.
 */

import { createInterface } from 'readline';
import { loadWeights, Model } from './microdet.js';
import { handleLine, newSession, Session } from './protocol.js';

interface Config {
  weights: string;
  device: string;
  selector: string;
}

function parseArgs(argv: string[]): Config {
  const cfg: Config = { weights: '', device: 'cpu', selector: 'conv2' };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (flag === '--weights' && value !== undefined) {
      cfg.weights = value;
      i++;
    } else if (flag === '--device' && value !== undefined) {
      cfg.device = value;
      i++;
    } else if (flag === '--selector' && value !== undefined) {
      cfg.selector = value;
      i++;
    } else {
      process.stderr.write(`bridge-server: unknown or incomplete flag ${flag}\n`);
      process.exit(2);
    }
  }
  if (!cfg.weights) {
    process.stderr.write('bridge-server: --weights <dir> is required\n');
    process.exit(2);
  }
  return cfg;
}

function main(): void {
  const cfg = parseArgs(process.argv.slice(2));

  let model: Model | null = null;
  let loadError = '';
  try {
    model = loadWeights(cfg.weights);
    const [c, h, w] = model.inputChw;
    process.stderr.write(
      `bridge-server: serving '${model.label}' on ${cfg.device}, ` +
        `feature layer ${cfg.selector}, input ${c}x${h}x${w}\n`
    );
  } catch (exc) {
    loadError = exc instanceof Error ? exc.message : String(exc);
    process.stderr.write(`bridge-server: ${loadError}\n`);
  }

  const session: Session | null = model ? newSession(model) : null;
  const lines = createInterface({ input: process.stdin, terminal: false });
  lines.on('line', (line) => {
    if (session === null) {
      process.stdout.write(JSON.stringify({ ok: false, error: loadError }) + '\n');
      process.exit(1);
    }
    process.stdout.write(handleLine(session, line) + '\n');
    if (session.done) {
      process.exit(0);
    }
  });
  lines.on('close', () => {
    process.exit(session === null ? 1 : 0);
  });
}

main();

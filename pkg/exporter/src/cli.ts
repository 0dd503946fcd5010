#!/usr/bin/env node
/**
 * mtprompt-export: write an image-folder dataset into the engine's suite
 * interchange format.
 *
 *   mtprompt-export --images <root> --checkpoint <descriptor.json> \
 *       --out <suite-dir> [--names <names.json>] [--force]
 *
 * Exit codes: 0 success, 1 usage error, 2 export/data error.
 */

import { readFileSync } from 'node:fs';
import { CheckpointError, loadCheckpoint } from './checkpoint.js';
import { ExportError, NameOverrides, exportSuite } from './export.js';
import { ImageDecodeError } from './ppm.js';

function parseArgs(argv: string[]): Map<string, string | boolean> {
  const out = new Map<string, string | boolean>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) {
      throw new Error(`unexpected argument ${arg}`);
    }
    const key = arg.slice(2);
    if (key === 'force') {
      out.set(key, true);
    } else {
      const value = argv[++i];
      if (value === undefined) {
        throw new Error(`missing value for --${key}`);
      }
      out.set(key, value);
    }
  }
  return out;
}

export function main(argv: string[]): number {
  let args: Map<string, string | boolean>;
  try {
    args = parseArgs(argv);
    for (const required of ['images', 'checkpoint', 'out']) {
      if (!args.has(required)) {
        throw new Error(`--${required} is required`);
      }
    }
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    return 1;
  }
  try {
    const checkpoint = loadCheckpoint(args.get('checkpoint') as string);
    let names: NameOverrides | undefined;
    if (args.has('names')) {
      names = JSON.parse(readFileSync(args.get('names') as string, 'utf-8'));
    }
    const summary = exportSuite({
      imagesRoot: args.get('images') as string,
      checkpoint,
      outDir: args.get('out') as string,
      names,
      force: args.get('force') === true,
    });
    for (const task of summary.tasks) {
      console.log(
        `exported task ${JSON.stringify(task.name)}: ` +
        `${task.classes} classes, ${task.samples} samples`);
    }
    console.log(`suite written to ${summary.outDir}`);
    return 0;
  } catch (err) {
    if (err instanceof ExportError || err instanceof ImageDecodeError ||
        err instanceof CheckpointError) {
      console.error(`export error: ${err.message}`);
      return 2;
    }
    throw err;
  }
}

const invokedDirectly = process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split('/').pop() ?? '');
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}

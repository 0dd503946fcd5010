/**
 * Suite export: image folders + name lists -> a suite directory the
 * engine validates as-is.
 *
 * Expected input layout:
 *
 *   <root>/<task-dir>/<class-dir>/*.ppm|*.pgm
 *
 * Directory names become task/class names (underscores to spaces) unless
 * a names file overrides them. Every class/task name is exported as a
 * token-embedding block, image features are stored unit-normalized, and
 * per-class splits assign local index 0 plus every index with i%5 < 3 to
 * train, i%5 == 3 to val, i%5 == 4 to test, so even two-image classes
 * keep a train sample. The whole directory is written atomically.
 */

import {
  mkdirSync, readFileSync, readdirSync, renameSync, rmSync, statSync,
  writeFileSync, existsSync,
} from 'node:fs';
import { join } from 'node:path';
import { encodeTensorBlock } from './blocks.js';
import { Checkpoint } from './checkpoint.js';
import { ImageFeatureExtractor } from './features.js';
import { ImageDecodeError, decodePnm } from './ppm.js';
import { tokenizeAndEmbed } from './tokenize.js';

export class ExportError extends Error {
  constructor(message: string, public path?: string) {
    super(path ? `${path}: ${message}` : message);
    this.name = 'ExportError';
  }
}

export interface NameOverrides {
  [taskDir: string]: {
    name?: string;
    classes?: { [classDir: string]: string };
  };
}

export interface ExportOptions {
  imagesRoot: string;
  checkpoint: Checkpoint;
  outDir: string;
  names?: NameOverrides;
  force?: boolean;
}

export interface ExportSummary {
  tasks: { name: string; classes: number; samples: number }[];
  outDir: string;
}

function listDirs(path: string): string[] {
  return readdirSync(path)
    .filter((entry) => statSync(join(path, entry)).isDirectory())
    .sort();
}

function listImages(path: string): string[] {
  return readdirSync(path)
    .filter((entry) => /\.(ppm|pgm)$/i.test(entry))
    .sort();
}

function displayName(dir: string): string {
  return dir.replace(/_/g, ' ');
}

export function exportSuite(options: ExportOptions): ExportSummary {
  const { imagesRoot, checkpoint, outDir } = options;
  if (!existsSync(imagesRoot) || !statSync(imagesRoot).isDirectory()) {
    throw new ExportError('image root is not a directory', imagesRoot);
  }
  const taskDirs = listDirs(imagesRoot);
  if (taskDirs.length === 0) {
    throw new ExportError('no task directories found', imagesRoot);
  }
  if (existsSync(outDir) && !options.force) {
    throw new ExportError('output exists (use force to overwrite)', outDir);
  }

  const extractor = new ImageFeatureExtractor(checkpoint);
  const tmp = `${outDir}.tmp${process.pid}`;
  rmSync(tmp, { recursive: true, force: true });
  mkdirSync(join(tmp, 'tensors'), { recursive: true });

  const tasksMeta: any[] = [];
  const summary: ExportSummary = { tasks: [], outDir };
  taskDirs.forEach((taskDir, ti) => {
    const override = options.names?.[taskDir];
    const taskName = override?.name ?? displayName(taskDir);
    const classDirs = listDirs(join(imagesRoot, taskDir));
    if (classDirs.length < 2) {
      throw new ExportError(
        `task needs at least 2 class folders, found ${classDirs.length}`,
        join(imagesRoot, taskDir));
    }
    const classNames = classDirs.map(
      (dir) => override?.classes?.[dir] ?? displayName(dir));

    const features: Float64Array[] = [];
    const labels: number[] = [];
    const splits: { train: number[]; val: number[]; test: number[] } = {
      train: [], val: [], test: [],
    };
    classDirs.forEach((classDir, ci) => {
      const classPath = join(imagesRoot, taskDir, classDir);
      const images = listImages(classPath);
      if (images.length === 0) {
        throw new ExportError('class folder holds no .ppm/.pgm images', classPath);
      }
      images.forEach((file, local) => {
        const imagePath = join(classPath, file);
        let decoded;
        try {
          decoded = decodePnm(readFileSync(imagePath), imagePath);
        } catch (err) {
          if (err instanceof ImageDecodeError) throw err;
          throw new ImageDecodeError(`unreadable image (${err})`, imagePath);
        }
        const index = features.length;
        features.push(extractor.extract(decoded));
        labels.push(ci);
        if (local === 0 || local % 5 < 3) splits.train.push(index);
        else if (local % 5 === 3) splits.val.push(index);
        else splits.test.push(index);
      });
    });

    const relFeat = `tensors/task${ti}_features.bin`;
    const relLab = `tensors/task${ti}_labels.bin`;
    const flat = new Float64Array(features.length * checkpoint.d_txt);
    features.forEach((row, i) => flat.set(row, i * checkpoint.d_txt));
    writeFileSync(join(tmp, relFeat),
                  encodeTensorBlock(features.length, checkpoint.d_txt, flat));
    writeFileSync(join(tmp, relLab),
                  encodeTensorBlock(labels.length, 1, labels));

    const relTaskTok = `tensors/task${ti}_tasktok.bin`;
    const taskTokens = tokenizeAndEmbed(taskName, checkpoint);
    writeFileSync(join(tmp, relTaskTok), encodeTensorBlock(
      taskTokens.length / checkpoint.d_embed, checkpoint.d_embed, taskTokens));
    const classTokRels: string[] = [];
    classNames.forEach((name, ci) => {
      const rel = `tensors/task${ti}_class${ci}_tok.bin`;
      const tokens = tokenizeAndEmbed(name, checkpoint);
      writeFileSync(join(tmp, rel), encodeTensorBlock(
        tokens.length / checkpoint.d_embed, checkpoint.d_embed, tokens));
      classTokRels.push(rel);
    });

    tasksMeta.push({
      name: taskName,
      class_names: classNames,
      features: relFeat,
      labels: relLab,
      splits,
      task_tokens: relTaskTok,
      class_tokens: classTokRels,
    });
    summary.tasks.push({
      name: taskName, classes: classNames.length, samples: labels.length,
    });
  });

  const manifest = {
    format: 'mtprompt-suite',
    version: 1,
    d_txt: checkpoint.d_txt,
    d_embed: checkpoint.d_embed,
    temperature: checkpoint.temperature,
    features_l2_normalized: true,
    token_embed_seed: checkpoint.token_embed_seed,
    tasks: tasksMeta,
  };
  writeFileSync(join(tmp, 'suite.json'), JSON.stringify(manifest, null, 2) + '\n');
  writeFileSync(join(tmp, 'export_manifest.json'), JSON.stringify({
    checkpoint_id: checkpoint.id,
    d_embed: checkpoint.d_embed,
    d_txt: checkpoint.d_txt,
    temperature: checkpoint.temperature,
    pooling: checkpoint.pooling,
    tasks: summary.tasks,
  }, null, 2) + '\n');

  rmSync(outDir, { recursive: true, force: true });
  renameSync(tmp, outDir);
  return summary;
}

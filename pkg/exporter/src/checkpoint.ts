/**
 * Checkpoint descriptors.
 *
 * A checkpoint is a JSON file pinning the frozen two-stream model the
 * export derives from: text-side dims and tokenizer seeds (token
 * embeddings are exported post-embedding-layer, pre-transformer, which is
 * where the engine prepends its learnable contexts), the image-side
 * patch-average encoder, and the softmax temperature. All weights derive
 * deterministically from the recorded seeds, so re-exports are bitwise
 * stable.
 */

import { readFileSync } from 'node:fs';
import { Rng } from './rng.js';

export interface ImageEncoderSpec {
  /** the image is box-averaged onto a grid x grid cell layout */
  grid: number;
  proj_seed: number;
}

export interface Checkpoint {
  id: string;
  d_embed: number;
  d_txt: number;
  temperature: number;
  pooling: 'mean' | 'last';
  vocab_size: number;
  token_embed_seed: number;
  image_encoder: ImageEncoderSpec;
}

export class CheckpointError extends Error {
  constructor(message: string, public path?: string) {
    super(path ? `${path}: ${message}` : message);
    this.name = 'CheckpointError';
  }
}

export function loadCheckpoint(path: string): Checkpoint {
  let raw: string;
  try {
    raw = readFileSync(path, 'utf-8');
  } catch (err) {
    throw new CheckpointError(`cannot read checkpoint (${err})`, path);
  }
  let data: any;
  try {
    data = JSON.parse(raw);
  } catch (err) {
    throw new CheckpointError(`not valid JSON (${err})`, path);
  }
  for (const field of ['id', 'd_embed', 'd_txt', 'temperature', 'vocab_size',
                       'token_embed_seed', 'image_encoder']) {
    if (!(field in data)) {
      throw new CheckpointError(`missing field ${field}`, path);
    }
  }
  if (data.d_embed <= 0 || data.d_txt <= 0) {
    throw new CheckpointError('dims must be positive', path);
  }
  if (!(data.temperature > 0)) {
    throw new CheckpointError('temperature must be positive', path);
  }
  if (data.pooling !== undefined && data.pooling !== 'mean' && data.pooling !== 'last') {
    throw new CheckpointError(`bad pooling ${data.pooling}`, path);
  }
  const enc = data.image_encoder;
  if (!Number.isInteger(enc.grid) || enc.grid < 1) {
    throw new CheckpointError('image_encoder.grid must be a positive integer', path);
  }
  return {
    id: String(data.id),
    d_embed: data.d_embed,
    d_txt: data.d_txt,
    temperature: data.temperature,
    pooling: data.pooling ?? 'mean',
    vocab_size: data.vocab_size,
    token_embed_seed: data.token_embed_seed,
    image_encoder: { grid: enc.grid, proj_seed: enc.proj_seed ?? 0 },
  };
}

/** Frozen image-projection weights: (grid*grid*3) x d_txt, row-major. */
export function imageProjection(ckpt: Checkpoint): Float64Array {
  const dIn = ckpt.image_encoder.grid ** 2 * 3;
  const std = 1.0 / Math.sqrt(dIn);
  return new Rng(ckpt.image_encoder.proj_seed)
    .spawn('image-proj')
    .normalArray(dIn * ckpt.d_txt, std);
}

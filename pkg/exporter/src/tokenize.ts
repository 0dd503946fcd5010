/**
 * Name tokenizer: lowercased whitespace words, each hashed to a frozen
 * embedding slot. The scheme (FNV-1a slot hash, per-slot splitmix64
 * Gaussian embedding) matches the engine's built-in tokenizer bit for
 * bit, so exported token blocks and engine-side tokenization of the same
 * text agree exactly at float32 precision.
 */

import { Checkpoint } from './checkpoint.js';
import { Rng, fnv1a64 } from './rng.js';

export function hashToken(word: string, vocabSize: number): bigint {
  return fnv1a64(word) % BigInt(vocabSize);
}

export function slotEmbedding(
  embedSeed: number,
  slot: bigint,
  dEmbed: number,
): Float64Array {
  return new Rng(embedSeed).spawn(`tok${slot}`).normalArray(dEmbed);
}

/** Token-embedding matrix of a name: (n_words x d_embed), row-major. */
export function tokenizeAndEmbed(text: string, ckpt: Checkpoint): Float64Array {
  const words = text.toLowerCase().split(/\s+/).filter((w) => w.length > 0);
  if (words.length === 0) {
    throw new Error(`cannot tokenize empty text ${JSON.stringify(text)}`);
  }
  const out = new Float64Array(words.length * ckpt.d_embed);
  words.forEach((word, i) => {
    const emb = slotEmbedding(
      ckpt.token_embed_seed, hashToken(word, ckpt.vocab_size), ckpt.d_embed);
    out.set(emb, i * ckpt.d_embed);
  });
  return out;
}

export function tokenCount(text: string): number {
  return text.toLowerCase().split(/\s+/).filter((w) => w.length > 0).length;
}

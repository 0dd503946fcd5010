/**
 * Bit-compatibility with the engine's random streams and tokenizer.
 * Every expected value below was produced by the engine itself, so these
 * tests pin the cross-language contract exactly.
 */

import { describe, expect, it } from 'vitest';
import { Rng, fnv1a64, splitmix64 } from '../src/rng.js';
import { hashToken, slotEmbedding, tokenizeAndEmbed } from '../src/tokenize.js';
import { loadCheckpoint } from '../src/checkpoint.js';
import { fileURLToPath } from 'node:url';
import { dirname, join } from 'node:path';

const here = dirname(fileURLToPath(import.meta.url));
const demoCkpt = () => loadCheckpoint(join(here, '..', 'demo-checkpoint.json'));

describe('splitmix64 stream', () => {
  it('matches engine values', () => {
    expect(splitmix64(42n, 7n)).toBe(14769051326987775908n);
    expect(splitmix64(2n ** 63n, 12345n)).toBe(12260382066265103184n);
  });

  it('uniforms match engine bits', () => {
    const rng = new Rng(99);
    expect(rng.uniform()).toBe(0.2615304715693846);
    expect(rng.uniform()).toBe(0.0316577610861849);
    expect(rng.uniform()).toBe(0.8347597245449443);
  });

  it('normals match engine bits', () => {
    const rng = new Rng(7);
    expect(rng.normal()).toBe(-1.0009541026316917);
    expect(rng.normal()).toBe(1.3335403660869787);
    expect(rng.normal()).toBe(0.5188620948808316);
  });

  it('spawned child streams match', () => {
    expect(new Rng(5).spawn('a').nextU64()).toBe(16596305779582078565n);
  });
});

describe('fnv1a64', () => {
  it('matches engine values', () => {
    expect(fnv1a64('flower')).toBe(7145304529707584774n);
    expect(fnv1a64('classification')).toBe(14391385501713979905n);
  });
});

describe('tokenizer', () => {
  it('hashes to the engine vocabulary slots', () => {
    expect(hashToken('flower', 8192)).toBe(3334n);
    expect(hashToken('classification', 8192)).toBe(6657n);
  });

  it('embeds words with the engine streams', () => {
    const ckpt = demoCkpt();
    const mat = tokenizeAndEmbed('flower classification', ckpt);
    expect(mat.length).toBe(2 * ckpt.d_embed);
    expect(mat[0]).toBe(0.6234021599705226);
    expect(mat[1]).toBe(-0.7142794848745666);
    expect(mat[2]).toBe(0.6614631765771115);
    expect(mat[3]).toBe(0.31980856164535343);
    expect(mat[ckpt.d_embed]).toBe(0.13783523475570192);
    expect(mat[ckpt.d_embed + 1]).toBe(1.1756141857904137);
    expect(mat[ckpt.d_embed + 2]).toBe(-0.09513632100062974);
    expect(mat[ckpt.d_embed + 3]).toBe(-0.17631667641472326);
  });

  it('case-folds and rejects empty text', () => {
    const ckpt = demoCkpt();
    expect(tokenizeAndEmbed('Flower', ckpt)).toEqual(
      tokenizeAndEmbed('flower', ckpt));
    expect(() => tokenizeAndEmbed('   ', ckpt)).toThrow(/empty text/);
  });

  it('same slot means same embedding', () => {
    const a = slotEmbedding(0, 3334n, 32);
    const b = slotEmbedding(0, 3334n, 32);
    expect(a).toEqual(b);
  });
});

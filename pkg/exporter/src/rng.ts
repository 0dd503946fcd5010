/**
 * Counter-based random stream, bit-compatible with the engine's.
 *
 * splitmix64 over (seed, counter) with uniforms as dyadic rationals and
 * normals as a sum of twelve uniforms, so every draw is reproducible
 * across runtimes; the test suite pins values produced by the engine.
 */

const MASK64 = (1n << 64n) - 1n;
const GOLDEN = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;
const INV_2POW53 = 1.0 / 9007199254740992.0;

export function splitmix64(seed: bigint, counter: bigint): bigint {
  let z = (seed + ((counter + 1n) * GOLDEN & MASK64)) & MASK64;
  z = ((z ^ (z >> 30n)) * MIX1) & MASK64;
  z = ((z ^ (z >> 27n)) * MIX2) & MASK64;
  return z ^ (z >> 31n);
}

export function fnv1a64(text: string): bigint {
  let h = 0xcbf29ce484222325n;
  for (const byte of new TextEncoder().encode(text)) {
    h ^= BigInt(byte);
    h = (h * 0x100000001b3n) & MASK64;
  }
  return h;
}

export class Rng {
  seed: bigint;
  counter: bigint;

  constructor(seed: bigint | number) {
    this.seed = BigInt(seed) & MASK64;
    this.counter = 0n;
  }

  nextU64(): bigint {
    const v = splitmix64(this.seed, this.counter);
    this.counter += 1n;
    return v;
  }

  uniform(): number {
    return Number(this.nextU64() >> 11n) * INV_2POW53;
  }

  normal(std = 1.0): number {
    let acc = 0.0;
    for (let i = 0; i < 12; i++) {
      acc += this.uniform();
    }
    return (acc - 6.0) * std;
  }

  normalArray(n: number, std = 1.0): Float64Array {
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      out[i] = this.normal(std);
    }
    return out;
  }

  spawn(tag: string | number): Rng {
    const tag64 = fnv1a64(String(tag));
    return new Rng(splitmix64(this.seed ^ tag64, tag64));
  }
}

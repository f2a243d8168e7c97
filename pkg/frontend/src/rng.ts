/** Small deterministic PRNG (mulberry32) for seed derivation and shuffling. */

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Derive a 32-bit child seed from a base seed and an index. */
export function deriveSeed(base: number, index: number): number {
  const rng = mulberry32(((base >>> 0) * 2654435761 + index + 1) >>> 0);
  return Math.floor(rng() * 2 ** 31);
}

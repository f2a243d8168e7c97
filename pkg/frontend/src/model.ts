/** Shallow 3D CNN architectures for TP/TN tumor classification.
 *
 * Three variants share one encoder design — 3 conv layers (kernel 3, filters
 * B*2, B*4, B*4 with B=8), each followed by 2^3 max-pooling — and a
 * dense(64) -> dropout(0.2) -> dense(2, softmax) head:
 *
 * - single-encoder: one modality, one encoder
 * - dual-channel:   two modalities stacked as channels into one encoder
 * - dual-encoder:   two weight-independent encoders, latents concatenated
 *
 * Inputs are channels-last: [batch, x, y, z, channels].
 */

import * as tf from "@tensorflow/tfjs";
import { SpecInvalid } from "./errors";
import { Modality } from "./manifest";
import { deriveSeed } from "./rng";

export type Variant = "single-encoder" | "dual-channel" | "dual-encoder";

export interface ArchitectureSpec {
  variant: Variant;
  modalities: Modality[];
  baseFilters?: number; // B; conv filters are (2B, 4B, 4B)
  inputDims?: [number, number, number];
  seed?: number;
}

export const MAX_PARAMS = 30_000_000;
export const DROPOUT_RATE = 0.2;
export const HEAD_UNITS = 64;

export function validateSpec(spec: ArchitectureSpec): Required<ArchitectureSpec> {
  const expected = spec.variant === "single-encoder" ? 1 : 2;
  if (spec.modalities.length !== expected) {
    throw new SpecInvalid(
      `${spec.variant} needs ${expected} modalities, got [${spec.modalities}]`);
  }
  if (new Set(spec.modalities).size !== spec.modalities.length) {
    throw new SpecInvalid(`duplicate modalities: [${spec.modalities}]`);
  }
  const base = spec.baseFilters ?? 8;
  if (base < 1) throw new SpecInvalid(`baseFilters must be >= 1, got ${base}`);
  const dims = spec.inputDims ?? [170, 170, 120];
  if (dims.some((d) => d < 8)) {
    throw new SpecInvalid(`input dims (${dims}) too small for 3 pooling stages`);
  }
  return {
    variant: spec.variant,
    modalities: spec.modalities,
    baseFilters: base,
    inputDims: dims,
    seed: spec.seed ?? 0,
  };
}

function encoder(input: tf.SymbolicTensor, base: number, seed: number,
                 tag: string): tf.SymbolicTensor {
  let x = input;
  const filters = [2 * base, 4 * base, 4 * base];
  for (let i = 0; i < filters.length; i++) {
    x = tf.layers.conv3d({
      filters: filters[i],
      kernelSize: 3,
      padding: "same",
      activation: "relu",
      kernelInitializer: tf.initializers.glorotUniform({ seed: deriveSeed(seed, 10 * i + 1) }),
      name: `${tag}_conv${i + 1}`,
    }).apply(x) as tf.SymbolicTensor;
    x = tf.layers.maxPooling3d({ poolSize: 2, name: `${tag}_pool${i + 1}` })
      .apply(x) as tf.SymbolicTensor;
  }
  return tf.layers.flatten({ name: `${tag}_flat` }).apply(x) as tf.SymbolicTensor;
}

export function buildModel(rawSpec: ArchitectureSpec): tf.LayersModel {
  const spec = validateSpec(rawSpec);
  const [nx, ny, nz] = spec.inputDims;

  let inputs: tf.SymbolicTensor[];
  let latent: tf.SymbolicTensor;
  if (spec.variant === "dual-encoder") {
    inputs = spec.modalities.map((m) =>
      tf.input({ shape: [nx, ny, nz, 1], name: `in_${m}` }));
    const latents = inputs.map((inp, i) =>
      encoder(inp, spec.baseFilters, deriveSeed(spec.seed, 100 + i), `enc${i + 1}`));
    latent = tf.layers.concatenate({ name: "fuse" })
      .apply(latents) as tf.SymbolicTensor;
  } else {
    const channels = spec.variant === "dual-channel" ? 2 : 1;
    inputs = [tf.input({ shape: [nx, ny, nz, channels], name: "in" })];
    latent = encoder(inputs[0], spec.baseFilters, deriveSeed(spec.seed, 100), "enc1");
  }

  let head = tf.layers.dense({
    units: HEAD_UNITS,
    activation: "relu",
    kernelInitializer: tf.initializers.glorotUniform({ seed: deriveSeed(spec.seed, 200) }),
    name: "head_dense",
  }).apply(latent) as tf.SymbolicTensor;
  head = tf.layers.dropout({
    rate: DROPOUT_RATE,
    seed: deriveSeed(spec.seed, 300),
    name: "head_dropout",
  }).apply(head) as tf.SymbolicTensor;
  const out = tf.layers.dense({
    units: 2,
    activation: "softmax",
    kernelInitializer: tf.initializers.glorotUniform({ seed: deriveSeed(spec.seed, 400) }),
    name: "head_out",
  }).apply(head) as tf.SymbolicTensor;

  const model = tf.model({ inputs, outputs: out });
  const params = model.countParams();
  if (params >= MAX_PARAMS) {
    throw new SpecInvalid(`model has ${params} parameters (limit ${MAX_PARAMS})`);
  }
  return model;
}

/** Parameter counts of each Conv3D layer, in graph order. */
export function convParamCounts(model: tf.LayersModel): number[] {
  return model.layers
    .filter((l) => l.getClassName() === "Conv3D")
    .map((l) => l.countParams());
}

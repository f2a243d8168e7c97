/** Leave-one-out cross-validation training harness.
 *
 * Each fold trains a freshly initialized model (seeded per fold) on all
 * samples but one, with balanced class weights computed from that fold's
 * training labels, then predicts the held-out sample using the weights from
 * the best-training-loss epoch. Per-fold predictions are pooled into a single
 * metrics report.
 */

import * as tf from "@tensorflow/tfjs";
import { DegenerateFold, SpecInvalid } from "./errors";
import { INDEX_LABEL, LABEL_INDEX, balancedWeights } from "./loss";
import { Label, Modality, Sample } from "./manifest";
import { Metrics, computeMetrics } from "./metrics";
import { ArchitectureSpec, buildModel, validateSpec } from "./model";
import { deriveSeed } from "./rng";

export interface TrainConfig {
  epochs?: number;
  learningRate?: number;
  batchSize?: number;
  seed?: number;
}

export const DEFAULT_TRAIN: Required<TrainConfig> = {
  epochs: 100,
  learningRate: 1e-5,
  batchSize: 2,
  seed: 0,
};

export interface FoldRecord {
  fold: number;
  sampleId: string;
  trueLabel: Label;
  predictedLabel: Label;
  probTP: number;
  bestEpoch: number;
  bestTrainLoss: number;
}

export interface EvalReport {
  variant: string;
  modalities: Modality[];
  folds: FoldRecord[];
  metrics: Metrics;
}

/** Stack samples into channels-last model inputs for the given architecture. */
export function makeInputs(samples: Sample[],
                           spec: ArchitectureSpec): tf.Tensor | tf.Tensor[] {
  const resolved = validateSpec(spec);
  const [nx, ny, nz] = resolved.inputDims;
  const perModality = (m: Modality) => {
    const out = new Float32Array(samples.length * nx * ny * nz);
    samples.forEach((s, i) => out.set(s.tensors[m], i * nx * ny * nz));
    return tf.tensor5d(out, [samples.length, nx, ny, nz, 1]);
  };
  if (resolved.variant === "dual-encoder") {
    return resolved.modalities.map(perModality);
  }
  if (resolved.variant === "dual-channel") {
    const parts = resolved.modalities.map(perModality);
    const stacked = tf.concat(parts, 4);
    parts.forEach((p) => p.dispose());
    return stacked;
  }
  return perModality(resolved.modalities[0]);
}

export function makeTargets(samples: Sample[]): tf.Tensor2D {
  const rows = samples.map((s) => {
    const row = [0, 0];
    row[LABEL_INDEX[s.label]] = 1;
    return row;
  });
  return tf.tensor2d(rows, [samples.length, 2]);
}

function disposeInputs(x: tf.Tensor | tf.Tensor[]): void {
  (Array.isArray(x) ? x : [x]).forEach((t) => t.dispose());
}

interface FoldOutcome {
  probTP: number;
  bestEpoch: number;
  bestTrainLoss: number;
}

/** Train on trainSamples, return the held-out probability of TP. */
export async function trainAndPredict(trainSamples: Sample[],
                                      testSamples: Sample[],
                                      spec: ArchitectureSpec,
                                      cfg: Required<TrainConfig>,
                                      foldSeed: number): Promise<FoldOutcome> {
  const model = buildModel({ ...spec, seed: foldSeed });
  const weights = balancedWeights(trainSamples.map((s) => s.label));
  model.compile({
    optimizer: tf.train.adam(cfg.learningRate),
    loss: "categoricalCrossentropy",
  });

  const x = makeInputs(trainSamples, spec);
  const y = makeTargets(trainSamples);
  let bestLoss = Infinity;
  let bestEpoch = -1;
  let bestWeights: tf.Tensor[] | null = null;
  try {
    await model.fit(x, y, {
      epochs: cfg.epochs,
      batchSize: cfg.batchSize,
      shuffle: false,
      verbose: 0,
      classWeight: { 0: weights.TN, 1: weights.TP },
      callbacks: {
        onEpochEnd: async (epoch, logs) => {
          const loss = logs?.loss as number;
          if (loss < bestLoss) {
            bestLoss = loss;
            bestEpoch = epoch;
            if (bestWeights) bestWeights.forEach((w) => w.dispose());
            bestWeights = model.getWeights().map((w) => w.clone());
          }
        },
      },
    });
    if (bestWeights) model.setWeights(bestWeights);

    const xTest = makeInputs(testSamples, spec);
    const probs = model.predict(xTest) as tf.Tensor;
    const data = await probs.data();
    probs.dispose();
    disposeInputs(xTest);
    return {
      probTP: data[LABEL_INDEX.TP],
      bestEpoch,
      bestTrainLoss: bestLoss,
    };
  } finally {
    if (bestWeights) (bestWeights as tf.Tensor[]).forEach((w) => w.dispose());
    disposeInputs(x);
    y.dispose();
    model.dispose();
  }
}

export async function loocvRun(samples: Sample[], spec: ArchitectureSpec,
                               config: TrainConfig = {}): Promise<EvalReport> {
  const cfg = { ...DEFAULT_TRAIN, ...config };
  const resolved = validateSpec(spec);
  if (samples.length < 3) {
    throw new SpecInvalid(`LOOCV needs at least 3 samples, got ${samples.length}`);
  }

  // validate every fold before spending time training any of them
  for (let i = 0; i < samples.length; i++) {
    const labels = new Set(samples.filter((_, j) => j !== i).map((s) => s.label));
    if (labels.size < 2) {
      throw new DegenerateFold(
        `fold ${i} (holding out ${samples[i].sampleId}): ` +
        `training set is single-class`);
    }
  }

  const folds: FoldRecord[] = [];
  for (let i = 0; i < samples.length; i++) {
    const train = samples.filter((_, j) => j !== i);
    const outcome = await trainAndPredict(
      train, [samples[i]], spec, cfg, deriveSeed(cfg.seed, i));
    folds.push({
      fold: i,
      sampleId: samples[i].sampleId,
      trueLabel: samples[i].label,
      predictedLabel: INDEX_LABEL[outcome.probTP >= 0.5 ? 1 : 0],
      probTP: outcome.probTP,
      bestEpoch: outcome.bestEpoch,
      bestTrainLoss: outcome.bestTrainLoss,
    });
  }

  const metrics = computeMetrics(
    folds.map((f) => f.predictedLabel), folds.map((f) => f.trueLabel));
  return {
    variant: resolved.variant,
    modalities: resolved.modalities,
    folds,
    metrics,
  };
}

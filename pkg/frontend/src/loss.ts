/** Class-weighted categorical cross-entropy and balanced class weights.
 *
 * Loss per sample is -w_label * ln(p_label); the batch loss is the mean.
 * Class weights follow the balanced convention N / (2 * n_class), which for a
 * 35-sample cohort with 9 TN / 26 TP yields the 1.95:0.65 TN:TP ratio.
 */

import { Label } from "./manifest";
import { SpecInvalid } from "./errors";

const CLAMP = 1e-12;

/** Class index convention used throughout: TN = 0, TP = 1. */
export const LABEL_INDEX: Record<Label, number> = { TN: 0, TP: 1 };
export const INDEX_LABEL: Label[] = ["TN", "TP"];

export interface ClassWeights {
  TN: number;
  TP: number;
}

/** Batch-mean weighted cross-entropy on probability rows. */
export function weightedCE(probs: number[][], labels: number[],
                           weights: ClassWeights): number {
  if (probs.length !== labels.length || probs.length === 0) {
    throw new SpecInvalid("probs and labels must be equal-length and non-empty");
  }
  if (weights.TN <= 0 || weights.TP <= 0) {
    throw new SpecInvalid("class weights must be positive");
  }
  const w = [weights.TN, weights.TP];
  let total = 0;
  for (let i = 0; i < probs.length; i++) {
    const p = Math.max(probs[i][labels[i]], CLAMP);
    total += -w[labels[i]] * Math.log(p);
  }
  return total / probs.length;
}

export function softmax(logits: number[]): number[] {
  const m = Math.max(...logits);
  const e = logits.map((z) => Math.exp(z - m));
  const s = e.reduce((a, b) => a + b, 0);
  return e.map((v) => v / s);
}

/** Weighted CE evaluated on logits, with its analytic gradient
 *  dL/dz_ij = w_label(i) * (softmax(z_i)_j - onehot_ij) / N. */
export function weightedCEWithGrad(logits: number[][], labels: number[],
                                   weights: ClassWeights):
    { loss: number; grad: number[][] } {
  const probs = logits.map(softmax);
  const loss = weightedCE(probs, labels, weights);
  const w = [weights.TN, weights.TP];
  const n = logits.length;
  const grad = probs.map((p, i) =>
    p.map((pj, j) => (w[labels[i]] * (pj - (labels[i] === j ? 1 : 0))) / n));
  return { loss, grad };
}

/** Balanced class weights N / (2 * n_class) from a training label list. */
export function balancedWeights(labels: Label[]): ClassWeights {
  const n = labels.length;
  const nTN = labels.filter((l) => l === "TN").length;
  const nTP = n - nTN;
  if (nTN === 0 || nTP === 0) {
    throw new SpecInvalid("balanced weights need both classes present");
  }
  return { TN: n / (2 * nTN), TP: n / (2 * nTP) };
}

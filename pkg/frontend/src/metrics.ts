/** Pooled classification metrics with TP (tumor progression) as the positive class. */

import { Label } from "./manifest";
import { SpecInvalid } from "./errors";

export interface Metrics {
  accuracy: number;
  precision: number;
  recall: number;
  /** Names of metrics whose denominator was zero (reported as 0). */
  undefinedMetrics: string[];
}

export function computeMetrics(predictions: Label[], labels: Label[],
                               positiveClass: Label = "TP"): Metrics {
  if (predictions.length !== labels.length || predictions.length === 0) {
    throw new SpecInvalid("predictions and labels must be equal-length and non-empty");
  }
  let tp = 0, fp = 0, fn = 0, correct = 0;
  for (let i = 0; i < predictions.length; i++) {
    if (predictions[i] === labels[i]) correct++;
    const predPos = predictions[i] === positiveClass;
    const truePos = labels[i] === positiveClass;
    if (predPos && truePos) tp++;
    else if (predPos && !truePos) fp++;
    else if (!predPos && truePos) fn++;
  }
  const undefinedMetrics: string[] = [];
  let precision = 0;
  if (tp + fp > 0) precision = tp / (tp + fp);
  else undefinedMetrics.push("precision");
  let recall = 0;
  if (tp + fn > 0) recall = tp / (tp + fn);
  else undefinedMetrics.push("recall");
  return {
    accuracy: correct / predictions.length,
    precision,
    recall,
    undefinedMetrics,
  };
}

/** Evaluation report serialization: per-fold JSON lines plus a summary CSV
 *  row of the pooled metrics ("Model,Modality,Accuracy,Precision,Recall"). */

import * as fs from "fs";
import * as path from "path";
import { EvalReport } from "./loocv";

export const SUMMARY_HEADER = "Model,Modality,Accuracy,Precision,Recall";

export function summaryRow(report: EvalReport): string {
  const m = report.metrics;
  const fmt = (v: number) => v.toFixed(4);
  return [
    report.variant,
    report.modalities.join("+"),
    fmt(m.accuracy),
    fmt(m.precision),
    fmt(m.recall),
  ].join(",");
}

export function foldLines(report: EvalReport): string {
  return report.folds.map((f) => JSON.stringify(f)).join("\n") + "\n";
}

/** Write folds.jsonl and summary.csv into outDir (created if needed). */
export function writeReport(report: EvalReport, outDir: string): void {
  fs.mkdirSync(outDir, { recursive: true });
  fs.writeFileSync(path.join(outDir, "folds.jsonl"), foldLines(report));
  fs.writeFileSync(path.join(outDir, "summary.csv"),
                   SUMMARY_HEADER + "\n" + summaryRow(report) + "\n");
}

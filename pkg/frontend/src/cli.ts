/** Command-line entry point: run LOOCV for one architecture variant over an
 *  exported tumor-sample manifest and write the evaluation report.
 *
 *  Usage:
 *    classify --manifest cohort.csv --variant dual-encoder --modalities MR,Ki \
 *             --out-dir results/ [--epochs N] [--seed S] [--dims X,Y,Z]
 */

import { ClassifierError, SpecInvalid } from "./errors";
import { loocvRun } from "./loocv";
import { DEFAULT_DIMS, MODALITIES, Modality, loadManifest } from "./manifest";
import { Variant } from "./model";
import { summaryRow, SUMMARY_HEADER, writeReport } from "./report";

interface CliArgs {
  manifest: string;
  variant: Variant;
  modalities: Modality[];
  outDir: string;
  epochs: number;
  seed: number;
  dims: [number, number, number];
}

const VARIANTS: Variant[] = ["single-encoder", "dual-channel", "dual-encoder"];

export function parseArgs(argv: string[]): CliArgs {
  const opts = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new SpecInvalid(`expected --flag value pairs, got ${JSON.stringify(key)}`);
    }
    opts.set(key.slice(2), argv[i + 1]);
  }
  const required = (name: string): string => {
    const v = opts.get(name);
    if (v === undefined) throw new SpecInvalid(`missing --${name}`);
    return v;
  };
  const variant = required("variant") as Variant;
  if (!VARIANTS.includes(variant)) {
    throw new SpecInvalid(`--variant must be one of ${VARIANTS.join(", ")}`);
  }
  const modalities = required("modalities").split(",") as Modality[];
  for (const m of modalities) {
    if (!MODALITIES.includes(m)) {
      throw new SpecInvalid(`unknown modality ${JSON.stringify(m)}`);
    }
  }
  let dims = DEFAULT_DIMS;
  if (opts.has("dims")) {
    const parts = opts.get("dims")!.split(",").map(Number);
    if (parts.length !== 3 || parts.some((p) => !Number.isInteger(p) || p < 1)) {
      throw new SpecInvalid(`--dims must be three positive integers`);
    }
    dims = parts as [number, number, number];
  }
  return {
    manifest: required("manifest"),
    variant,
    modalities,
    outDir: required("out-dir"),
    epochs: Number(opts.get("epochs") ?? 100),
    seed: Number(opts.get("seed") ?? 0),
    dims,
  };
}

export async function main(argv: string[]): Promise<number> {
  try {
    const args = parseArgs(argv);
    const samples = loadManifest(args.manifest, { expectedDims: args.dims });
    const report = await loocvRun(samples,
      { variant: args.variant, modalities: args.modalities, inputDims: args.dims },
      { epochs: args.epochs, seed: args.seed });
    writeReport(report, args.outDir);
    console.log(SUMMARY_HEADER);
    console.log(summaryRow(report));
    return 0;
  } catch (err) {
    if (err instanceof ClassifierError) {
      console.error(`${err.name}: ${err.message}`);
      return 2;
    }
    throw err;
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then((code) => { process.exitCode = code; });
}

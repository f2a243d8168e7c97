/** Dataset loading from the tumor-pipeline export manifest.
 *
 * The manifest CSV plus the NIfTI tensors it references are the only
 * interface with the kinetic-modeling package. Each modality tensor is
 * z-score normalized over its in-mask voxels; voxels outside the mask stay
 * exactly zero.
 */

import * as fs from "fs";
import * as path from "path";
import { MissingFile, SchemaMismatch, ShapeMismatch } from "./errors";
import { readNifti } from "./nifti";

export type Label = "TP" | "TN";
export type Modality = "MR" | "SUV" | "Ki";
export const MODALITIES: Modality[] = ["MR", "SUV", "Ki"];

export const MANIFEST_COLUMNS = [
  "sample_id", "subject_id", "label", "verified",
  "mr_path", "suv_path", "ki_path", "mask_path",
] as const;

export interface Sample {
  sampleId: string;
  subjectId: string;
  label: Label;
  verified: boolean;
  dims: [number, number, number];
  tensors: Record<Modality, Float32Array>;
  mask: Uint8Array;
}

export const DEFAULT_DIMS: [number, number, number] = [170, 170, 120];

const MODALITY_COLUMN: Record<Modality, string> = {
  MR: "mr_path", SUV: "suv_path", Ki: "ki_path",
};

function parseCsv(text: string): string[][] {
  return text
    .split(/\r?\n/)
    .filter((line) => line.length > 0)
    .map((line) => line.split(","));
}

/** Z-score over in-mask voxels, in place; all-zero or constant tensors stay zero. */
export function normalizeInMask(values: Float32Array, mask: Uint8Array): void {
  let n = 0;
  let sum = 0;
  for (let i = 0; i < values.length; i++) {
    if (mask[i]) { n++; sum += values[i]; }
  }
  if (n === 0) return;
  const mean = sum / n;
  let ss = 0;
  for (let i = 0; i < values.length; i++) {
    if (mask[i]) { const d = values[i] - mean; ss += d * d; }
  }
  const std = Math.sqrt(ss / n);
  for (let i = 0; i < values.length; i++) {
    if (mask[i]) values[i] = std > 0 ? (values[i] - mean) / std : 0;
    else values[i] = 0;
  }
}

export interface LoadOptions {
  expectedDims?: [number, number, number];
}

export function loadManifest(manifestPath: string, options: LoadOptions = {}): Sample[] {
  const expected = options.expectedDims ?? DEFAULT_DIMS;
  if (!fs.existsSync(manifestPath)) {
    throw new MissingFile(`no such manifest: ${manifestPath}`);
  }
  const rows = parseCsv(fs.readFileSync(manifestPath, "utf8"));
  if (rows.length === 0) {
    throw new SchemaMismatch(`${manifestPath}: empty manifest`);
  }
  const header = rows[0];
  for (let i = 0; i < MANIFEST_COLUMNS.length; i++) {
    if (header[i] !== MANIFEST_COLUMNS[i]) {
      throw new SchemaMismatch(
        `${manifestPath}: column ${i} is ${JSON.stringify(header[i])}, ` +
        `expected ${JSON.stringify(MANIFEST_COLUMNS[i])}`);
    }
  }
  const dir = path.dirname(path.resolve(manifestPath));
  const resolve = (p: string) => (path.isAbsolute(p) ? p : path.join(dir, p));

  const samples: Sample[] = [];
  for (const row of rows.slice(1)) {
    if (row.length < MANIFEST_COLUMNS.length) {
      throw new SchemaMismatch(`${manifestPath}: row has ${row.length} fields`);
    }
    const record = Object.fromEntries(
      MANIFEST_COLUMNS.map((c, i) => [c, row[i]])) as Record<string, string>;
    if (record.label !== "TP" && record.label !== "TN") {
      throw new SchemaMismatch(
        `sample ${record.sample_id}: label ${JSON.stringify(record.label)}`);
    }

    const maskVol = readNifti(resolve(record.mask_path));
    checkDims(record.sample_id, "mask", maskVol.dims, expected);
    const mask = new Uint8Array(maskVol.values.length);
    for (let i = 0; i < mask.length; i++) mask[i] = maskVol.values[i] > 0 ? 1 : 0;

    const tensors = {} as Record<Modality, Float32Array>;
    for (const m of MODALITIES) {
      const vol = readNifti(resolve(record[MODALITY_COLUMN[m]]));
      checkDims(record.sample_id, m, vol.dims, expected);
      normalizeInMask(vol.values, mask);
      tensors[m] = vol.values;
    }
    samples.push({
      sampleId: record.sample_id,
      subjectId: record.subject_id,
      label: record.label,
      verified: record.verified === "1",
      dims: expected,
      tensors,
      mask,
    });
  }
  return samples;
}

function checkDims(sampleId: string, what: string,
                   got: [number, number, number],
                   expected: [number, number, number]): void {
  if (got[0] !== expected[0] || got[1] !== expected[1] || got[2] !== expected[2]) {
    throw new ShapeMismatch(
      `sample ${sampleId} ${what}: dims (${got}) != expected (${expected})`);
  }
}

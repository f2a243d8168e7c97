import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { describe, expect, it } from "vitest";

import { main, parseArgs } from "../src/cli";
import { SpecInvalid } from "../src/errors";

const FIXTURES = path.join(__dirname, "fixtures");

describe("parseArgs", () => {
  const BASE = ["--manifest", "m.csv", "--variant", "dual-encoder",
                "--modalities", "MR,Ki", "--out-dir", "out"];

  it("parses a full argument set with defaults", () => {
    const a = parseArgs(BASE);
    expect(a.variant).toBe("dual-encoder");
    expect(a.modalities).toEqual(["MR", "Ki"]);
    expect(a.epochs).toBe(100);
    expect(a.seed).toBe(0);
    expect(a.dims).toEqual([170, 170, 120]);
  });

  it("parses overrides", () => {
    const a = parseArgs([...BASE, "--epochs", "5", "--seed", "9",
                         "--dims", "40,40,28"]);
    expect(a.epochs).toBe(5);
    expect(a.dims).toEqual([40, 40, 28]);
  });

  it("rejects missing required flags, bad variants, and bad modalities", () => {
    expect(() => parseArgs([])).toThrow(SpecInvalid);
    expect(() => parseArgs(BASE.map((v) => v === "dual-encoder" ? "mega" : v)))
      .toThrow(SpecInvalid);
    expect(() => parseArgs(BASE.map((v) => v === "MR,Ki" ? "MR,PETX" : v)))
      .toThrow(SpecInvalid);
    expect(() => parseArgs([...BASE, "--dims", "40,40"])).toThrow(SpecInvalid);
  });
});

describe("main", () => {
  it("returns 2 with a clean message on classifier errors", async () => {
    const code = await main(["--manifest", "/nonexistent.csv",
                             "--variant", "single-encoder",
                             "--modalities", "Ki", "--out-dir", "/tmp/x"]);
    expect(code).toBe(2);
  });

  it("runs LOOCV end-to-end on exported pipeline samples", async () => {
    // only 2 real samples exist, so point extra manifest rows at the same
    // tensors to make LOOCV non-degenerate
    const rows = fs.readFileSync(path.join(FIXTURES, "cohort.csv"), "utf8")
      .trim().split("\n");
    const abs = (row: string) => row.split(",").map((f, i) =>
      i >= 4 ? path.join(FIXTURES, f) : f).join(",");
    const dup = (row: string, id: string) => {
      const f = row.split(",");
      f[0] = id;
      return abs(f.join(","));
    };
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "cli-"));
    const manifest = path.join(dir, "cohort.csv");
    fs.writeFileSync(manifest, [
      rows[0], abs(rows[1]), abs(rows[2]),
      dup(rows[1], "subj01-03"), dup(rows[2], "subj01-04"),
    ].join("\n") + "\n");

    const out = path.join(dir, "results");
    const code = await main([
      "--manifest", manifest, "--variant", "single-encoder",
      "--modalities", "Ki", "--out-dir", out,
      "--epochs", "2", "--dims", "40,40,28",
    ]);
    expect(code).toBe(0);
    const summary = fs.readFileSync(path.join(out, "summary.csv"), "utf8");
    expect(summary.split("\n")[0]).toBe("Model,Modality,Accuracy,Precision,Recall");
    expect(summary.split("\n")[1].startsWith("single-encoder,Ki,")).toBe(true);
    const folds = fs.readFileSync(path.join(out, "folds.jsonl"), "utf8")
      .trim().split("\n");
    expect(folds.length).toBe(4);
  }, 600_000);
});

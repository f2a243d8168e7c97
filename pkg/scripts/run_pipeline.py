#!/usr/bin/env python3
"""End-to-end pipeline on the default desk phantom.

Simulates the phantom, motion-corrects, derives the blood input (ICA ->
IDIF -> MCIF), computes Patlak Ki and SUV maps, segments both tumors,
harmonizes to the atlas grid, and exports masked tumor samples plus a cohort
manifest. Every stage goes through the `dpet` CLI, so a rerun with the same
arguments produces hash-identical outputs.

Usage: python3 scripts/run_pipeline.py [--out-dir OUT] [--workers N]
"""

import argparse
import os
import sys

import numpy as np

from dpet.cli import main as dpet
from dpet.niftiio import read_nifti
from dpet.tumor import read_manifest


def run(stage, argv):
    code = dpet(argv)
    if code != 0:
        print(f"stage {stage!r} failed with exit code {code}", file=sys.stderr)
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="pipeline_out", help="output directory")
    ap.add_argument("--workers", type=int, default=1, help="patlak worker count")
    ap.add_argument("--skip-motion-correct", action="store_true",
                    help="skip the (slow) frame registration stage")
    args = ap.parse_args()

    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    j = lambda *p: os.path.join(out, *p)

    run("phantom", ["phantom", "generate", "--out-dir", j("phantom")])

    pet = j("phantom", "pet_dynamic.nii")
    if args.skip_motion_correct:
        pet_mc = pet
    else:
        pet_mc = j("pet_mc.nii")
        run("motion-correct", ["motion-correct", "--input", pet, "--output", pet_mc,
                               "--reference-frame", "38",
                               "--transforms-dir", j("transforms"),
                               "--max-iter", "40", "--levels", "1",
                               "--sample-fraction", "0.25"])

    dyn, _ = read_nifti(pet_mc)
    early = int(np.argmax([float(fr.values.max()) for fr in dyn.frames]))
    run("segment-ica", ["segment-ica", "--input", pet_mc, "--output", j("ica.nii"),
                        "--early-frame", str(early)])
    run("idif", ["idif", "--input", pet_mc, "--mask", j("ica.nii"),
                 "--output", j("idif.csv")])
    run("mcif", ["mcif", "--idif", j("idif.csv"), "--output", j("mcif.txt"),
                 "--input", pet_mc, "--mask", j("ica.nii")])
    run("patlak", ["patlak", "--input", pet_mc, "--blood-input", j("mcif.txt"),
                   "--out-prefix", j("patlak"), "--workers", str(args.workers)])
    run("suv", ["suv", "--input", pet_mc, "--meta", j("phantom", "study.meta.txt"),
                "--output", j("suv.nii")])
    run("segment-tumor", ["segment-tumor", "--input", j("patlak_ki.nii"),
                          "--output", j("tumor.nii"),
                          "--seed", "14,15,15", "--seed", "34,31,17",
                          "--low", "0.007", "--high", "0.04", "--sigma-mm", "2.0"])
    run("harmonize", ["harmonize", "--mr", j("phantom", "mr.nii"),
                      "--others", f"{j('suv.nii')},{j('patlak_ki.nii')}",
                      "--mask", j("tumor.nii"),
                      "--atlas-dims", "48,48,32", "--atlas-voxel", "2,2,2",
                      "--out-dir", j("atlas")])
    run("extract", ["extract", "--mr", j("atlas", "mr_atlas.nii"),
                    "--suv", j("atlas", "suv_atlas.nii"),
                    "--ki", j("atlas", "patlak_ki_atlas.nii"),
                    "--mask", j("atlas", "mask_atlas.nii"),
                    "--subject-id", "subj01", "--labels", "TP,TN",
                    "--crop-dims", "40,40,28", "--out-dir", j("samples")])
    run("export", ["export", "--manifest", j("cohort.csv"),
                   "--inputs", j("samples", "manifest.csv")])

    rows = read_manifest(j("cohort.csv"))
    print(f"exported {len(rows)} tumor samples")
    for r in rows:
        print(f"  {r['sample_id']}: label={r['label']} verified={r['verified']}")
    print(f"cohort manifest: {j('cohort.csv')}")
    if len(rows) < 2:
        print("expected >= 2 samples", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()

"""Command-line pipeline stages. Every stage reads/writes NIfTI + sidecars,
emits a provenance JSON next to its primary output, and exits 0 on success,
2 on validation errors, 3 on numeric failures."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .bloodinput import (
    TimeActivityCurve,
    dilation_shell_tac,
    extract_idif,
    fit_mcif,
    load_mcif_result,
    save_mcif_result,
    segment_ica,
)
from .errors import DpetError, NumericError, SpecInvalid, ValidationError
from .niftiio import (
    StudyMeta,
    default_schedule_path,
    read_meta_sidecar,
    read_nifti,
    write_meta_sidecar,
    write_nifti,
    write_schedule_sidecar,
)
from .patlak import SuvConfig, patlak_map, static_frame_average, suv_map
from .phantom import (
    default_phantom_spec,
    simulate_dynamic,
    simulate_mr,
    spec_from_text,
    spec_to_text,
)
from .registration import MIConfig, motion_correct
from .tumor import (
    conservative_mask,
    export_samples,
    extract_samples,
    harmonize_to_atlas,
    read_manifest,
    region_grow,
    set_verified,
)
from .volume import DynamicVolume, Geometry, Mask, Volume3D

log = logging.getLogger("dpet")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_provenance(primary_output, stage: str, inputs, config: dict) -> None:
    prov = {
        "stage": stage,
        "tool_version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs if os.path.exists(str(p))},
        "config": config,
    }
    with open(str(primary_output) + ".prov.json", "w") as f:
        json.dump(prov, f, indent=2, sort_keys=True)
        f.write("\n")


def _triple(text, cast=float):
    parts = [cast(p) for p in text.split(",")]
    if len(parts) != 3:
        raise SpecInvalid(f"expected 3 comma-separated values, got {text!r}")
    return tuple(parts)


def _read_mask(path) -> Mask:
    vol, _ = read_nifti(path)
    if isinstance(vol, DynamicVolume):
        raise SpecInvalid(f"{path}: expected a 3D mask, got 4D")
    return Mask(vol.geometry, vol.values > 0.5)


def _read_dynamic(path) -> DynamicVolume:
    vol, _ = read_nifti(path)
    if not isinstance(vol, DynamicVolume):
        raise SpecInvalid(f"{path}: expected a 4D dynamic image")
    return vol


def _read_static(path) -> Volume3D:
    vol, _ = read_nifti(path)
    if isinstance(vol, DynamicVolume):
        raise SpecInvalid(f"{path}: expected a 3D image, got 4D")
    return vol


def _load_blood_input(path):
    """MCIF key=value file -> parametric input; CSV TAC -> sampled input."""
    if str(path).endswith(".csv"):
        return TimeActivityCurve.load_csv(path)
    return load_mcif_result(path).input


def _mi_config(args) -> MIConfig:
    return MIConfig(bins=args.bins, sample_fraction=args.sample_fraction,
                    max_iter=args.max_iter, param_tolerance=args.param_tolerance,
                    levels=args.levels)


def _add_mi_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bins", type=int, default=32, help="MI histogram bin count")
    p.add_argument("--sample-fraction", type=float, default=1.0,
                   help="fraction of fixed voxels sampled for MI")
    p.add_argument("--max-iter", type=int, default=400, help="Nelder-Mead iteration cap")
    p.add_argument("--param-tolerance", type=float, default=0.01,
                   help="simplex convergence tolerance (mm / degrees)")
    p.add_argument("--levels", type=int, default=2, help="multiresolution levels")


# ---------------------------------------------------------------- subcommands

def cmd_phantom_generate(args) -> int:
    if args.spec:
        with open(args.spec) as f:
            spec = spec_from_text(f.read())
    else:
        spec = default_phantom_spec(noise_seed=args.noise_seed,
                                    noise_scale=args.noise_scale,
                                    artery_pv=args.artery_pv,
                                    mr_noise=args.mr_noise)
    os.makedirs(args.out_dir, exist_ok=True)
    dyn, true_ki = simulate_dynamic(spec)
    mr = simulate_mr(spec)
    pet_path = os.path.join(args.out_dir, "pet_dynamic.nii")
    write_nifti(dyn, pet_path)
    write_schedule_sidecar(spec.schedule, default_schedule_path(pet_path))
    write_nifti(mr, os.path.join(args.out_dir, "mr.nii"))
    write_nifti(true_ki, os.path.join(args.out_dir, "true_ki.nii"))
    meta = StudyMeta(injected_dose_mbq=args.dose_mbq, body_weight_kg=args.weight_kg)
    write_meta_sidecar(meta, os.path.join(args.out_dir, "study.meta.txt"))
    with open(os.path.join(args.out_dir, "phantom_spec.txt"), "w") as f:
        f.write(spec_to_text(spec))
    _write_provenance(pet_path, "phantom-generate", [args.spec] if args.spec else [],
                      {"noise_seed": spec.noise_seed, "noise_scale": spec.noise_scale,
                       "artery_pv": spec.artery_pv, "mr_noise": spec.mr_noise,
                       "dose_mbq": args.dose_mbq, "weight_kg": args.weight_kg})
    log.info("phantom written to %s", args.out_dir)
    return 0


def cmd_motion_correct(args) -> int:
    dyn = _read_dynamic(args.input)
    cfg = _mi_config(args)
    corrected, transforms = motion_correct(dyn, args.reference_frame, cfg)
    write_nifti(corrected, args.output)
    write_schedule_sidecar(dyn.schedule, default_schedule_path(args.output))
    if args.transforms_dir:
        os.makedirs(args.transforms_dir, exist_ok=True)
        for i, t in enumerate(transforms):
            t.save(os.path.join(args.transforms_dir, f"frame_{i:03d}.txt"))
    _write_provenance(args.output, "motion-correct", [args.input],
                      {"reference_frame": args.reference_frame, "bins": cfg.bins,
                       "max_iter": cfg.max_iter, "levels": cfg.levels,
                       "sample_fraction": cfg.sample_fraction,
                       "param_tolerance": cfg.param_tolerance})
    return 0


def cmd_segment_ica(args) -> int:
    dyn = _read_dynamic(args.input)
    mask = segment_ica(dyn, args.early_frame, args.threshold_fraction,
                       (args.min_size, args.max_size))
    write_nifti(Volume3D(mask.geometry, mask.membership.astype(np.uint8)),
                args.output, datatype=2)
    _write_provenance(args.output, "segment-ica", [args.input],
                      {"early_frame": args.early_frame,
                       "threshold_fraction": args.threshold_fraction,
                       "min_size": args.min_size, "max_size": args.max_size})
    log.info("ICA mask: %d voxels", mask.count)
    return 0


def cmd_idif(args) -> int:
    dyn = _read_dynamic(args.input)
    mask = _read_mask(args.mask)
    tac = extract_idif(dyn, mask)
    tac.save_csv(args.output)
    _write_provenance(args.output, "idif", [args.input, args.mask], {})
    return 0


def cmd_mcif(args) -> int:
    idif = TimeActivityCurve.load_csv(args.idif)
    if args.tissue_ref:
        ref = TimeActivityCurve.load_csv(args.tissue_ref)
    else:
        dyn = _read_dynamic(args.input)
        mask = _read_mask(args.mask)
        ref = dilation_shell_tac(dyn, mask, shell_voxels=args.shell_voxels)
    from .phantom import default_input_model

    # the population-template input model anchors the recovery-coefficient /
    # amplitude split, so its absolute scale is kept as-is
    init = default_input_model()
    result = fit_mcif(idif, ref, init, rc_init=args.rc_init, sp_init=args.sp_init,
                      max_iter=args.max_iter)
    save_mcif_result(result, args.output)
    _write_provenance(args.output, "mcif",
                      [args.idif] + ([args.tissue_ref] if args.tissue_ref
                                     else [args.input, args.mask]),
                      {"rc_init": args.rc_init, "sp_init": args.sp_init,
                       "shell_voxels": args.shell_voxels, "max_iter": args.max_iter})
    log.info("MCIF fit: rc=%.3f sp=%.3f rms=%.4g converged=%s",
             result.rc, result.sp, result.residual_rms, result.converged)
    return 0


def cmd_patlak(args) -> int:
    dyn = _read_dynamic(args.input)
    blood = _load_blood_input(args.blood_input)
    mask = _read_mask(args.mask) if args.mask else None
    pmap = patlak_map(dyn, blood, t_star=args.t_star, mask=mask, workers=args.workers)
    ki_path = args.out_prefix + "_ki.nii"
    write_nifti(pmap.ki_map, ki_path)
    write_nifti(pmap.v_map, args.out_prefix + "_v.nii")
    write_nifti(pmap.r2_map, args.out_prefix + "_r2.nii")
    write_nifti(Volume3D(pmap.mask.geometry, pmap.mask.membership.astype(np.uint8)),
                args.out_prefix + "_mask.nii", datatype=2)
    _write_provenance(ki_path, "patlak",
                      [args.input, args.blood_input] + ([args.mask] if args.mask else []),
                      {"t_star": args.t_star, "workers": args.workers})
    return 0


def cmd_suv(args) -> int:
    vol, _ = read_nifti(args.input)
    if isinstance(vol, DynamicVolume):
        lo, hi = (float(x) for x in args.window.split(","))
        vol = static_frame_average(vol, (lo, hi))
    meta = read_meta_sidecar(args.meta)
    cfg = SuvConfig(meta.injected_dose_mbq, meta.body_weight_kg)
    write_nifti(suv_map(vol, cfg), args.output)
    _write_provenance(args.output, "suv", [args.input, args.meta],
                      {"window": args.window})
    return 0


def cmd_segment_tumor(args) -> int:
    vol = _read_static(args.input)
    grown = np.zeros(vol.geometry.dims, dtype=bool)
    for seed in args.seed:
        m = region_grow(vol, _triple(seed, int), args.low, args.high)
        grown |= m.membership
    mask = Mask(vol.geometry, grown)
    if args.sigma_mm > 0:
        mask = conservative_mask(mask, args.sigma_mm, args.level)
    write_nifti(Volume3D(mask.geometry, mask.membership.astype(np.uint8)),
                args.output, datatype=2)
    _write_provenance(args.output, "segment-tumor", [args.input],
                      {"seeds": list(args.seed), "low": args.low, "high": args.high,
                       "sigma_mm": args.sigma_mm, "level": args.level})
    log.info("tumor mask: %d voxels", mask.count)
    return 0


def cmd_harmonize(args) -> int:
    mr = _read_static(args.mr)
    others = [_read_static(p) for p in args.others.split(",")] if args.others else []
    mask = _read_mask(args.mask)
    dims = _triple(args.atlas_dims, int)
    voxel = _triple(args.atlas_voxel)
    origin = _triple(args.atlas_origin)
    atlas_geom = Geometry(dims, voxel, origin)
    atlas_ref = _read_static(args.atlas_ref) if args.atlas_ref else None
    cfg = _mi_config(args)
    hset = harmonize_to_atlas(mr, others, mask, atlas_geom, cfg, atlas_ref)
    os.makedirs(args.out_dir, exist_ok=True)
    mr_path = os.path.join(args.out_dir, "mr_atlas.nii")
    write_nifti(hset.mr, mr_path)
    other_names = [os.path.splitext(os.path.basename(p))[0] for p in
                   (args.others.split(",") if args.others else [])]
    for name, vol in zip(other_names, hset.others):
        write_nifti(vol, os.path.join(args.out_dir, f"{name}_atlas.nii"))
    write_nifti(Volume3D(hset.mask.geometry, hset.mask.membership.astype(np.uint8)),
                os.path.join(args.out_dir, "mask_atlas.nii"), datatype=2)
    hset.transform.save(os.path.join(args.out_dir, "mr_to_atlas.txt"))
    _write_provenance(mr_path, "harmonize",
                      [args.mr, args.mask] + (args.others.split(",") if args.others else [])
                      + ([args.atlas_ref] if args.atlas_ref else []),
                      {"atlas_dims": list(dims), "atlas_voxel": list(voxel),
                       "atlas_origin": list(origin), "bins": cfg.bins,
                       "levels": cfg.levels, "max_iter": cfg.max_iter,
                       "sample_fraction": cfg.sample_fraction,
                       "param_tolerance": cfg.param_tolerance})
    return 0


def cmd_extract(args) -> int:
    mods = {
        "MR": _read_static(args.mr),
        "SUV": _read_static(args.suv),
        "Ki": _read_static(args.ki),
    }
    mask = _read_mask(args.mask)
    labels = args.labels.split(",") if "," in args.labels else args.labels
    crop = _triple(args.crop_dims, int)
    samples = extract_samples(mods, mask, labels, args.subject_id, crop_dims=crop)
    manifest = export_samples(samples, args.out_dir)
    _write_provenance(manifest, "extract",
                      [args.mr, args.suv, args.ki, args.mask],
                      {"subject_id": args.subject_id, "labels": args.labels,
                       "crop_dims": list(crop)})
    log.info("exported %d samples to %s", len(samples), args.out_dir)
    return 0


def cmd_export(args) -> int:
    if args.verify:
        set_verified(args.manifest, args.verify, True)
        _write_provenance(args.manifest, "export-verify", [],
                          {"verified_sample": args.verify})
        return 0
    # merge per-subject manifests into a cohort manifest
    import csv as _csv

    all_rows = []
    for m in args.inputs:
        base = os.path.dirname(os.path.abspath(m))
        for r in read_manifest(m):
            for col in ("mr_path", "suv_path", "ki_path", "mask_path"):
                r[col] = os.path.join(base, r[col])
            all_rows.append(r)
    all_rows.sort(key=lambda r: r["sample_id"])
    with open(args.manifest, "w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=list(all_rows[0].keys()) if all_rows
                            else ["sample_id", "subject_id", "label", "verified",
                                  "mr_path", "suv_path", "ki_path", "mask_path"])
        w.writeheader()
        w.writerows(all_rows)
    _write_provenance(args.manifest, "export", args.inputs, {})
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpet",
        description="Dynamic FDG PET kinetic modeling pipeline "
                    "(phantom, motion correction, IDIF/MCIF, Patlak, SUV, tumor export).",
    )
    parser.add_argument("--log-level", default="INFO", help="logging level (stderr)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ph = sub.add_parser("phantom", help="synthetic phantom tools")
    ph_sub = p_ph.add_subparsers(dest="phantom_command", required=True)
    g = ph_sub.add_parser("generate", help="simulate the desk phantom")
    g.add_argument("--spec", default=None, help="phantom spec config file (key=value)")
    g.add_argument("--out-dir", required=True, help="output directory")
    g.add_argument("--noise-seed", type=int, default=0, help="noise RNG seed")
    g.add_argument("--noise-scale", type=float, default=0.0, help="activity noise scale")
    g.add_argument("--mr-noise", type=float, default=0.0, help="MR noise sd")
    g.add_argument("--artery-pv", type=float, default=1.0,
                   help="partial-volume factor applied to artery voxels")
    g.add_argument("--dose-mbq", type=float, default=370.0, help="injected dose (MBq)")
    g.add_argument("--weight-kg", type=float, default=70.0, help="body weight (kg)")
    g.set_defaults(func=cmd_phantom_generate)

    p = sub.add_parser("motion-correct", help="register frames to a reference frame")
    p.add_argument("--input", required=True, help="4D dynamic NIfTI")
    p.add_argument("--output", required=True, help="corrected 4D NIfTI")
    p.add_argument("--reference-frame", type=int, required=True, help="reference frame index")
    p.add_argument("--transforms-dir", default=None, help="directory for per-frame transforms")
    _add_mi_args(p)
    p.set_defaults(func=cmd_motion_correct)

    p = sub.add_parser("segment-ica", help="threshold + islanding on an early frame")
    p.add_argument("--input", required=True, help="4D dynamic NIfTI")
    p.add_argument("--output", required=True, help="ICA mask NIfTI")
    p.add_argument("--early-frame", type=int, required=True, help="early frame index")
    p.add_argument("--threshold-fraction", type=float, default=0.5,
                   help="threshold as fraction of frame max")
    p.add_argument("--min-size", type=int, default=50, help="min component voxels")
    p.add_argument("--max-size", type=int, default=5000, help="max component voxels")
    p.set_defaults(func=cmd_segment_ica)

    p = sub.add_parser("idif", help="mean TAC over the ICA mask")
    p.add_argument("--input", required=True, help="4D dynamic NIfTI")
    p.add_argument("--mask", required=True, help="ICA mask NIfTI")
    p.add_argument("--output", required=True, help="IDIF CSV")
    p.set_defaults(func=cmd_idif)

    p = sub.add_parser("mcif", help="fit the model-corrected input function")
    p.add_argument("--idif", required=True, help="IDIF CSV")
    p.add_argument("--output", required=True, help="MCIF result key=value file")
    p.add_argument("--input", default=None, help="4D dynamic NIfTI (for spillover shell)")
    p.add_argument("--mask", default=None, help="ICA mask NIfTI (for spillover shell)")
    p.add_argument("--tissue-ref", default=None, help="explicit spillover reference TAC CSV")
    p.add_argument("--shell-voxels", type=int, default=2, help="dilation shell width")
    p.add_argument("--rc-init", type=float, default=0.8, help="initial recovery coefficient")
    p.add_argument("--sp-init", type=float, default=0.1, help="initial spillover fraction")
    p.add_argument("--max-iter", type=int, default=4000, help="Nelder-Mead iteration cap")
    p.set_defaults(func=cmd_mcif)

    p = sub.add_parser("patlak", help="voxel-wise Patlak Ki map")
    p.add_argument("--input", required=True, help="4D dynamic NIfTI")
    p.add_argument("--blood-input", required=True,
                   help="MCIF result file or sampled TAC CSV")
    p.add_argument("--out-prefix", required=True, help="output path prefix")
    p.add_argument("--t-star", type=float, default=20.0, help="Patlak onset (min)")
    p.add_argument("--mask", default=None, help="restrict fitting to this mask")
    p.add_argument("--workers", type=int, default=1, help="parallel worker count")
    p.set_defaults(func=cmd_patlak)

    p = sub.add_parser("suv", help="standardized uptake value map")
    p.add_argument("--input", required=True, help="static 3D NIfTI or 4D dynamic")
    p.add_argument("--meta", required=True, help="study meta sidecar (dose, weight)")
    p.add_argument("--output", required=True, help="SUV NIfTI")
    p.add_argument("--window", default="40,60",
                   help="static window (min) when input is dynamic")
    p.set_defaults(func=cmd_suv)

    p = sub.add_parser("segment-tumor", help="seed-based region growing + conservative mask")
    p.add_argument("--input", required=True, help="3D NIfTI to segment")
    p.add_argument("--output", required=True, help="tumor mask NIfTI")
    p.add_argument("--seed", action="append", required=True,
                   help="seed voxel index x,y,z (repeatable)")
    p.add_argument("--low", type=float, required=True, help="band lower bound")
    p.add_argument("--high", type=float, required=True, help="band upper bound")
    p.add_argument("--sigma-mm", type=float, default=2.0,
                   help="conservative smoothing sigma (0 disables)")
    p.add_argument("--level", type=float, default=0.6, help="conservative threshold level")
    p.set_defaults(func=cmd_segment_tumor)

    p = sub.add_parser("harmonize", help="register MR to atlas, resample all modalities")
    p.add_argument("--mr", required=True, help="subject-space MR NIfTI")
    p.add_argument("--others", default="", help="comma-separated other modality NIfTIs")
    p.add_argument("--mask", required=True, help="tumor mask NIfTI")
    p.add_argument("--atlas-dims", default="240,240,155", help="atlas grid dims")
    p.add_argument("--atlas-voxel", default="1,1,1", help="atlas voxel size (mm)")
    p.add_argument("--atlas-origin", default="0,0,0", help="atlas origin (mm)")
    p.add_argument("--atlas-ref", default=None,
                   help="atlas reference image (identity transform if omitted)")
    p.add_argument("--out-dir", required=True, help="output directory")
    _add_mi_args(p)
    p.set_defaults(func=cmd_harmonize)

    p = sub.add_parser("extract", help="mask, crop, and export tumor samples")
    p.add_argument("--mr", required=True, help="atlas-space MR NIfTI")
    p.add_argument("--suv", required=True, help="atlas-space SUV NIfTI")
    p.add_argument("--ki", required=True, help="atlas-space Ki NIfTI")
    p.add_argument("--mask", required=True, help="atlas-space tumor mask NIfTI")
    p.add_argument("--subject-id", required=True, help="subject identifier")
    p.add_argument("--labels", required=True,
                   help="class label, or comma list per size-ordered component")
    p.add_argument("--crop-dims", default="170,170,120", help="center crop dims")
    p.add_argument("--out-dir", required=True, help="samples output directory")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("export", help="merge subject manifests / set verified flags")
    p.add_argument("--manifest", required=True, help="cohort manifest CSV path")
    p.add_argument("--inputs", nargs="*", default=[], help="per-subject manifest CSVs")
    p.add_argument("--verify", default=None, help="mark this sample_id as expert-verified")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        log.error("%s: %s", args.command, e)
        return 2
    except OSError as e:
        log.error("%s: %s", args.command, e)
        return 2
    except NumericError as e:
        log.error("%s: numeric failure: %s", args.command, e)
        return 3
    except DpetError as e:
        log.error("%s: %s", args.command, e)
        return 3


if __name__ == "__main__":
    sys.exit(main())

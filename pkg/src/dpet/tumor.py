"""Tumor segmentation, conservative masking, atlas-space harmonization, and
export of aligned multi-modal tumor voxel tensors."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, IoFailure, MaskOutsideCrop, SeedOutOfRange, SpecInvalid
from .niftiio import write_nifti
from .registration import MIConfig, register_rigid
from .rigid import RigidTransform
from .volume import (
    Geometry,
    Mask,
    Volume3D,
    bounding_box,
    center_crop,
    center_crop_mask,
    connected_components,
    gaussian_smooth,
    resample_trilinear,
    _crop_start,
)

DEFAULT_CROP_DIMS = (170, 170, 120)
DEFAULT_CONSERVATIVE_LEVEL = 0.6
MODALITIES = ("MR", "SUV", "Ki")


def region_grow(src: Volume3D, seed: tuple[int, int, int], low: float, high: float) -> Mask:
    """Maximal 26-connected set containing `seed` with values in [low, high]."""
    seed = tuple(int(s) for s in seed)
    dims = src.geometry.dims
    if any(not (0 <= s < d) for s, d in zip(seed, dims)):
        raise SpecInvalid(f"seed {seed} outside volume dims {dims}")
    seed_value = float(src.values[seed])
    if not (low <= seed_value <= high):
        raise SeedOutOfRange(f"seed value {seed_value} outside band [{low}, {high}]")
    band = Mask(src.geometry, (src.values >= low) & (src.values <= high))
    labels, _ = connected_components(band, connectivity=26)
    return Mask(src.geometry, labels == labels[seed])


def conservative_mask(raw: Mask, sigma_mm: float,
                      level: float = DEFAULT_CONSERVATIVE_LEVEL) -> Mask:
    """Smooth the rasterized mask and re-threshold; level > 0.5 shrinks it."""
    if not (0.0 < level < 1.0):
        raise SpecInvalid("level must be in (0, 1)")
    field_ = Volume3D(raw.geometry, raw.membership.astype(float))
    smoothed = gaussian_smooth(field_, sigma_mm)
    return Mask(raw.geometry, smoothed.values > level)


@dataclass
class HarmonizedSet:
    mr: Volume3D
    others: list[Volume3D]
    mask: Mask
    transform: RigidTransform
    mi: float


def harmonize_to_atlas(mr: Volume3D, others: list[Volume3D], mask: Mask,
                       atlas_geom: Geometry, cfg: MIConfig = MIConfig(),
                       atlas_ref: Volume3D | None = None) -> HarmonizedSet:
    """Estimate a single rigid MR->atlas transform and apply it to every modality
    (trilinear) and the mask (nearest-neighbor), all resampled onto atlas_geom.

    Without an atlas reference image the transform is identity (pure resampling).
    """
    for v in others:
        if v.geometry.dims != mr.geometry.dims:
            raise SpecInvalid("all modalities must share the MR geometry")
    if mask.geometry.dims != mr.geometry.dims:
        raise SpecInvalid("mask must share the MR geometry")

    if atlas_ref is None:
        transform = RigidTransform.identity(tuple(atlas_geom.physical_center()))
        mi = float("nan")
    else:
        result = register_rigid(atlas_ref, mr, cfg)
        transform, mi = result.transform, result.mi

    mr_a = resample_trilinear(mr, atlas_geom, transform)
    others_a = [resample_trilinear(v, atlas_geom, transform) for v in others]
    mask_vol = Volume3D(mask.geometry, mask.membership.astype(float))
    mask_a = resample_trilinear(mask_vol, atlas_geom, transform, order=0)
    return HarmonizedSet(mr_a, others_a, Mask(atlas_geom, mask_a.values > 0.5),
                         transform, mi)


@dataclass
class TumorSample:
    sample_id: str
    subject_id: str
    modalities: dict[str, Volume3D]  # keys: MR, SUV, Ki
    mask: Mask
    label: str  # TP | TN
    verified: bool = False
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in ("TP", "TN"):
            raise SpecInvalid(f"label must be TP or TN, got {self.label!r}")
        dims = self.mask.geometry.dims
        for name, vol in self.modalities.items():
            if vol.geometry.dims != dims:
                raise SpecInvalid(f"modality {name} dims {vol.geometry.dims} != mask dims {dims}")
            outside = np.abs(vol.values[~self.mask.membership])
            if outside.size and float(outside.max()) != 0.0:
                raise SpecInvalid(f"modality {name} has nonzero values outside the mask")


def extract_samples(modalities: dict[str, Volume3D], mask: Mask, labels,
                    subject_id: str, crop_dims=DEFAULT_CROP_DIMS,
                    provenance: dict | None = None) -> list[TumorSample]:
    """Split the mask into 26-connected components and package each as a
    masked, center-cropped TumorSample.

    `labels` is either one label for all components or a list ordered like the
    size-descending component ids.
    """
    if mask.count == 0:
        raise EmptyMask("tumor mask is empty")
    crop_dims = tuple(int(c) for c in crop_dims)
    comp_labels, counts = connected_components(mask, connectivity=26)
    if isinstance(labels, str):
        labels = [labels] * len(counts)
    if len(labels) < len(counts):
        raise SpecInvalid(f"{len(counts)} components but only {len(labels)} labels")

    start = _crop_start(mask.geometry.dims, crop_dims)
    samples = []
    for comp_id in range(1, len(counts) + 1):
        comp = Mask(mask.geometry, comp_labels == comp_id)
        bbox = bounding_box(comp)
        for axis, (lo, hi) in enumerate(bbox):
            if lo < start[axis] or hi >= start[axis] + crop_dims[axis]:
                raise MaskOutsideCrop(
                    f"component {comp_id} bbox {bbox} outside crop window"
                )
        comp_cropped = center_crop_mask(comp, crop_dims)
        mods = {}
        for name, vol in modalities.items():
            masked = vol.with_values(np.where(comp.membership, vol.values, 0.0))
            mods[name] = center_crop(masked, crop_dims)
        samples.append(TumorSample(
            sample_id=f"{subject_id}-{comp_id:02d}",
            subject_id=subject_id,
            modalities=mods,
            mask=comp_cropped,
            label=labels[comp_id - 1],
            provenance=dict(provenance or {}, component=comp_id,
                            component_voxels=counts[comp_id - 1],
                            crop_dims=list(crop_dims)),
        ))
    return samples


MANIFEST_COLUMNS = ("sample_id", "subject_id", "label", "verified",
                    "mr_path", "suv_path", "ki_path", "mask_path")


def export_samples(samples: list[TumorSample], out_dir) -> str:
    """Write each modality tensor as float32 NIfTI plus a manifest CSV.

    Returns the manifest path. This manifest is the classifier's sole input."""
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    rows = []
    for s in sorted(samples, key=lambda s: s.sample_id):
        paths = {}
        for name in MODALITIES:
            if name not in s.modalities:
                raise SpecInvalid(f"sample {s.sample_id} missing modality {name}")
            p = os.path.join(out_dir, f"{s.sample_id}_{name.lower()}.nii")
            write_nifti(s.modalities[name], p)
            paths[name] = os.path.basename(p)
        mask_path = os.path.join(out_dir, f"{s.sample_id}_mask.nii")
        write_nifti(Volume3D(s.mask.geometry, s.mask.membership.astype(np.uint8)),
                    mask_path, datatype=2)
        rows.append([s.sample_id, s.subject_id, s.label, int(s.verified),
                     paths["MR"], paths["SUV"], paths["Ki"], os.path.basename(mask_path)])
    try:
        with open(manifest_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(MANIFEST_COLUMNS)
            w.writerows(rows)
    except OSError as e:
        raise IoFailure(str(e)) from e
    return manifest_path


def read_manifest(manifest_path):
    """Rows of the export manifest as dicts (paths relative to the manifest dir)."""
    with open(manifest_path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        if tuple(r.keys())[: len(MANIFEST_COLUMNS)] != MANIFEST_COLUMNS:
            raise SpecInvalid("manifest columns do not match the export schema")
    return rows


def set_verified(manifest_path, sample_id: str, verified: bool = True) -> None:
    """Flip the expert-verification flag for one sample (audit trail, no algorithm)."""
    rows = read_manifest(manifest_path)
    hit = False
    for r in rows:
        if r["sample_id"] == sample_id:
            r["verified"] = str(int(verified))
            hit = True
    if not hit:
        raise SpecInvalid(f"sample {sample_id} not in manifest")
    with open(manifest_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)

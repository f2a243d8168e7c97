"""Rigid registration by mutual-information maximization (Nelder-Mead,
coarse-to-fine) and dynamic-frame motion correction."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage, optimize

from .errors import InsufficientOverlap
from .rigid import RigidTransform
from .volume import DynamicVolume, Geometry, Volume3D, resample_trilinear

MIN_OVERLAP_FRACTION = 0.10


@dataclass(frozen=True)
class MIConfig:
    bins: int = 32
    sample_fraction: float = 1.0
    optimizer: str = "nelder-mead"
    max_iter: int = 400
    param_tolerance: float = 0.01  # mm / degrees
    levels: int = 2  # multiresolution: level 0 is the coarsest

    def __post_init__(self):
        if self.bins < 8:
            raise ValueError("bins must be >= 8")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not (0.0 < self.sample_fraction <= 1.0):
            raise ValueError("sample_fraction must be in (0, 1]")
        if self.optimizer != "nelder-mead":
            raise ValueError("only nelder-mead is supported")


@dataclass
class RegistrationResult:
    transform: RigidTransform
    mi: float
    converged: bool


def _sample_points(geom: Geometry, fraction: float) -> np.ndarray:
    """Deterministic voxel-center sample of the fixed grid (strided when fraction < 1)."""
    nx, ny, nz = geom.dims
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
    if fraction < 1.0:
        stride = max(1, int(round(1.0 / fraction)))
        idx = idx[::stride]
    return idx


def _mi_from_samples(fixed_vals, moving_vals, bins: int) -> float:
    f_lo, f_hi = fixed_vals.min(), fixed_vals.max()
    m_lo, m_hi = moving_vals.min(), moving_vals.max()
    if f_hi <= f_lo or m_hi <= m_lo:
        return 0.0
    hist, _, _ = np.histogram2d(
        fixed_vals, moving_vals, bins=bins, range=[[f_lo, f_hi], [m_lo, m_hi]]
    )
    p = hist / hist.sum()
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    nz = p > 0
    outer = np.outer(px, py)
    return float(np.sum(p[nz] * np.log(p[nz] / outer[nz])))


def mutual_information(fixed: Volume3D, moving: Volume3D, T: RigidTransform,
                       cfg: MIConfig = MIConfig()) -> float:
    """MI of the joint intensity histogram over voxels where the moving image
    (resampled through T) overlaps the fixed grid."""
    idx = _sample_points(fixed.geometry, cfg.sample_fraction)
    pts = T.apply(fixed.geometry.voxel_to_physical(idx))
    mov_idx = moving.geometry.physical_to_voxel(pts)
    dims = np.asarray(moving.geometry.dims)
    inside = np.all((mov_idx >= 0) & (mov_idx <= dims - 1), axis=1)
    if inside.sum() < MIN_OVERLAP_FRACTION * len(idx):
        raise InsufficientOverlap(
            f"only {inside.sum()}/{len(idx)} fixed samples land inside the moving image"
        )
    moving_vals = ndimage.map_coordinates(
        np.asarray(moving.values, dtype=float), mov_idx[inside].T,
        order=1, mode="constant", cval=0.0, prefilter=False,
    )
    fixed_vals = np.asarray(fixed.values, dtype=float).reshape(-1)[
        np.flatnonzero(inside)] if cfg.sample_fraction == 1.0 else None
    if fixed_vals is None:
        flat = np.asarray(fixed.values, dtype=float)
        fixed_vals = flat[idx[inside, 0], idx[inside, 1], idx[inside, 2]]
    return _mi_from_samples(fixed_vals, moving_vals, cfg.bins)


def _downsample2(vol: Volume3D) -> Volume3D:
    """Block-average by 2 along each axis (trailing odd voxel dropped)."""
    v = np.asarray(vol.values, dtype=float)
    nx, ny, nz = (d // 2 * 2 for d in v.shape)
    if min(nx, ny, nz) < 2:
        return vol
    v = v[:nx, :ny, :nz].reshape(nx // 2, 2, ny // 2, 2, nz // 2, 2).mean(axis=(1, 3, 5))
    g = vol.geometry
    # block centers: origin shifts by half the old voxel along each axis
    shift = g.direction @ (np.asarray(g.voxel_size) * 0.5)
    geom = Geometry(v.shape, tuple(2 * s for s in g.voxel_size),
                    tuple(np.asarray(g.origin) + shift), g.direction)
    return Volume3D(geom, v, vol.units)


def register_rigid(fixed: Volume3D, moving: Volume3D, cfg: MIConfig = MIConfig(),
                   init: RigidTransform | None = None) -> RegistrationResult:
    """Maximize MI over the 6 rigid parameters, coarse-to-fine.

    Deterministic given identical inputs and config. If max_iter is exhausted the
    best-so-far transform is returned with converged=False.
    """
    center = tuple(fixed.geometry.physical_center())
    if init is None:
        init = RigidTransform.identity(center)
    params = init.to_params()

    pyramids = [(fixed, moving)]
    for _ in range(cfg.levels - 1):
        f, m = pyramids[0]
        pyramids.insert(0, (_downsample2(f), _downsample2(m)))

    converged = True
    best_mi = -np.inf
    # coarse level explores widely; the finest level gets an extra small-simplex
    # restart to polish the optimum (NM stalls on flat MI plateaus otherwise)
    stages = [(f, m, 5.0 if lvl == 0 else 1.0) for lvl, (f, m) in enumerate(pyramids)]
    stages.append((*pyramids[-1], 0.25))
    for f, m, scale in stages:

        def neg_mi(p):
            T = RigidTransform.from_params(p, center)
            try:
                return -mutual_information(f, m, T, cfg)
            except InsufficientOverlap:
                return 0.0  # MI floor; pushes the simplex back toward overlap

        simplex = np.tile(params, (7, 1))
        for i in range(6):
            simplex[i + 1, i] += scale
        res = optimize.minimize(
            neg_mi, params, method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "xatol": cfg.param_tolerance,
                "fatol": 1e-10,
                "maxiter": cfg.max_iter,
                "disp": False,
            },
        )
        params = res.x
        best_mi = -res.fun
        if not res.success:
            converged = False
    return RegistrationResult(RigidTransform.from_params(params, center), best_mi, converged)


MIN_FRAME_DURATION_MIN = 15.0 / 60.0  # frames shorter than 15 s skip registration


def motion_correct(dyn: DynamicVolume, reference_frame_index: int,
                   cfg: MIConfig = MIConfig()):
    """Register every frame to the reference frame and resample.

    Frames shorter than 15 s inherit the nearest registered frame's transform.
    Returns (corrected DynamicVolume, list of per-frame RigidTransform).
    """
    ref = dyn.frames[reference_frame_index]
    if float(np.sum(ref.values)) <= 0:
        raise InsufficientOverlap("reference frame has no signal")
    n = len(dyn.frames)
    durations = dyn.schedule.frame_duration
    center = tuple(dyn.geometry.physical_center())
    transforms: list[RigidTransform | None] = [None] * n
    flags = [True] * n

    registered = [i for i in range(n)
                  if i == reference_frame_index or durations[i] >= MIN_FRAME_DURATION_MIN]
    for i in registered:
        if i == reference_frame_index:
            transforms[i] = RigidTransform.identity(center)
            continue
        try:
            result = register_rigid(ref, dyn.frames[i], cfg)
            transforms[i] = result.transform
            flags[i] = result.converged
        except InsufficientOverlap:
            transforms[i] = RigidTransform.identity(center)
            flags[i] = False

    for i in range(n):
        if transforms[i] is None:
            nearest = min(registered, key=lambda j: (abs(j - i), j))
            transforms[i] = transforms[nearest]

    frames = []
    for i in range(n):
        if i == reference_frame_index:
            frames.append(dyn.frames[i])
        else:
            frames.append(resample_trilinear(dyn.frames[i], dyn.geometry, transforms[i]))
    return DynamicVolume(dyn.geometry, dyn.schedule, frames), transforms

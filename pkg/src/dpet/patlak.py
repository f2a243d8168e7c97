"""Graphical Patlak analysis (per-curve fits and whole-volume Ki maps) and SUV."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bloodinput import TimeActivityCurve
from .errors import (
    EmptyWindow,
    InputVanishes,
    NonpositiveDose,
    NonpositiveWeight,
    TooFewLateFrames,
)
from .phantom import InputModel
from .volume import DynamicVolume, Mask, Volume3D

DEFAULT_T_STAR = 20.0  # minutes
CP_DROP_FRACTION = 1e-9  # frames with Cp below this fraction of peak are dropped


class ParametricBloodInput:
    """Blood input backed by the tri-exponential model; exact cumulative integral."""

    def __init__(self, model: InputModel):
        self.model = model

    def conc(self, t):
        return self.model.conc(t)

    def cumint(self, t):
        return self.model.cumint(t)


class SampledBloodInput:
    """Blood input backed by a sampled TAC; trapezoid integral on a 1 s grid.

    The curve is anchored at (0, 0) and interpolated linearly between samples.
    """

    def __init__(self, tac: TimeActivityCurve):
        t = np.concatenate([[0.0], np.asarray(tac.t_mid)])
        v = np.concatenate([[0.0], tac.values_array()])
        step = 1.0 / 60.0
        n = int(np.ceil(t[-1] / step))
        self._grid = np.linspace(0.0, n * step, n + 1)
        dense = np.interp(self._grid, t, v)
        from scipy.integrate import cumulative_trapezoid

        self._cum = np.concatenate([[0.0], cumulative_trapezoid(dense, self._grid)])
        self._t = t
        self._v = v

    def conc(self, t):
        return np.interp(np.asarray(t, dtype=float), self._t, self._v)

    def cumint(self, t):
        return np.interp(np.asarray(t, dtype=float), self._grid, self._cum)


def as_blood_input(input_curve):
    if isinstance(input_curve, (ParametricBloodInput, SampledBloodInput)):
        return input_curve
    if isinstance(input_curve, InputModel):
        return ParametricBloodInput(input_curve)
    if isinstance(input_curve, TimeActivityCurve):
        return SampledBloodInput(input_curve)
    raise TypeError(f"not a blood input: {type(input_curve)!r}")


@dataclass(frozen=True)
class PatlakFit:
    ki: float  # 1/min
    v: float  # unitless intercept
    r2: float
    n_points: int


@dataclass
class ParametricMap:
    ki_map: Volume3D
    v_map: Volume3D
    r2_map: Volume3D
    mask: Mask


def _patlak_axes(t_mid: np.ndarray, input_curve):
    """Shared Patlak abscissa: x = cumint(t)/Cp(t); frames with tiny Cp dropped.

    Returns (keep_indices, x, cp)."""
    blood = as_blood_input(input_curve)
    cp = np.asarray(blood.conc(t_mid), dtype=float)
    peak = float(np.max(cp)) if len(cp) else 0.0
    keep = np.flatnonzero(cp > CP_DROP_FRACTION * max(peak, 0.0)) if peak > 0 else np.array([], int)
    if keep.size == 0:
        raise InputVanishes("blood input vanishes on every frame")
    x = blood.cumint(t_mid[keep]) / cp[keep]
    return keep, x, cp


def patlak_transform(tac: TimeActivityCurve, input_curve):
    """Graphical transform: one (x, y) point per retained frame."""
    t_mid = np.asarray(tac.t_mid)
    keep, x, cp = _patlak_axes(t_mid, input_curve)
    y = tac.values_array()[keep] / cp[keep]
    return x, y


def _ols_line(x: np.ndarray, y: np.ndarray):
    """Least-squares slope/intercept/r2 with the degenerate-case conventions:
    zero x-variance or zero y-variance => (0, mean-ish, r2=0)."""
    xm = x.mean()
    ym = y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 0.0:
        return 0.0, 0.0, 0.0, False
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    sst = float(np.sum((y - ym) ** 2))
    if sst <= 0.0:
        return slope, intercept, 0.0, True
    ssr = float(np.sum((y - slope * x - intercept) ** 2))
    return slope, intercept, max(0.0, 1.0 - ssr / sst), True


def patlak_fit(tac: TimeActivityCurve, input_curve, t_star: float = DEFAULT_T_STAR) -> PatlakFit:
    """OLS on the transformed points with t_mid >= t_star; Ki is the slope."""
    t_mid = np.asarray(tac.t_mid)
    keep, x, cp = _patlak_axes(t_mid, input_curve)
    late = t_mid[keep] >= t_star
    if late.sum() < 3:
        raise TooFewLateFrames(
            f"{int(late.sum())} frames at t >= {t_star} min; need >= 3"
        )
    y = tac.values_array()[keep] / cp[keep]
    slope, intercept, r2, ok = _ols_line(x[late], y[late])
    return PatlakFit(slope, intercept, r2, int(late.sum()))


def patlak_map(dyn: DynamicVolume, input_curve, t_star: float = DEFAULT_T_STAR,
               mask: Mask | None = None, workers: int = 1) -> ParametricMap:
    """Voxel-wise Patlak fit over the mask (whole volume when mask is None).

    Bit-identical output for any worker count: voxels are partitioned into
    disjoint chunks and each voxel's fit is independent arithmetic. Degenerate
    voxels get Ki=0, r2=0 and a cleared output-mask bit.
    """
    t_mid = np.asarray(dyn.schedule.mid)
    keep, x, cp = _patlak_axes(t_mid, input_curve)
    late = t_mid[keep] >= t_star
    if late.sum() < 3:
        raise TooFewLateFrames(
            f"{int(late.sum())} frames at t >= {t_star} min; need >= 3"
        )
    x_late = x[late]
    frame_idx = keep[late]
    inv_cp = 1.0 / cp[keep][late]

    data = dyn.data4d().reshape(-1, len(dyn.schedule))
    sel = (np.ones(data.shape[0], dtype=bool) if mask is None
           else mask.membership.reshape(-1).copy())
    vox = np.flatnonzero(sel)

    ki = np.zeros(data.shape[0])
    v = np.zeros(data.shape[0])
    r2 = np.zeros(data.shape[0])
    fitted = np.zeros(data.shape[0], dtype=bool)

    xm = x_late.mean()
    dx = x_late - xm
    sxx = float(np.sum(dx * dx))

    def fit_chunk(chunk):
        y = data[np.ix_(chunk, frame_idx)] * inv_cp  # (n_chunk, n_late)
        ym = y.mean(axis=1)
        if sxx <= 0.0:
            return  # leave zeros, mask stays cleared
        slope = (y - ym[:, None]) @ dx / sxx
        intercept = ym - slope * xm
        resid = y - slope[:, None] * x_late - intercept[:, None]
        ssr = np.einsum("ij,ij->i", resid, resid)
        sst = np.einsum("ij,ij->i", y - ym[:, None], y - ym[:, None])
        good = np.isfinite(slope)
        r2c = np.where(sst > 0.0, 1.0 - ssr / np.maximum(sst, 1e-300), 0.0)
        ki[chunk] = np.where(good, slope, 0.0)
        v[chunk] = np.where(good, intercept, 0.0)
        r2[chunk] = np.clip(np.where(good & (sst > 0.0), r2c, 0.0), 0.0, 1.0)
        fitted[chunk] = good

    if vox.size:
        chunks = np.array_split(vox, max(1, min(workers * 4, vox.size)))
        if workers <= 1:
            for c in chunks:
                fit_chunk(c)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(fit_chunk, chunks))

    dims = dyn.geometry.dims
    g = dyn.geometry
    return ParametricMap(
        ki_map=Volume3D(g, ki.reshape(dims), units="1/min"),
        v_map=Volume3D(g, v.reshape(dims), units=""),
        r2_map=Volume3D(g, r2.reshape(dims), units=""),
        mask=Mask(g, fitted.reshape(dims)),
    )


@dataclass(frozen=True)
class SuvConfig:
    injected_dose_mbq: float
    body_weight_kg: float
    decay_corrected: bool = True  # input assumed decay-corrected upstream

    def __post_init__(self):
        if self.injected_dose_mbq <= 0:
            raise NonpositiveDose(f"dose {self.injected_dose_mbq} MBq")
        if self.body_weight_kg <= 0:
            raise NonpositiveWeight(f"weight {self.body_weight_kg} kg")


def suv_map(static_pet: Volume3D, cfg: SuvConfig) -> Volume3D:
    """SUV = C[Bq/mL] * weight[g] / dose[Bq]."""
    factor = (cfg.body_weight_kg * 1000.0) / (cfg.injected_dose_mbq * 1e6)
    return Volume3D(static_pet.geometry, np.asarray(static_pet.values) * factor, units="g/mL")


def static_frame_average(dyn: DynamicVolume, window: tuple[float, float] = (40.0, 60.0)) -> Volume3D:
    """Duration-weighted mean of frames whose midpoints lie inside the window."""
    lo, hi = window
    mid = dyn.schedule.mid
    durations = np.asarray(dyn.schedule.frame_duration)
    sel = np.flatnonzero((mid >= lo) & (mid <= hi))
    if sel.size == 0:
        raise EmptyWindow(f"no frame midpoint inside [{lo}, {hi}] min")
    w = durations[sel] / durations[sel].sum()
    data = np.zeros(dyn.geometry.dims)
    for wi, i in zip(w, sel):
        data += wi * dyn.frames[i].values
    return Volume3D(dyn.geometry, data, units=dyn.frames[0].units)

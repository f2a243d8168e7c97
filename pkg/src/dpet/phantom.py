"""Synthetic ground truth: tri-exponential arterial input, irreversible
two-tissue-compartment tissue curves (fixed-step RK4), and ellipsoid-region
phantom volumes with reproducible noise.

All times are minutes, activities arbitrary Bq/mL-scale units.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SpecInvalid, StepTooCoarse
from .volume import DynamicVolume, FrameSchedule, Geometry, Mask, Volume3D

REGION_LABELS = ("background", "gray", "white", "tumor-TP", "tumor-TN", "artery")


@dataclass(frozen=True)
class InputModel:
    """Tri-exponential plasma input Cp(t) = (a1*t - a2 - a3)e^{l1 t} + a2 e^{l2 t} + a3 e^{l3 t}.

    The form forces Cp(0) = 0. All decay rates l1..l3 must be <= 0 (per minute).
    """

    a1: float
    a2: float
    a3: float
    l1: float
    l2: float
    l3: float

    def __post_init__(self):
        if any(l > 0 for l in (self.l1, self.l2, self.l3)):
            raise SpecInvalid("input model decay rates must be <= 0")
        t = np.arange(0.0, 60.0 + 1e-9, 1.0 / 60.0)  # 1 s grid
        if np.any(self.conc(t) < -1e-9 * max(1.0, np.max(np.abs(self.conc(t))))):
            raise SpecInvalid("input model goes negative on [0, 60] min")

    def conc(self, t):
        """Plasma concentration at time(s) t (minutes)."""
        t = np.asarray(t, dtype=float)
        return (
            (self.a1 * t - self.a2 - self.a3) * np.exp(self.l1 * t)
            + self.a2 * np.exp(self.l2 * t)
            + self.a3 * np.exp(self.l3 * t)
        )

    def cumint(self, t):
        """Closed-form cumulative integral of Cp from 0 to t."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        a1, a23 = self.a1, self.a2 + self.a3
        if self.l1 != 0.0:
            l = self.l1
            e = np.exp(l * t)
            out += a1 * (e * (t / l - 1.0 / l**2) + 1.0 / l**2) - a23 * (e - 1.0) / l
        else:
            out += a1 * t**2 / 2.0 - a23 * t
        for a, l in ((self.a2, self.l2), (self.a3, self.l3)):
            if l != 0.0:
                out += a * (np.exp(l * t) - 1.0) / l
            else:
                out += a * t
        return out

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3, self.l1, self.l2, self.l3])


# Feng-type defaults, canonical FDG arterial shape (arbitrary activity scale).
def default_input_model() -> InputModel:
    return InputModel(a1=851.12, a2=21.88, a3=20.81, l1=-4.1339, l2=-0.01043, l3=-0.1191)


def input_concentration(model: InputModel, t):
    return model.conc(t)


@dataclass(frozen=True)
class KineticParams:
    """Irreversible two-tissue rate constants (k4 = 0)."""

    k1: float  # mL/min/mL
    k2: float  # 1/min
    k3: float  # 1/min
    vb: float = 0.0

    def __post_init__(self):
        if self.k1 < 0 or self.k2 < 0 or self.k3 < 0:
            raise SpecInvalid("rate constants must be >= 0")
        if not (0.0 <= self.vb < 1.0):
            raise SpecInvalid("vb must be in [0, 1)")
        if self.k1 > 0 and self.k2 + self.k3 == 0:
            raise SpecInvalid("k2 + k3 must be > 0 when k1 > 0")

    @property
    def ki(self) -> float:
        """Net influx macro-parameter K1*k3/(k2+k3)."""
        if self.k2 + self.k3 == 0:
            return 0.0
        return self.k1 * self.k3 / (self.k2 + self.k3)


MAX_STEP_S = 1.0
DEFAULT_STEP_S = 0.1


def _dense_grid(t_end: float, step_s: float) -> np.ndarray:
    h = step_s / 60.0
    n = int(np.ceil(t_end / h))
    return np.linspace(0.0, n * h, n + 1)


def tissue_curve_dense(params: KineticParams, model: InputModel, t_end: float,
                       step_s: float = DEFAULT_STEP_S):
    """RK4 solution of the two-tissue ODEs on a uniform grid covering [0, t_end].

    Returns (t, ct, c1, c2). ct = (1-vb)(c1+c2) + vb*Cp.
    """
    if step_s > MAX_STEP_S:
        raise StepTooCoarse(f"RK4 step {step_s} s exceeds the {MAX_STEP_S} s limit")
    t = _dense_grid(t_end, step_s)
    h = t[1] - t[0]
    # Cp on the half-step grid so RK4 stage evaluations are exact
    cp_half = model.conc(np.arange(2 * len(t) - 1) * (h / 2.0))
    k1, k23, k3 = params.k1, params.k2 + params.k3, params.k3
    c1 = np.zeros(len(t))
    c2 = np.zeros(len(t))
    y1, y2 = 0.0, 0.0
    for i in range(len(t) - 1):
        cp0 = cp_half[2 * i]
        cpm = cp_half[2 * i + 1]
        cp1 = cp_half[2 * i + 2]
        # dC1/dt = k1*Cp - (k2+k3)*C1 ; dC2/dt = k3*C1
        a1 = k1 * cp0 - k23 * y1
        b1 = k3 * y1
        a2 = k1 * cpm - k23 * (y1 + 0.5 * h * a1)
        b2 = k3 * (y1 + 0.5 * h * a1)
        a3 = k1 * cpm - k23 * (y1 + 0.5 * h * a2)
        b3 = k3 * (y1 + 0.5 * h * a2)
        a4 = k1 * cp1 - k23 * (y1 + h * a3)
        b4 = k3 * (y1 + h * a3)
        y1 += h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        y2 += h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        c1[i + 1] = y1
        c2[i + 1] = y2
    cp = cp_half[::2]
    ct = (1.0 - params.vb) * (c1 + c2) + params.vb * cp
    return t, ct, c1, c2


def tissue_response(params: KineticParams, model: InputModel, t_grid,
                    step_s: float = DEFAULT_STEP_S) -> np.ndarray:
    """Instantaneous tissue concentration sampled onto t_grid (minutes)."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise SpecInvalid("t_grid must start at 0 and be strictly increasing")
    t, ct, _, _ = tissue_curve_dense(params, model, float(t_grid[-1]), step_s)
    return np.interp(t_grid, t, ct)


def frame_average(t_dense: np.ndarray, curve: np.ndarray, schedule: FrameSchedule) -> np.ndarray:
    """Per-frame time-average of a densely sampled curve (trapezoid rule)."""
    from scipy.integrate import cumulative_trapezoid

    integral = np.concatenate([[0.0], cumulative_trapezoid(curve, t_dense)])
    start = np.asarray(schedule.frame_start)
    end = start + np.asarray(schedule.frame_duration)
    i0 = np.interp(start, t_dense, integral)
    i1 = np.interp(end, t_dense, integral)
    return (i1 - i0) / np.asarray(schedule.frame_duration)


@dataclass(frozen=True)
class Region:
    """Ellipsoid region painted into the phantom (later regions override earlier)."""

    label: str
    center_mm: tuple[float, float, float]
    radii_mm: tuple[float, float, float]
    kinetics: KineticParams
    mr_intensity: float = 0.0

    def __post_init__(self):
        if self.label not in REGION_LABELS:
            raise SpecInvalid(f"unknown region label {self.label!r}")
        if any(r <= 0 for r in self.radii_mm):
            raise SpecInvalid("region radii must be > 0")


@dataclass(frozen=True)
class PhantomSpec:
    geometry: Geometry
    regions: tuple[Region, ...]
    input: InputModel
    schedule: FrameSchedule
    noise_seed: int = 0
    noise_scale: float = 0.0
    mr_noise: float = 0.0
    artery_pv: float = 1.0  # partial-volume factor applied to artery voxels
    rk4_step_s: float = DEFAULT_STEP_S

    def __post_init__(self):
        if not self.regions:
            raise SpecInvalid("phantom needs >= 1 region")
        if self.noise_scale < 0 or self.mr_noise < 0:
            raise SpecInvalid("noise scales must be >= 0")
        if not (0 < self.artery_pv <= 1.5):
            raise SpecInvalid("artery_pv must be in (0, 1.5]")


def region_id_map(spec: PhantomSpec) -> np.ndarray:
    """Voxel map of region indices into spec.regions; -1 where no region covers."""
    g = spec.geometry
    nx, ny, nz = g.dims
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    pts = g.voxel_to_physical(np.stack([ii, jj, kk], axis=-1).reshape(-1, 3))
    ids = np.full(g.n_voxels, -1, dtype=np.int32)
    for i, r in enumerate(spec.regions):
        d = (pts - np.asarray(r.center_mm)) / np.asarray(r.radii_mm)
        inside = np.einsum("ij,ij->i", d, d) <= 1.0
        ids[inside] = i
    return ids.reshape(g.dims)


def region_mask(spec: PhantomSpec, label: str) -> Mask:
    ids = region_id_map(spec)
    want = np.zeros(spec.geometry.dims, dtype=bool)
    for i, r in enumerate(spec.regions):
        if r.label == label:
            want |= ids == i
    return Mask(spec.geometry, want)


def simulate_dynamic(spec: PhantomSpec):
    """Simulate the 4D phantom.

    Returns (DynamicVolume, true_ki: Volume3D). Frame values are the time-average
    of each region's tissue curve over the frame (artery voxels carry whole-blood
    Cp scaled by artery_pv). Gaussian noise sd = noise_scale*sqrt(mean/duration).
    """
    ids = region_id_map(spec)
    t_end = spec.schedule.end
    t_dense = _dense_grid(t_end, spec.rk4_step_s)
    durations = np.asarray(spec.schedule.frame_duration)

    region_curves = []
    true_ki_vals = []
    for r in spec.regions:
        if r.label == "artery":
            cp = spec.input.conc(t_dense) * spec.artery_pv
            region_curves.append(frame_average(t_dense, cp, spec.schedule))
            true_ki_vals.append(0.0)
        else:
            _, ct, _, _ = tissue_curve_dense(r.kinetics, spec.input, t_end, spec.rk4_step_s)
            region_curves.append(frame_average(t_dense, ct, spec.schedule))
            true_ki_vals.append(r.kinetics.ki)

    n_frames = len(spec.schedule)
    data = np.zeros((*spec.geometry.dims, n_frames))
    for i, curve in enumerate(region_curves):
        sel = ids == i
        if np.any(sel):
            data[sel, :] = curve

    if spec.noise_scale > 0:
        rng = np.random.default_rng(spec.noise_seed)
        sd = spec.noise_scale * np.sqrt(np.maximum(data, 0.0) / durations)
        data = data + rng.standard_normal(data.shape) * sd

    dyn = DynamicVolume.from_data4d(spec.geometry, spec.schedule, data, units="Bq/mL")
    ki = np.zeros(spec.geometry.dims)
    for i, v in enumerate(true_ki_vals):
        ki[ids == i] = v
    return dyn, Volume3D(spec.geometry, ki, units="1/min")


def simulate_mr(spec: PhantomSpec) -> Volume3D:
    """Piecewise-constant per-region MR intensities plus optional Gaussian noise."""
    ids = region_id_map(spec)
    data = np.zeros(spec.geometry.dims)
    for i, r in enumerate(spec.regions):
        data[ids == i] = r.mr_intensity
    if spec.mr_noise > 0:
        rng = np.random.default_rng(spec.noise_seed + 1)
        data = data + rng.standard_normal(data.shape) * spec.mr_noise
    return Volume3D(spec.geometry, data, units="")


def canonical_schedule() -> FrameSchedule:
    """39-frame, 60-minute dynamic framing: 12x10s, 8x30s, 10x60s, 8x300s, 1x240s."""
    durations_s = [10.0] * 12 + [30.0] * 8 + [60.0] * 10 + [300.0] * 8 + [240.0]
    durations = [d / 60.0 for d in durations_s]
    starts = list(np.concatenate([[0.0], np.cumsum(durations)[:-1]]))
    return FrameSchedule(tuple(starts), tuple(durations))


def default_phantom_spec(noise_seed: int = 0, noise_scale: float = 0.0,
                         artery_pv: float = 1.0, mr_noise: float = 0.0) -> PhantomSpec:
    """Desk-scale phantom: 48x48x32 grid, 2 mm voxels, two tumors and an artery tube."""
    geom = Geometry((48, 48, 32), (2.0, 2.0, 2.0))
    regions = (
        Region("background", (47.0, 47.0, 31.0), (46.0, 46.0, 30.0),
               KineticParams(0.02, 0.10, 0.002, 0.02), mr_intensity=50.0),
        Region("gray", (47.0, 47.0, 31.0), (32.0, 32.0, 22.0),
               KineticParams(0.08, 0.12, 0.010, 0.04), mr_intensity=90.0),
        Region("tumor-TP", (28.0, 30.0, 30.0), (8.0, 8.0, 8.0),
               KineticParams(0.10, 0.15, 0.050, 0.0), mr_intensity=150.0),
        Region("tumor-TN", (68.0, 62.0, 34.0), (7.0, 7.0, 7.0),
               KineticParams(0.06, 0.12, 0.020, 0.0), mr_intensity=140.0),
        Region("artery", (48.0, 78.0, 31.0), (4.5, 4.5, 30.0),
               KineticParams(0.0, 0.1, 0.0, 0.0), mr_intensity=30.0),
    )
    return PhantomSpec(
        geometry=geom,
        regions=regions,
        input=default_input_model(),
        schedule=canonical_schedule(),
        noise_seed=noise_seed,
        noise_scale=noise_scale,
        mr_noise=mr_noise,
        artery_pv=artery_pv,
    )


def spec_to_text(spec: PhantomSpec) -> str:
    g = spec.geometry
    lines = [
        "dims = " + ",".join(str(d) for d in g.dims),
        "voxel_mm = " + ",".join(f"{v:.6g}" for v in g.voxel_size),
        "origin = " + ",".join(f"{v:.6g}" for v in g.origin),
        "input = " + ",".join(f"{v:.10g}" for v in spec.input.params),
        "frames = " + ";".join(
            f"{s:.10g},{d:.10g}" for s, d in zip(spec.schedule.frame_start, spec.schedule.frame_duration)
        ),
        f"noise_seed = {spec.noise_seed}",
        f"noise_scale = {spec.noise_scale:.6g}",
        f"mr_noise = {spec.mr_noise:.6g}",
        f"artery_pv = {spec.artery_pv:.6g}",
        f"rk4_step_s = {spec.rk4_step_s:.6g}",
    ]
    for r in spec.regions:
        k = r.kinetics
        lines.append(
            "region = {};{};{};{};{:.6g}".format(
                r.label,
                ",".join(f"{v:.6g}" for v in r.center_mm),
                ",".join(f"{v:.6g}" for v in r.radii_mm),
                f"{k.k1:.6g},{k.k2:.6g},{k.k3:.6g},{k.vb:.6g}",
                r.mr_intensity,
            )
        )
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> PhantomSpec:
    kv = {}
    regions = []
    for n, ln in enumerate(text.splitlines(), start=1):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise SpecInvalid(f"line {n}: expected key = value")
        k, v = (s.strip() for s in ln.split("=", 1))
        if k == "region":
            try:
                label, center, radii, kin, mr = v.split(";")
                k1, k2, k3, vb = (float(x) for x in kin.split(","))
                regions.append(Region(
                    label.strip(),
                    tuple(float(x) for x in center.split(",")),
                    tuple(float(x) for x in radii.split(",")),
                    KineticParams(k1, k2, k3, vb),
                    mr_intensity=float(mr),
                ))
            except ValueError as e:
                raise SpecInvalid(f"line {n}: bad region: {e}") from e
        else:
            kv[k] = v
    try:
        dims = tuple(int(x) for x in kv["dims"].split(","))
        voxel = tuple(float(x) for x in kv["voxel_mm"].split(","))
        origin = tuple(float(x) for x in kv.get("origin", "0,0,0").split(","))
        a1, a2, a3, l1, l2, l3 = (float(x) for x in kv["input"].split(","))
        starts, durs = [], []
        for pair in kv["frames"].split(";"):
            s, d = pair.split(",")
            starts.append(float(s))
            durs.append(float(d))
    except KeyError as e:
        raise SpecInvalid(f"missing key {e}") from e
    except ValueError as e:
        raise SpecInvalid(str(e)) from e
    return PhantomSpec(
        geometry=Geometry(dims, voxel, origin),
        regions=tuple(regions),
        input=InputModel(a1, a2, a3, l1, l2, l3),
        schedule=FrameSchedule(tuple(starts), tuple(durs)),
        noise_seed=int(kv.get("noise_seed", "0")),
        noise_scale=float(kv.get("noise_scale", "0")),
        mr_noise=float(kv.get("mr_noise", "0")),
        artery_pv=float(kv.get("artery_pv", "1")),
        rk4_step_s=float(kv.get("rk4_step_s", str(DEFAULT_STEP_S))),
    )

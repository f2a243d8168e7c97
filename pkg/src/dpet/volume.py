"""Core voxel-grid types: geometry, volumes, masks, frame schedules, and the
resampling / smoothing / labeling primitives shared by the whole pipeline.

Arrays are indexed (x, y, z); the internal axis convention is LPS.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import CropTooLarge, EmptyMask, GeometryInvalid
from .rigid import RigidTransform


@dataclass(frozen=True)
class Geometry:
    """Spatial grid description: dims, voxel size (mm), origin (mm), direction."""

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))
        self.validate()

    def validate(self):
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise GeometryInvalid(f"dims must be 3 positive integers, got {self.dims}")
        if any(v <= 0 for v in self.voxel_size):
            raise GeometryInvalid(f"voxel sizes must be > 0, got {self.voxel_size}")
        D = self.direction
        if D.shape != (3, 3):
            raise GeometryInvalid("direction must be 3x3")
        if not np.allclose(D.T @ D, np.eye(3), atol=1e-6):
            raise GeometryInvalid("direction matrix is not orthogonal")
        if abs(abs(np.linalg.det(D)) - 1.0) > 1e-6:
            raise GeometryInvalid("direction matrix determinant is not ±1")

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def voxel_to_physical(self, idx: np.ndarray) -> np.ndarray:
        """Map voxel indices (..., 3) to physical mm coordinates."""
        idx = np.asarray(idx, dtype=float)
        scaled = idx * np.asarray(self.voxel_size)
        return scaled @ self.direction.T + np.asarray(self.origin)

    def physical_to_voxel(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        local = (pts - np.asarray(self.origin)) @ self.direction  # direction is orthogonal
        return local / np.asarray(self.voxel_size)

    def physical_center(self) -> np.ndarray:
        half = (np.asarray(self.dims, dtype=float) - 1.0) / 2.0
        return self.voxel_to_physical(half)

    def same_grid(self, other: "Geometry", tol: float = 1e-5) -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.voxel_size, other.voxel_size, atol=tol)
            and np.allclose(self.origin, other.origin, atol=tol)
            and np.allclose(self.direction, other.direction, atol=tol)
        )


@dataclass
class Volume3D:
    """Scalar voxel grid with geometry and a physical-units tag."""

    geometry: Geometry
    values: np.ndarray  # shape (nx, ny, nz)
    units: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.geometry.dims:
            raise GeometryInvalid(
                f"value shape {self.values.shape} != geometry dims {self.geometry.dims}"
            )

    def validate_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise GeometryInvalid("volume contains non-finite values")

    def with_values(self, values: np.ndarray, units: str | None = None) -> "Volume3D":
        return Volume3D(self.geometry, values, self.units if units is None else units)


@dataclass
class Mask:
    """Boolean voxel grid sharing a Geometry."""

    geometry: Geometry
    membership: np.ndarray

    def __post_init__(self):
        self.membership = np.asarray(self.membership, dtype=bool)
        if self.membership.shape != self.geometry.dims:
            raise GeometryInvalid("mask shape does not match geometry dims")

    @property
    def count(self) -> int:
        return int(self.membership.sum())


@dataclass(frozen=True)
class FrameSchedule:
    """Frame timing in minutes; frames must be non-overlapping and increasing."""

    frame_start: tuple[float, ...]
    frame_duration: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "frame_start", tuple(float(v) for v in self.frame_start))
        object.__setattr__(self, "frame_duration", tuple(float(v) for v in self.frame_duration))
        from .errors import ScheduleInvalid

        s, d = self.frame_start, self.frame_duration
        if len(s) != len(d) or len(s) < 1:
            raise ScheduleInvalid("schedule needs >= 1 frame with matching start/duration lists")
        if s[0] < 0:
            raise ScheduleInvalid("first frame starts before t=0")
        if any(di <= 0 for di in d):
            raise ScheduleInvalid("all frame durations must be > 0")
        for i in range(len(s) - 1):
            if s[i] + d[i] > s[i + 1] + 1e-4:  # tolerance covers 6-digit sidecars
                raise ScheduleInvalid(f"frames {i} and {i+1} overlap")

    def __len__(self) -> int:
        return len(self.frame_start)

    @property
    def mid(self) -> np.ndarray:
        return np.asarray(self.frame_start) + np.asarray(self.frame_duration) / 2.0

    @property
    def end(self) -> float:
        return self.frame_start[-1] + self.frame_duration[-1]


@dataclass
class DynamicVolume:
    """4D tracer image: one Volume3D per schedule frame, shared geometry."""

    geometry: Geometry
    schedule: FrameSchedule
    frames: list[Volume3D]

    def __post_init__(self):
        if len(self.frames) != len(self.schedule):
            raise GeometryInvalid("frame count != schedule length")
        for fr in self.frames:
            if fr.geometry.dims != self.geometry.dims or not fr.geometry.same_grid(self.geometry):
                raise GeometryInvalid("frame geometry differs from parent geometry")

    def data4d(self) -> np.ndarray:
        """Stack to (nx, ny, nz, n_frames)."""
        return np.stack([fr.values for fr in self.frames], axis=-1)

    @staticmethod
    def from_data4d(geometry: Geometry, schedule: FrameSchedule, data: np.ndarray,
                    units: str = "Bq/mL") -> "DynamicVolume":
        frames = [Volume3D(geometry, np.ascontiguousarray(data[..., i]), units)
                  for i in range(data.shape[-1])]
        return DynamicVolume(geometry, schedule, frames)


def resample_trilinear(src: Volume3D, target_geom: Geometry,
                       transform: RigidTransform | None = None,
                       order: int = 1) -> Volume3D:
    """Resample `src` onto `target_geom`; `transform` maps target physical coords
    to the physical location sampled in `src`. Out-of-bounds fill is 0.
    order=0 gives nearest-neighbor (used for masks)."""
    target_geom.validate()
    if transform is None:
        transform = RigidTransform.identity()
    nx, ny, nz = target_geom.dims
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
    pts = target_geom.voxel_to_physical(idx)
    pts = transform.apply(pts)
    src_idx = src.geometry.physical_to_voxel(pts)
    out = ndimage.map_coordinates(
        np.asarray(src.values, dtype=float), src_idx.T, order=order,
        mode="constant", cval=0.0, prefilter=False,
    )
    return Volume3D(target_geom, out.reshape(nx, ny, nz), src.units)


def gaussian_smooth(src: Volume3D, sigma_mm: float) -> Volume3D:
    """Separable Gaussian smoothing, kernel truncated at ±3σ and renormalized at
    the edges so constant fields stay exactly constant."""
    if sigma_mm < 0:
        raise ValueError("sigma_mm must be >= 0")
    if sigma_mm == 0:
        return src.with_values(src.values.copy())
    data = np.asarray(src.values, dtype=float)
    weight = np.ones_like(data)
    for axis, vsz in enumerate(src.geometry.voxel_size):
        sigma_vox = sigma_mm / vsz
        radius = int(np.ceil(3.0 * sigma_vox))
        if radius < 1:
            continue
        x = np.arange(-radius, radius + 1, dtype=float)
        kernel = np.exp(-0.5 * (x / sigma_vox) ** 2)
        kernel /= kernel.sum()
        data = ndimage.correlate1d(data, kernel, axis=axis, mode="constant", cval=0.0)
        weight = ndimage.correlate1d(weight, kernel, axis=axis, mode="constant", cval=0.0)
    return src.with_values(data / weight)


_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
}


def connected_components(mask: Mask, connectivity: int = 26):
    """Label connected true-voxel components.

    Returns (labels, counts): labels is an int32 grid (0 = background, ids from 1),
    ids ordered by descending size with ties broken by smallest linear voxel index;
    counts[i] is the voxel count of component id i+1.
    """
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 6 or 26")
    raw, n = ndimage.label(mask.membership, structure=_STRUCTURES[connectivity])
    if n == 0:
        return np.zeros(mask.geometry.dims, dtype=np.int32), []
    flat = raw.ravel()
    sizes = np.bincount(flat, minlength=n + 1)[1:]
    first_idx = np.full(n + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    # reversed so earlier indices overwrite later ones
    first_idx[flat[nz[::-1]]] = nz[::-1]
    order = sorted(range(1, n + 1), key=lambda lab: (-sizes[lab - 1], first_idx[lab]))
    remap = np.zeros(n + 1, dtype=np.int32)
    for new_id, lab in enumerate(order, start=1):
        remap[lab] = new_id
    labels = remap[raw]
    counts = [int(sizes[lab - 1]) for lab in order]
    return labels, counts


def bounding_box(mask: Mask):
    """Tightest inclusive (lo, hi) index range per axis of the true voxels."""
    if mask.count == 0:
        raise EmptyMask("bounding_box of an empty mask")
    ranges = []
    for axis in range(3):
        proj = np.any(mask.membership, axis=tuple(a for a in range(3) if a != axis))
        idx = np.flatnonzero(proj)
        ranges.append((int(idx[0]), int(idx[-1])))
    return tuple(ranges)


def _crop_start(dims, crop_dims):
    margins = [d - c for d, c in zip(dims, crop_dims)]
    if any(m < 0 for m in margins):
        raise CropTooLarge(f"crop dims {crop_dims} exceed volume dims {dims}")
    return tuple(m // 2 for m in margins)


def center_crop(src: Volume3D, crop_dims) -> Volume3D:
    """Centered crop; the floor half of each margin goes to the low-index side."""
    crop_dims = tuple(int(c) for c in crop_dims)
    start = _crop_start(src.geometry.dims, crop_dims)
    sl = tuple(slice(s, s + c) for s, c in zip(start, crop_dims))
    g = src.geometry
    new_origin = g.voxel_to_physical(np.asarray(start, dtype=float))
    new_geom = Geometry(crop_dims, g.voxel_size, tuple(new_origin), g.direction)
    return Volume3D(new_geom, np.ascontiguousarray(src.values[sl]), src.units)


def center_crop_mask(mask: Mask, crop_dims) -> Mask:
    vol = Volume3D(mask.geometry, mask.membership.astype(np.uint8))
    cropped = center_crop(vol, crop_dims)
    return Mask(cropped.geometry, cropped.values.astype(bool))


def reorient_to_lps(vol: Volume3D) -> Volume3D:
    """Permute/flip an axis-aligned volume so its direction matrix becomes identity
    (the internal LPS voxel order)."""
    g = vol.geometry
    D = g.direction
    if np.allclose(D, np.eye(3), atol=1e-6):
        return vol
    perm = [0, 0, 0]
    signs = [1, 1, 1]
    for j in range(3):
        i = int(np.argmax(np.abs(D[:, j])))
        if abs(abs(D[i, j]) - 1.0) > 1e-6:
            raise GeometryInvalid("direction matrix is not axis-aligned; cannot reorient")
        perm[i] = j
        signs[i] = 1 if D[i, j] > 0 else -1
    data = np.transpose(vol.values, perm)
    corner = np.zeros(3)
    for i in range(3):
        if signs[i] < 0:
            data = np.flip(data, axis=i)
            corner[perm[i]] = g.dims[perm[i]] - 1
    new_origin = g.voxel_to_physical(corner)
    new_vsz = tuple(g.voxel_size[perm[i]] for i in range(3))
    new_geom = Geometry(data.shape, new_vsz, tuple(new_origin), np.eye(3))
    return Volume3D(new_geom, np.ascontiguousarray(data), vol.units)

"""NIfTI-1 single-file reader/writer (datatypes uint8/int16/float32) plus the
frame-schedule (.sched.csv) and study-metadata (.meta.txt) sidecars.

This is the toolkit's only persistence boundary: every CLI stage reads and
writes through these three formats.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    IoFailure,
    MissingSchedule,
    ParseError,
    ScheduleInvalid,
    TruncatedData,
    UnsupportedDatatype,
)
from .volume import DynamicVolume, FrameSchedule, Geometry, Volume3D

HEADER_SIZE = 348
VOX_OFFSET = 352

# NIfTI-1 datatype codes we honor
DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16

_DTYPES = {DT_UINT8: np.uint8, DT_INT16: np.int16, DT_FLOAT32: np.float32}
_BITPIX = {DT_UINT8: 8, DT_INT16: 16, DT_FLOAT32: 32}


def _header_dtype(byteorder: str = "<") -> np.dtype:
    return np.dtype([
        ("sizeof_hdr", f"{byteorder}i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", f"{byteorder}i4"),
        ("session_error", f"{byteorder}i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", f"{byteorder}i2", (8,)),
        ("intent_p1", f"{byteorder}f4"),
        ("intent_p2", f"{byteorder}f4"),
        ("intent_p3", f"{byteorder}f4"),
        ("intent_code", f"{byteorder}i2"),
        ("datatype", f"{byteorder}i2"),
        ("bitpix", f"{byteorder}i2"),
        ("slice_start", f"{byteorder}i2"),
        ("pixdim", f"{byteorder}f4", (8,)),
        ("vox_offset", f"{byteorder}f4"),
        ("scl_slope", f"{byteorder}f4"),
        ("scl_inter", f"{byteorder}f4"),
        ("slice_end", f"{byteorder}i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", f"{byteorder}f4"),
        ("cal_min", f"{byteorder}f4"),
        ("slice_duration", f"{byteorder}f4"),
        ("toffset", f"{byteorder}f4"),
        ("glmax", f"{byteorder}i4"),
        ("glmin", f"{byteorder}i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", f"{byteorder}i2"),
        ("sform_code", f"{byteorder}i2"),
        ("quatern_b", f"{byteorder}f4"),
        ("quatern_c", f"{byteorder}f4"),
        ("quatern_d", f"{byteorder}f4"),
        ("qoffset_x", f"{byteorder}f4"),
        ("qoffset_y", f"{byteorder}f4"),
        ("qoffset_z", f"{byteorder}f4"),
        ("srow_x", f"{byteorder}f4", (4,)),
        ("srow_y", f"{byteorder}f4", (4,)),
        ("srow_z", f"{byteorder}f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ])


HEADER_DTYPE_LE = _header_dtype("<")
HEADER_DTYPE_BE = _header_dtype(">")
assert HEADER_DTYPE_LE.itemsize == HEADER_SIZE


@dataclass
class NiftiHeader:
    """Decoded header fields the toolkit honors."""

    dim: tuple[int, ...]
    datatype: int
    pixdim: tuple[float, ...]
    vox_offset: int
    scl_slope: float
    scl_inter: float
    affine: np.ndarray  # 3x4 sform rows
    magic: bytes
    byteorder: str = "<"

    @property
    def ndim(self) -> int:
        return self.dim[0]

    @property
    def shape(self):
        return tuple(self.dim[1 : 1 + self.dim[0]])


def _geometry_from_affine(dims, affine: np.ndarray) -> Geometry:
    A = affine[:, :3]
    voxel_size = np.linalg.norm(A, axis=0)
    direction = A / voxel_size
    return Geometry(tuple(dims[:3]), tuple(voxel_size), tuple(affine[:, 3]), direction)


def _affine_from_geometry(g: Geometry) -> np.ndarray:
    A = g.direction * np.asarray(g.voxel_size)
    return np.hstack([A, np.asarray(g.origin).reshape(3, 1)])


def read_nifti(path, schedule_path=None):
    """Read a 3D or 4D single-file NIfTI.

    Returns (Volume3D, NiftiHeader) for 3D files. 4D files need a frame-schedule
    sidecar (default: `<stem>.sched.csv` next to the image) and return
    (DynamicVolume, NiftiHeader).
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < VOX_OFFSET:
        raise TruncatedData(f"{path}: file shorter than the minimum header size")
    hdr_le = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE_LE)[0]
    if int(hdr_le["sizeof_hdr"]) == HEADER_SIZE:
        hdr, bo = hdr_le, "<"
    else:
        hdr_be = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE_BE)[0]
        if int(hdr_be["sizeof_hdr"]) != HEADER_SIZE:
            raise BadMagic(f"{path}: sizeof_hdr is not 348 in either byte order")
        hdr, bo = hdr_be, ">"
    magic = bytes(hdr["magic"]).ljust(4, b"\x00")  # numpy strips trailing NULs
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise BadMagic(f"{path}: bad magic {magic!r}")
    datatype = int(hdr["datatype"])
    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"{path}: datatype code {datatype} not supported")
    ndim = int(hdr["dim"][0])
    if ndim not in (3, 4):
        raise BadMagic(f"{path}: dim[0]={ndim}, only 3D/4D supported")
    shape = tuple(int(d) for d in hdr["dim"][1 : 1 + ndim])
    if any(d < 1 for d in shape):
        raise BadMagic(f"{path}: non-positive dims {shape}")

    vox_offset = int(hdr["vox_offset"])
    elem = np.dtype(_DTYPES[datatype]).newbyteorder(bo)
    expected = int(np.prod(shape)) * elem.itemsize
    data_bytes = raw[vox_offset:]
    if len(data_bytes) < expected:
        raise TruncatedData(
            f"{path}: {len(data_bytes)} data bytes, expected {expected}"
        )
    data = np.frombuffer(data_bytes[:expected], dtype=elem).reshape(shape, order="F")

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    values = data.astype(np.float64)
    if slope != 0.0 and not (slope == 1.0 and inter == 0.0):
        values = values * slope + inter

    affine = np.vstack([hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]]).astype(float)
    if int(hdr["sform_code"]) <= 0 or not np.any(affine[:, :3]):
        # no sform: fall back to pixdim with identity direction
        affine = np.hstack([np.diag(hdr["pixdim"][1:4].astype(float)), np.zeros((3, 1))])
    geom = _geometry_from_affine(shape, affine)
    header = NiftiHeader(
        dim=tuple(int(d) for d in hdr["dim"]),
        datatype=datatype,
        pixdim=tuple(float(p) for p in hdr["pixdim"]),
        vox_offset=vox_offset,
        scl_slope=slope,
        scl_inter=inter,
        affine=affine,
        magic=magic,
        byteorder=bo,
    )

    if ndim == 3:
        return Volume3D(geom, np.ascontiguousarray(values)), header

    if schedule_path is None:
        schedule_path = default_schedule_path(path)
    if not os.path.exists(schedule_path):
        raise MissingSchedule(f"{path}: 4D image without schedule sidecar {schedule_path}")
    sched = read_schedule_sidecar(schedule_path)
    if len(sched) != shape[3]:
        raise ScheduleInvalid(
            f"{schedule_path}: {len(sched)} frames but image has {shape[3]}"
        )
    return DynamicVolume.from_data4d(geom, sched, np.ascontiguousarray(values)), header


def write_nifti(vol, path, datatype: int = DT_FLOAT32) -> None:
    """Write a Volume3D or DynamicVolume as a little-endian single-file NIfTI-1.

    int16/uint8 writes are quantized with scl_slope/scl_inter spanning the
    value range; float32 writes are exact (slope 1, inter 0).
    """
    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} not supported")
    if isinstance(vol, DynamicVolume):
        data = vol.data4d()
        geom = vol.geometry
        dim = (4, *geom.dims, data.shape[3], 1, 1, 1)
    else:
        data = np.asarray(vol.values)
        geom = vol.geometry
        dim = (3, *geom.dims, 1, 1, 1, 1)

    data = np.asarray(data, dtype=np.float64)
    slope, inter = 1.0, 0.0
    if datatype == DT_FLOAT32:
        raw = data.astype("<f4")
    else:
        info_max = 255.0 if datatype == DT_UINT8 else 32766.0
        lo, hi = float(data.min()), float(data.max())
        if hi > lo:
            slope = (hi - lo) / info_max
            inter = lo
        elif lo != 0.0:
            inter = lo
        raw = np.round((data - inter) / slope if slope != 0 else data - inter)
        raw = raw.astype("<u1" if datatype == DT_UINT8 else "<i2")

    hdr = np.zeros(1, dtype=HEADER_DTYPE_LE)[0]
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = dim
    hdr["datatype"] = datatype
    hdr["bitpix"] = _BITPIX[datatype]
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = geom.voxel_size
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = slope
    hdr["scl_inter"] = inter
    hdr["xyzt_units"] = 2 | 16  # mm, msec placeholder for the time axis
    hdr["sform_code"] = 1
    affine = _affine_from_geometry(geom)
    hdr["srow_x"], hdr["srow_y"], hdr["srow_z"] = affine.astype(np.float32)
    hdr["magic"] = b"n+1\x00"

    try:
        with open(path, "wb") as f:
            f.write(hdr.tobytes())
            f.write(b"\x00\x00\x00\x00")  # no extensions
            f.write(np.asfortranarray(raw).tobytes(order="F"))
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def default_schedule_path(image_path) -> str:
    base = str(image_path)
    if base.endswith(".nii"):
        base = base[:-4]
    return base + ".sched.csv"


SCHEDULE_HEADER = "frame_start_min,frame_duration_min"


def read_schedule_sidecar(path) -> FrameSchedule:
    with open(path) as f:
        lines = [ln.strip() for ln in f]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0].replace(" ", "") != SCHEDULE_HEADER:
        raise ParseError(f"{path}:1: expected header '{SCHEDULE_HEADER}'")
    starts, durs = [], []
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 2:
            raise ParseError(f"{path}:{n}: expected 2 comma-separated fields")
        try:
            starts.append(float(parts[0]))
            durs.append(float(parts[1]))
        except ValueError as e:
            raise ParseError(f"{path}:{n}: {e}") from e
    return FrameSchedule(tuple(starts), tuple(durs))


def write_schedule_sidecar(schedule: FrameSchedule, path) -> None:
    with open(path, "w") as f:
        f.write(SCHEDULE_HEADER + "\n")
        for s, d in zip(schedule.frame_start, schedule.frame_duration):
            f.write(f"{s:.6g},{d:.6g}\n")


@dataclass
class StudyMeta:
    """Per-study metadata needed for SUV and labeling."""

    injected_dose_mbq: float
    body_weight_kg: float
    injection_time_offset_min: float = 0.0
    modality: str = "PET-dynamic"  # MR | PET-dynamic | PET-static
    class_label: str | None = None  # TP | TN

    def __post_init__(self):
        if self.injected_dose_mbq <= 0:
            raise ParseError("injected dose must be > 0")
        if self.body_weight_kg <= 0:
            raise ParseError("body weight must be > 0")
        if self.injection_time_offset_min < 0:
            raise ParseError("injection time offset must be >= 0")


def read_meta_sidecar(path) -> StudyMeta:
    kv = {}
    with open(path) as f:
        for n, ln in enumerate(f, start=1):
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if "=" not in ln:
                raise ParseError(f"{path}:{n}: expected key=value")
            k, v = ln.split("=", 1)
            kv[k.strip()] = v.strip()
    try:
        return StudyMeta(
            injected_dose_mbq=float(kv["injected_dose_mbq"]),
            body_weight_kg=float(kv["body_weight_kg"]),
            injection_time_offset_min=float(kv.get("injection_time_offset_min", "0")),
            modality=kv.get("modality", "PET-dynamic"),
            class_label=kv.get("class_label") or None,
        )
    except KeyError as e:
        raise ParseError(f"{path}: missing required key {e}") from e
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e


def write_meta_sidecar(meta: StudyMeta, path) -> None:
    with open(path, "w") as f:
        f.write(f"injected_dose_mbq={meta.injected_dose_mbq:.6g}\n")
        f.write(f"body_weight_kg={meta.body_weight_kg:.6g}\n")
        f.write(f"injection_time_offset_min={meta.injection_time_offset_min:.6g}\n")
        f.write(f"modality={meta.modality}\n")
        if meta.class_label:
            f.write(f"class_label={meta.class_label}\n")

"""Rigid 3D transforms parameterized as ZYX Euler angles + translation about a center."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _rot_matrix(angles_deg) -> np.ndarray:
    """Rotation matrix R = Rz @ Ry @ Rx for ZYX Euler angles in degrees."""
    rx, ry, rz = np.deg2rad(np.asarray(angles_deg, dtype=float))
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def _euler_from_matrix(R: np.ndarray):
    """Recover ZYX Euler angles (degrees) from a rotation matrix."""
    sy = -R[2, 0]
    sy = np.clip(sy, -1.0, 1.0)
    ry = np.arcsin(sy)
    if abs(sy) < 1.0 - 1e-10:
        rx = np.arctan2(R[2, 1], R[2, 2])
        rz = np.arctan2(R[1, 0], R[0, 0])
    else:
        # gimbal lock: rz folded into rx
        rx = np.arctan2(-R[1, 2], R[1, 1])
        rz = 0.0
    return tuple(np.rad2deg([rx, ry, rz]))


@dataclass(frozen=True)
class RigidTransform:
    """Maps a physical point p to R @ (p - center) + center + translation.

    rotation: ZYX Euler angles in degrees, translation and center in mm.
    """

    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def matrix(self) -> np.ndarray:
        return _rot_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to points of shape (..., 3)."""
        p = np.asarray(points, dtype=float)
        c = np.asarray(self.center)
        t = np.asarray(self.translation)
        return (p - c) @ self.matrix.T + c + t

    def inverse(self) -> "RigidTransform":
        R = self.matrix
        t = np.asarray(self.translation)
        return RigidTransform(
            rotation=_euler_from_matrix(R.T),
            translation=tuple(-(R.T @ t)),
            center=self.center,
        )

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then self, with self's center."""
        R1, R2 = other.matrix, self.matrix
        c1 = np.asarray(other.center)
        t1 = np.asarray(other.translation)
        c2 = np.asarray(self.center)
        t2 = np.asarray(self.translation)
        R = R2 @ R1
        # self(other(p)) = R2 R1 p + R2 (c1 + t1 - R1 c1 - c2) + c2 + t2
        offset = R2 @ (c1 + t1 - R1 @ c1 - c2) + c2 + t2
        # re-express about self's center: R (p - c2) + c2 + t  =>  t = offset + R c2 - c2
        t = offset + R @ c2 - c2
        return RigidTransform(rotation=_euler_from_matrix(R), translation=tuple(t), center=self.center)

    @staticmethod
    def identity(center=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(center=tuple(center))

    def to_params(self) -> np.ndarray:
        return np.array([*self.rotation, *self.translation], dtype=float)

    @staticmethod
    def from_params(params, center) -> "RigidTransform":
        p = np.asarray(params, dtype=float)
        return RigidTransform(rotation=tuple(p[:3]), translation=tuple(p[3:6]), center=tuple(center))

    def save(self, path) -> None:
        """Serialize as 6 lines: 3 angles (deg), 3 translations (mm), then center."""
        lines = [f"{v:.9g}" for v in (*self.rotation, *self.translation)]
        lines.append(",".join(f"{v:.9g}" for v in self.center))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @staticmethod
    def load(path) -> "RigidTransform":
        with open(path) as f:
            lines = [ln.strip() for ln in f if ln.strip()]
        vals = [float(v) for v in lines[:6]]
        center = tuple(float(v) for v in lines[6].split(",")) if len(lines) > 6 else (0.0, 0.0, 0.0)
        return RigidTransform(rotation=tuple(vals[:3]), translation=tuple(vals[3:6]), center=center)

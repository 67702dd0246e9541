"""Rigid-body transform math: unit quaternions plus translations.

Quaternions are stored scalar-first as (w, x, y, z). Batched variants take
arrays of shape (N, 4) / (N, 3) and are used by the vectorized forward
kinematics in :mod:`demobench.kinematics`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Transform",
    "quat_identity",
    "quat_normalize",
    "quat_mul",
    "quat_conjugate",
    "quat_rotate",
    "quat_from_axis_angle",
    "quat_from_rpy",
    "quat_to_matrix",
    "quat_angle",
    "quat_mul_batch",
    "quat_rotate_batch",
]


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by quaternion q via q * (0,v) * q`."""
    w, x, y, z = q
    u = np.array([x, y, z])
    v = np.asarray(v, dtype=float)
    # Rodrigues-style expansion, cheaper than two quat products.
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    half = 0.5 * angle
    s = np.sin(half)
    return np.array([np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """URDF fixed-axis convention: R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    qx = quat_from_axis_angle((1.0, 0.0, 0.0), roll)
    qy = quat_from_axis_angle((0.0, 1.0, 0.0), pitch)
    qz = quat_from_axis_angle((0.0, 0.0, 1.0), yaw)
    return quat_mul(qz, quat_mul(qy, qx))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_angle(q) -> float:
    """Rotation angle in [0, pi] represented by q."""
    w = np.clip(abs(float(q[0])), 0.0, 1.0)
    return 2.0 * np.arccos(w)


def quat_mul_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product for (N, 4) x (N, 4) or broadcastable shapes."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_rotate_batch(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate (N, 3) vectors by (N, 4) quaternions (broadcastable)."""
    w = q[..., :1]
    u = q[..., 1:]
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


@dataclass(frozen=True, eq=False)
class Transform:
    """Rotation (unit quaternion, scalar-first) plus translation in meters."""

    rotation: np.ndarray = field(default_factory=quat_identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    @staticmethod
    def from_xyz_rpy(xyz, rpy) -> "Transform":
        return Transform(quat_from_rpy(*rpy), np.asarray(xyz, dtype=float))

    def compose(self, other: "Transform") -> "Transform":
        """self applied first in the world, i.e. result = self * other."""
        return Transform(
            quat_mul(self.rotation, other.rotation),
            self.translation + quat_rotate(self.rotation, other.translation),
        )

    def apply(self, point) -> np.ndarray:
        return self.translation + quat_rotate(self.rotation, point)

    def inverse(self) -> "Transform":
        inv_rot = quat_conjugate(self.rotation)
        return Transform(inv_rot, -quat_rotate(inv_rot, self.translation))

    def almost_equal(self, other: "Transform", tol: float = 1e-9) -> bool:
        dq = quat_mul(quat_conjugate(self.rotation), other.rotation)
        return (
            np.allclose(self.translation, other.translation, atol=tol)
            and quat_angle(dq) <= tol
        )

    def to_json(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation],
            "translation": [float(v) for v in self.translation],
        }

    @staticmethod
    def from_json(obj: dict) -> "Transform":
        return Transform(np.array(obj["rotation"], dtype=float),
                         np.array(obj["translation"], dtype=float))

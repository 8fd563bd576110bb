"""4-DoF and 6-DoF pose algebra.

A 4-DoF pose is a translation plus a yaw angle about gravity (+z). Roll and
pitch are never estimated: they come from each drone's own VIO, which keeps
them drift-free via the accelerometer. ``lift_to_6dof`` re-attaches them.

Rotations are plain ``(3, 3)`` numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
_DEGENERATE_EPS = 1e-12


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    w = math.fmod(a, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    elif w > math.pi:
        w -= TWO_PI
    return w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    w = np.fmod(a, TWO_PI)
    w = np.where(w <= -math.pi, w + TWO_PI, w)
    return np.where(w > math.pi, w - TWO_PI, w)


@dataclass(frozen=True, slots=True)
class Pose4:
    """Position (m) and yaw (rad). Yaw is kept wrapped into (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite Pose4 field: {vals}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def from_array(cls, a) -> "Pose4":
        return cls(a[0], a[1], a[2], a[3])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = rotz(self.yaw)
        m[:3, 3] = self.translation
        return m


IDENTITY4 = Pose4()


@dataclass(frozen=True)
class Pose6:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose6":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose6") -> "Pose6":
        return Pose6(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose6":
        rt = self.rotation.T
        return Pose6(rt, -rt @ self.translation)

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def rotz(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotx(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def roty(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def yaw_of_flagged(r: np.ndarray) -> tuple[float, bool]:
    """Yaw of a rotation plus a flag set when the x-axis is vertical.

    The degenerate case returns yaw 0 instead of raising.
    """
    cx, cy = float(r[0, 0]), float(r[1, 0])
    if math.hypot(cx, cy) < _DEGENERATE_EPS:
        return 0.0, True
    return wrap_angle(math.atan2(cy, cx)), False


def yaw_of(r: np.ndarray) -> float:
    return yaw_of_flagged(r)[0]


def tilt_angle(r: np.ndarray) -> float:
    """Angle between the body z-axis and world +z."""
    return math.acos(max(-1.0, min(1.0, float(r[2, 2]))))


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix."""
    c = 0.5 * (float(np.trace(r)) - 1.0)
    return math.acos(max(-1.0, min(1.0, c)))


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        return False
    return bool(
        np.allclose(r.T @ r, np.eye(3), atol=tol)
        and abs(np.linalg.det(r) - 1.0) < tol
    )


def compose4(a: Pose4, b: Pose4) -> Pose4:
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose4(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.z + b.z,
        a.yaw + b.yaw,
    )


def inverse4(a: Pose4) -> Pose4:
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose4(
        -(c * a.x + s * a.y),
        -(-s * a.x + c * a.y),
        -a.z,
        -a.yaw,
    )


def relative4(a: Pose4, b: Pose4) -> Pose4:
    """``inverse4(a) * b`` computed without the intermediate pose."""
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose4(c * dx + s * dy, -s * dx + c * dy, b.z - a.z, b.yaw - a.yaw)


def project_to_4dof(p6: Pose6) -> Pose4:
    t = p6.translation
    return Pose4(t[0], t[1], t[2], yaw_of(p6.rotation))


def pose6_from_4dof(p4: Pose4, tilt: np.ndarray | None = None) -> Pose6:
    """Build a Pose6 from yaw/position and an optional zero-yaw tilt rotation."""
    r = rotz(p4.yaw)
    if tilt is not None:
        r = r @ tilt
    return Pose6(r, p4.translation)


def lift_to_6dof(p4: Pose4, vio6: Pose6, vio4: Pose4) -> Pose6:
    """Combine an estimated 4-DoF pose with VIO roll/pitch.

    The VIO rotation is re-yawed by the difference between the estimated yaw
    and the VIO yaw; translation is taken from the estimate.
    """
    r = rotz(p4.yaw - vio4.yaw) @ vio6.rotation
    return Pose6(r, p4.translation)

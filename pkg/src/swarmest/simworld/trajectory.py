"""Ground-truth trajectories sampled on the master clock."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import Pose4, Pose6, wrap_angles
from .scenario import ConfigError, DroneSpec

GRAVITY = 9.81
_MIN_YAW_SPEED = 0.05


@dataclass
class DroneTruth:
    """Samples of one drone on the shared clock.

    Arrays cover the full clock; only indices in ``[first, last]`` are valid
    (the drone is powered on).
    """

    drone: int
    pos: np.ndarray  # (N, 3)
    yaw: np.ndarray  # (N,)
    tilt: np.ndarray  # (N, 3, 3) zero-yaw roll/pitch rotation
    first: int
    last: int

    def active(self, k: int) -> bool:
        return self.first <= k <= self.last

    def pose4(self, k: int) -> Pose4:
        p = self.pos[k]
        return Pose4(p[0], p[1], p[2], self.yaw[k])

    def rotation(self, k: int) -> np.ndarray:
        c, s = math.cos(self.yaw[k]), math.sin(self.yaw[k])
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return rz @ self.tilt[k]

    def pose6(self, k: int) -> Pose6:
        return Pose6(self.rotation(k), self.pos[k])

    def path_length(self, k0: int | None = None, k1: int | None = None) -> float:
        k0 = self.first if k0 is None else k0
        k1 = self.last if k1 is None else k1
        seg = np.diff(self.pos[k0:k1 + 1], axis=0)
        return float(np.sum(np.linalg.norm(seg, axis=1)))


@dataclass
class GroundTruth:
    t: np.ndarray
    dt: float
    drones: dict  # id -> DroneTruth

    def index(self, t: float) -> int:
        return int(round(t / self.dt))


def _circle(spec: DroneSpec, t):
    c = np.asarray(spec.center, float)
    w = spec.direction * 2.0 * math.pi / float(spec.period)
    a = w * t + float(spec.phase)
    return np.stack([c[0] + spec.radius * np.cos(a), c[1] + spec.radius * np.sin(a),
                     np.full_like(t, c[2])], axis=1)


def _lissajous(spec: DroneSpec, t):
    c = np.asarray(spec.center, float)
    amp = np.asarray(spec.amplitude, float)
    per = np.broadcast_to(np.asarray(spec.period, float), (3,))
    ph = np.broadcast_to(np.asarray(spec.phase, float), (3,))
    out = np.empty((len(t), 3))
    for ax in range(3):
        if amp[ax] == 0.0 or not np.isfinite(per[ax]):
            out[:, ax] = c[ax]
        else:
            out[:, ax] = c[ax] + amp[ax] * np.sin(2.0 * math.pi * t / per[ax] + ph[ax])
    return out


def _waypoints(spec: DroneSpec, t, v_max: float):
    pts = np.asarray(spec.points, float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
        raise ConfigError(f"drone {spec.id}: waypoints need at least two 3-D points")
    if not 0 < spec.speed <= v_max:
        raise ConfigError(f"drone {spec.id}: waypoint speed must be in (0, {v_max}]")
    if spec.loop:
        pts = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(seg < 1e-6):
        raise ConfigError(f"drone {spec.id}: repeated waypoint")
    n = len(pts)
    # Catmull-Rom tangents, zero at open ends
    tang = np.zeros_like(pts)
    for k in range(n):
        if spec.loop:
            prev_p = pts[k - 1] if k > 0 else pts[-2]
            next_p = pts[k + 1] if k < n - 1 else pts[1]
            tang[k] = 0.5 * (next_p - prev_p)
        elif 0 < k < n - 1:
            tang[k] = 0.5 * (pts[k + 1] - pts[k - 1])
    times = np.concatenate([[0.0], np.cumsum(seg / spec.speed)])
    total = times[-1]
    tt = np.mod(t, total) if spec.loop else np.clip(t, 0.0, total)
    idx = np.clip(np.searchsorted(times, tt, side="right") - 1, 0, n - 2)
    h = times[idx + 1] - times[idx]
    s = ((tt - times[idx]) / h)[:, None]
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * pts[idx] + h10 * tang[idx] + h01 * pts[idx + 1] + h11 * tang[idx + 1]


def sample_positions(spec: DroneSpec, t: np.ndarray, v_max: float = 5.0) -> np.ndarray:
    tl = t - spec.start
    if spec.kind == "static":
        p = np.asarray(spec.position, float)
        return np.tile(p, (len(t), 1))
    if spec.kind == "circle":
        if not spec.radius > 0 or not float(spec.period) > 0:
            raise ConfigError(f"drone {spec.id}: circle needs positive radius and period")
        return _circle(spec, tl)
    if spec.kind == "lissajous":
        return _lissajous(spec, tl)
    if spec.kind == "waypoints":
        return _waypoints(spec, np.maximum(tl, 0.0), v_max)
    raise ConfigError(f"drone {spec.id}: unknown trajectory kind {spec.kind!r}")


def _tilts(yaw, acc):
    c, s = np.cos(yaw), np.sin(yaw)
    a_f = c * acc[:, 0] + s * acc[:, 1]
    a_l = -s * acc[:, 0] + c * acc[:, 1]
    pitch = np.arctan2(a_f, GRAVITY)
    roll = -np.arctan2(a_l, GRAVITY)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    # Ry(pitch) @ Rx(roll)
    r = np.zeros((len(yaw), 3, 3))
    r[:, 0, 0] = cp
    r[:, 0, 1] = sp * sr
    r[:, 0, 2] = sp * cr
    r[:, 1, 1] = cr
    r[:, 1, 2] = -sr
    r[:, 2, 0] = -sp
    r[:, 2, 1] = cp * sr
    r[:, 2, 2] = cp * cr
    return r


def generate_drone(spec: DroneSpec, t: np.ndarray, dt: float, v_max: float = 5.0) -> DroneTruth:
    pos = sample_positions(spec, t, v_max)
    vel = np.gradient(pos, dt, axis=0)
    acc = np.gradient(vel, dt, axis=0)
    first = int(math.ceil(spec.start / dt - 1e-9))
    last = len(t) - 1 if math.isinf(spec.stop) else min(len(t) - 1, int(math.floor(spec.stop / dt + 1e-9)))
    if first > last:
        raise ConfigError(f"drone {spec.id}: empty active interval")
    step = np.linalg.norm(np.diff(pos[first:last + 1], axis=0), axis=1)
    if step.size and step.max() > v_max * dt * (1 + 1e-9):
        raise ConfigError(f"drone {spec.id}: trajectory exceeds v_max={v_max} m/s")

    if spec.yaw == "velocity":
        hs = np.hypot(vel[:, 0], vel[:, 1])
        raw = np.arctan2(vel[:, 1], vel[:, 0])
        yaw = np.empty(len(t))
        ok = hs > _MIN_YAW_SPEED
        held = float(raw[np.argmax(ok)]) if ok.any() else 0.0
        for k in range(len(t)):
            if ok[k]:
                held = raw[k]
            yaw[k] = held
    else:
        yaw = np.full(len(t), float(spec.yaw))
    yaw = wrap_angles(yaw)
    tilt = _tilts(yaw, acc)
    return DroneTruth(spec.id, pos, yaw, tilt, first, last)


def generate_trajectory(specs, duration: float, rate_hz: float, v_max: float = 5.0) -> GroundTruth:
    """Sample every drone's trajectory on a common clock of ``rate_hz``."""
    n = int(round(duration * rate_hz)) + 1
    dt = 1.0 / rate_hz
    t = np.round(np.arange(n) * dt, 9)
    drones = {s.id: generate_drone(s, t, dt, v_max) for s in specs}
    return GroundTruth(t, dt, drones)

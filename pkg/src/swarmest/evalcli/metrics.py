"""Trajectory metrics: relative error, absolute trajectory error and drift.

Series are arrays with rows ``(t, x, y, z, yaw)``. Estimated and true
samples are paired by nearest timestamp within half a sample period.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import wrap_angles


class MetricError(ValueError):
    """Raised when two series have no samples in common."""


def _as_series(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != 5:
        raise ValueError("series must have rows (t, x, y, z, yaw)")
    return a


def align(est, gt, dt: float) -> tuple:
    """Row pairs of ``est`` and ``gt`` whose timestamps are within ``dt / 2``."""
    est, gt = _as_series(est), _as_series(gt)
    if len(est) == 0 or len(gt) == 0:
        raise MetricError("empty series")
    order = np.argsort(gt[:, 0], kind="stable")
    tg = gt[order, 0]
    pos = np.clip(np.searchsorted(tg, est[:, 0]), 1, max(len(tg) - 1, 1))
    left = np.clip(pos - 1, 0, len(tg) - 1)
    right = np.clip(pos, 0, len(tg) - 1)
    pick = np.where(np.abs(tg[left] - est[:, 0]) <= np.abs(tg[right] - est[:, 0]), left, right)
    ok = np.abs(tg[pick] - est[:, 0]) <= dt / 2 + 1e-9
    if not np.any(ok):
        raise MetricError("no overlapping samples")
    return est[ok], gt[order[pick[ok]]]


def compute_re(est, gt, dt: float = 0.1) -> tuple:
    """Per-axis position RMSE and yaw RMSE of relative poses.

    Both series hold the other drone's pose in the observer's body frame,
    so the position error is already expressed in that frame.
    """
    e, g = align(est, gt, dt)
    pos = np.sqrt(np.mean((e[:, 1:4] - g[:, 1:4]) ** 2, axis=0))
    yaw = float(np.sqrt(np.mean(wrap_angles(e[:, 4] - g[:, 4]) ** 2)))
    return pos, yaw


def compute_ate(est, gt, dt: float = 0.1) -> tuple:
    """Position RMSE (norm of the error vector) and yaw RMSE, without alignment."""
    e, g = align(est, gt, dt)
    pos = float(np.sqrt(np.mean(np.sum((e[:, 1:4] - g[:, 1:4]) ** 2, axis=1))))
    yaw = float(np.sqrt(np.mean(wrap_angles(e[:, 4] - g[:, 4]) ** 2)))
    return pos, yaw


def trajectory_length(series) -> float:
    p = _as_series(series)[:, 1:4]
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1))) if len(p) > 1 else 0.0


def compute_drift(est, gt, dt: float = 0.1) -> float:
    """Final position error over the true path length."""
    gt = _as_series(gt)
    length = trajectory_length(gt)
    if length <= 0:
        raise MetricError("zero-length trajectory")
    e, g = align(est, gt, dt)
    return float(np.linalg.norm(e[-1, 1:4] - g[-1, 1:4])) / length


def _num(v):
    if v is None:
        return None
    v = float(v)
    return None if not math.isfinite(v) else v


@dataclass
class MetricReport:
    """Metrics of one run. Every key is always present; undefined values are null."""

    scenario: str
    seed: int
    mode: str
    drones: list
    re: dict = field(default_factory=dict)  # "k-i" -> {"pos": [3], "pos_norm", "yaw"}
    ate: dict = field(default_factory=dict)  # "k/i" -> {"pos", "yaw"}
    drift: dict = field(default_factory=dict)  # drone -> fraction
    length: dict = field(default_factory=dict)  # drone -> metres
    baseline: dict = field(default_factory=dict)  # aligned VIO: {"re": ..., "drift": ...}
    status: dict = field(default_factory=dict)  # drone -> estimator status
    solver: dict = field(default_factory=dict)  # {"solves", "diverged", "max_iterations"}
    outliers: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)

    def re_norm(self, pair: str, baseline: bool = False):
        src = self.baseline.get("re", {}) if baseline else self.re
        v = src.get(pair)
        return None if v is None else v["pos_norm"]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "seed": self.seed, "mode": self.mode,
            "drones": list(self.drones), "re": self.re, "ate": self.ate,
            "drift": self.drift, "length": self.length, "baseline": self.baseline,
            "status": self.status, "solver": self.solver, "outliers": self.outliers,
            "network": self.network,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def re_entry(est, gt, dt: float) -> dict | None:
    try:
        pos, yaw = compute_re(est, gt, dt)
    except MetricError:
        return None
    return {"pos": [float(v) for v in pos], "pos_norm": float(np.linalg.norm(pos)), "yaw": float(yaw)}


def ate_entry(est, gt, dt: float) -> dict:
    try:
        pos, yaw = compute_ate(est, gt, dt)
    except MetricError:
        return {"pos": None, "yaw": None}
    return {"pos": _num(pos), "yaw": _num(yaw)}


def drift_entry(est, gt, dt: float):
    try:
        return _num(compute_drift(est, gt, dt))
    except MetricError:
        return None

"""Estimator parameters."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass


@dataclass
class EstimatorConfig:
    # graph size and swarm keyframe policy
    m_max: int = 100
    d_kf: float = 0.3
    psi_kf: float = math.radians(10.0)
    t_kf: float = 2.0
    pruning: str = "random"  # or "fifo"
    # observability
    d_mot: float = 0.5
    mot_window: float = 10.0
    # outlier rejection
    h_max: float = 2.0
    tau_bidir: float = 0.3
    tau_res: float = 3.0
    l_max: float = 10.0
    # initialization and association
    n_init: int = 8
    theta_assoc: float = math.radians(10.0)
    # odometry edge noise: base + per metre of VIO path between keyframes
    odom_pos_base: float = 0.01
    odom_pos_per_m: float = 0.02
    odom_yaw_base: float = 0.002
    odom_yaw_per_m: float = 0.01
    huber_delta: float = 1.0
    # solver
    max_iter: int = 50
    grad_tol: float = 1e-8
    cost_tol: float = 1e-9
    step_tol: float = 1e-8
    # frame ticks are processed this long after they happen, so that
    # broadcasts with normal latency have arrived
    lag: float = 0.2
    t_stale: float = 0.5
    use_uwb: bool = True
    use_detection: bool = True
    use_map: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.m_max < 2:
            raise ValueError("m_max must be at least 2")
        if self.pruning not in ("random", "fifo"):
            raise ValueError("pruning must be 'random' or 'fifo'")
        if self.n_init < 1:
            raise ValueError("n_init must be positive")

    def replace(self, **kw) -> "EstimatorConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown estimator keys: {sorted(unknown)}")
        return cls(**data)

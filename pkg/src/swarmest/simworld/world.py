"""Assemble a complete simulated world from a scenario."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose4, relative4
from .scenario import Scenario
from .sensors import (
    DescriptorField,
    RelativePoseOracle,
    VioStream,
    make_keyframe,
    simulate_detections,
    simulate_uwb,
    simulate_vio,
    time_key,
)
from .trajectory import GroundTruth, generate_trajectory


def _stride(base_hz: float, hz: float) -> int:
    return int(round(base_hz / hz))


@dataclass
class Measurements:
    """Everything the drones sense; the input of the estimators."""

    scenario: Scenario
    vio: dict  # drone -> VioStream
    uwb: list  # DistanceEdge
    detections: list  # DetectionEdge
    keyframes: dict  # drone -> [Keyframe]
    dt: float  # master clock period

    @property
    def frame_stride(self) -> int:
        return _stride(self.scenario.rates.vio_hz, self.scenario.rates.frame_hz)

    @property
    def n_ticks(self) -> int:
        return max(int(v.index[-1]) for v in self.vio.values()) + 1

    def tick_time(self, k: int) -> float:
        return time_key(k * self.dt)

    def tick_of(self, t: float) -> int:
        return int(round(t / self.dt))


@dataclass
class SimWorld:
    scenario: Scenario
    gt: GroundTruth
    meas: Measurements
    descriptor_field: DescriptorField
    uwb_injected: set = field(default_factory=set)
    mislabeled: list = field(default_factory=list)

    def make_oracle(self) -> RelativePoseOracle:
        s = self.scenario
        return RelativePoseOracle(s.oracle, s.outliers.loop_rate, s.seed, s.noise.scale)

    def truth_in_frame(self, observer: int, drone: int, k: int) -> Pose4:
        """True pose of ``drone`` at tick ``k`` in ``observer``'s VIO frame."""
        o = self.gt.drones[observer]
        return relative4(o.pose4(o.first), self.gt.drones[drone].pose4(k))


def keyframe_ticks(vio: VioStream, frame_stride: int, distance: float, interval: float, dt: float) -> list:
    """Place-recognition keyframe policy of a drone's front end.

    A keyframe is taken on the first frame tick, then whenever VIO has moved
    more than ``distance`` or ``interval`` seconds have passed.
    """
    ticks = []
    last_pos = None
    last_k = None
    for k in vio.index:
        k = int(k)
        if k % frame_stride:
            continue
        p = vio.pose[vio.row(k), :3]
        if (last_pos is None or np.linalg.norm(p - last_pos) > distance
                or (k - last_k) * dt >= interval - 1e-9):
            ticks.append(k)
            last_pos, last_k = p, k
    return ticks


def build_world(scenario: Scenario) -> SimWorld:
    s = scenario
    gt = generate_trajectory(s.drones, s.duration, s.rates.vio_hz, s.v_max)
    n = len(gt.t)
    vio = simulate_vio(gt, s.noise, s.seed)
    uwb, det = [], []
    injected, mislabeled = set(), []
    if s.sensors.uwb:
        ticks = range(0, n, _stride(s.rates.vio_hz, s.rates.uwb_hz))
        res = simulate_uwb(gt, ticks, s.noise.uwb_sigma, s.outliers, s.seed, s.noise.scale,
                           edge_sigma=s.noise.uwb_sigma if s.noise.uwb_sigma > 0 else None)
        uwb, injected = res.edges, res.injected
    if s.sensors.detection:
        ticks = range(0, n, _stride(s.rates.vio_hz, s.rates.detection_hz))
        res = simulate_detections(gt, ticks, s.detection, s.noise, s.outliers.misassoc_rate, s.seed)
        det, mislabeled = res.edges, res.mislabeled
    field_ = DescriptorField(s.descriptors, s.seed)
    kfs = {}
    stride = _stride(s.rates.vio_hz, s.rates.frame_hz)
    for drone, v in vio.items():
        kfs[drone] = []
        if not s.sensors.map:
            continue
        truth = gt.drones[drone]
        for k in keyframe_ticks(v, stride, s.keyframes.distance, s.keyframes.interval, gt.dt):
            r = v.row(k)
            kfs[drone].append(make_keyframe(drone, gt.t[k], v.pose4(k), v.pose6(k), truth.pose6(k),
                                            field_, s.seed, float(v.odometer[r])))
    meas = Measurements(s, vio, uwb, det, kfs, gt.dt)
    return SimWorld(s, gt, meas, field_, injected, mislabeled)


def frame_ticks(meas: Measurements) -> list:
    return list(range(0, meas.n_ticks, meas.frame_stride))


def path_length(positions: np.ndarray) -> float:
    if len(positions) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(positions, axis=0), axis=1)))


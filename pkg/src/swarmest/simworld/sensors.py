"""Synthetic sensor streams generated from ground truth.

All randomness is drawn from generators seeded by the scenario seed plus a
fixed per-stream tag, so the streams are independent of each other and of
the order in which they are generated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose4, Pose6, compose4, relative4, rotz, wrap_angles, yaw_of
from ..maploc import ExtractionResult, Keyframe
from ..measurements import (
    DEFAULT_UWB_SIGMA,
    DetectionEdge,
    DistanceEdge,
    detection_forward_model,
)
from .scenario import (
    DescriptorConfig,
    DetectionConfig,
    NoiseConfig,
    OracleConfig,
    OutlierConfig,
)
from .trajectory import GroundTruth

# stream tags mixed into the seed
_TAG_VIO, _TAG_UWB, _TAG_DET, _TAG_DESC, _TAG_ORACLE, _TAG_DESC_NOISE = range(1, 7)


def stream_rng(seed: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(tag), *[int(e) for e in extra]])


def time_key(t: float) -> float:
    """Canonical timestamp used as a dictionary key."""
    return round(float(t), 6)


# ---------------------------------------------------------------------------
# VIO


@dataclass
class VioStream:
    """VIO output of one drone on the master clock ticks where it is active."""

    drone: int
    index: np.ndarray  # master clock indices
    t: np.ndarray
    pose: np.ndarray  # (M, 4) x, y, z, yaw in the drone's VIO frame
    tilt: np.ndarray  # (M, 3, 3) zero-yaw roll/pitch (drift-free)
    odometer: np.ndarray  # (M,) accumulated VIO path length

    def row(self, k: int) -> int:
        r = k - int(self.index[0])
        if r < 0 or r >= len(self.index):
            raise IndexError(f"drone {self.drone} has no VIO at tick {k}")
        return r

    def pose4(self, k: int) -> Pose4:
        return Pose4.from_array(self.pose[self.row(k)])

    def pose6(self, k: int) -> Pose6:
        r = self.row(k)
        return Pose6(rotz(self.pose[r, 3]) @ self.tilt[r], self.pose[r, :3])


def simulate_vio(gt: GroundTruth, noise: NoiseConfig, seed: int) -> dict:
    """Drifting VIO per drone: cumulative composition of perturbed true deltas.

    Each step's true 4-DoF delta gets a scale error and a per-metre yaw bias
    (both fixed per drone), plus white noise: per-axis position noise
    proportional to the step length and yaw noise growing with the square
    root of it. Each stream starts at the identity.
    """
    out = {}
    for drone, truth in sorted(gt.drones.items()):
        rng = stream_rng(seed, _TAG_VIO, drone)
        k0, k1 = truth.first, truth.last
        pos = truth.pos[k0:k1 + 1]
        yaw = truth.yaw[k0:k1 + 1]
        n = len(pos)
        scale = 1.0 + noise.scale * noise.vio_scale * rng.standard_normal()
        bias = noise.scale * noise.vio_yaw_bias * rng.standard_normal()
        # true deltas in the previous body frame
        dp = np.diff(pos, axis=0)
        c, s = np.cos(yaw[:-1]), np.sin(yaw[:-1])
        d_local = np.stack([c * dp[:, 0] + s * dp[:, 1], -s * dp[:, 0] + c * dp[:, 1], dp[:, 2]], axis=1)
        d_yaw = wrap_angles(np.diff(yaw))
        step = np.linalg.norm(dp, axis=1)
        eps_p = rng.standard_normal((n - 1, 3)) * (noise.scale * noise.vio_pos_frac * step)[:, None]
        eps_y = rng.standard_normal(n - 1) * noise.scale * noise.vio_yaw_rw * np.sqrt(step)
        d_local = d_local * scale + eps_p
        d_yaw = d_yaw + bias * step + eps_y
        vyaw = np.concatenate([[0.0], np.cumsum(d_yaw)])
        c, s = np.cos(vyaw[:-1]), np.sin(vyaw[:-1])
        d_world = np.stack([c * d_local[:, 0] - s * d_local[:, 1], s * d_local[:, 0] + c * d_local[:, 1], d_local[:, 2]], axis=1)
        vpos = np.vstack([np.zeros(3), np.cumsum(d_world, axis=0)])
        pose = np.column_stack([vpos, wrap_angles(vyaw)])
        odo = np.concatenate([[0.0], np.cumsum(np.linalg.norm(d_world, axis=1))])
        idx = np.arange(k0, k1 + 1)
        out[drone] = VioStream(drone, idx, gt.t[idx], pose, truth.tilt[k0:k1 + 1].copy(), odo)
    return out


# ---------------------------------------------------------------------------
# UWB


@dataclass
class UwbResult:
    edges: list  # DistanceEdge, sorted by (t, i, j)
    injected: set = field(default_factory=set)  # {(i, j, t)} gross outliers


def simulate_uwb(gt: GroundTruth, ticks, sigma_d: float, outliers: OutlierConfig,
                 seed: int, noise_scale: float = 1.0, edge_sigma: float | None = None) -> UwbResult:
    """Noisy ranges for every ordered pair of active drones at each tick.

    ``i -> j`` and ``j -> i`` are separate measurements with independent
    noise. With probability ``outliers.uwb_rate`` a range is additionally
    lengthened by ``U(uwb_min, uwb_max)``.
    """
    rng = stream_rng(seed, _TAG_UWB)
    edge_sigma = edge_sigma if edge_sigma is not None else (sigma_d if sigma_d > 0 else DEFAULT_UWB_SIGMA)
    ids = sorted(gt.drones)
    res = UwbResult([])
    for k in ticks:
        t = time_key(gt.t[k])
        for i in ids:
            di = gt.drones[i]
            if not di.active(k):
                continue
            for j in ids:
                dj = gt.drones[j]
                if j == i or not dj.active(k):
                    continue
                true_d = float(np.linalg.norm(di.pos[k] - dj.pos[k]))
                d = true_d + noise_scale * sigma_d * rng.standard_normal()
                if rng.random() < outliers.uwb_rate:
                    d += rng.uniform(outliers.uwb_min, outliers.uwb_max)
                    res.injected.add((i, j, t))
                res.edges.append(DistanceEdge(i, j, t, max(d, 0.0), edge_sigma))
    return res


# ---------------------------------------------------------------------------
# detections


def in_dead_zone(v_body: np.ndarray, half_angle: float) -> bool:
    """True when ``v_body`` lies inside the downward cone of ``half_angle``."""
    n = float(np.linalg.norm(v_body))
    if n == 0.0:
        return True
    return -v_body[2] / n > math.cos(half_angle)


def _perturb_direction(u: np.ndarray, sigma: float, rng) -> np.ndarray:
    # rotate u by N(0, sigma) about a random axis orthogonal to it
    a = rng.standard_normal(3)
    axis = a - (a @ u) * u
    axis /= np.linalg.norm(axis)
    ang = sigma * rng.standard_normal()
    out = u * math.cos(ang) + np.cross(axis, u) * math.sin(ang)
    return out / np.linalg.norm(out)


@dataclass
class DetectionResult:
    edges: list  # DetectionEdge with the (possibly wrong) label
    mislabeled: list = field(default_factory=list)  # (observer, t, true target, reported)


def simulate_detections(gt: GroundTruth, ticks, cfg: DetectionConfig, noise: NoiseConfig,
                        misassoc_rate: float, seed: int) -> DetectionResult:
    """Bearing plus inverse-depth detections of every visible drone.

    A target is visible when it is within ``cfg.max_range`` of the camera
    and outside the downward dead-zone cone. Directions are in the
    observer's yaw-only body frame.
    """
    rng = stream_rng(seed, _TAG_DET)
    half = math.radians(cfg.dead_zone_deg)
    cam_pos = np.asarray(cfg.cam_pos, float)
    ids = sorted(gt.drones)
    res = DetectionResult([])
    sig_dir = noise.det_sigma_dir
    frac = noise.det_inv_depth_frac
    for k in ticks:
        t = time_key(gt.t[k])
        for obs in ids:
            do = gt.drones[obs]
            if not do.active(k):
                continue
            for tgt in ids:
                dt_ = gt.drones[tgt]
                if tgt == obs or not dt_.active(k):
                    continue
                rel = relative4(do.pose4(k), dt_.pose4(k)).translation
                v = rel - cam_pos
                if in_dead_zone(v, half) or np.linalg.norm(v) > cfg.max_range:
                    continue
                u, s = detection_forward_model(rel, np.eye(3), cam_pos)
                if noise.scale > 0:
                    u = _perturb_direction(u, noise.scale * sig_dir, rng)
                    s = s * max(1.0 + noise.scale * frac * rng.standard_normal(), 0.05)
                label = tgt
                if rng.random() < misassoc_rate:
                    others = [d for d in ids if d not in (obs, tgt) and gt.drones[d].active(k)]
                    label = others[int(rng.integers(len(others)))] if others else None
                    res.mislabeled.append((obs, t, tgt, label))
                res.edges.append(DetectionEdge(obs, label, t, u, s, np.eye(3), cam_pos,
                                               sig_dir if sig_dir > 0 else 0.02,
                                               (frac if frac > 0 else 0.05) * s))
    return res


# ---------------------------------------------------------------------------
# descriptors and keyframes


class DescriptorField:
    """Smooth random embedding of 3-D position onto the unit sphere.

    Random Fourier features of a Gaussian kernel with length scale ``l``:
    the expected squared distance between the unit embeddings of two points
    ``r`` apart is ``2 - 2 exp(-r^2 / (2 l^2))``, so nearby places map to
    nearby descriptors and distant places to nearly orthogonal ones.
    """

    def __init__(self, cfg: DescriptorConfig, seed: int):
        self.cfg = cfg
        rng = stream_rng(seed, _TAG_DESC)
        self._w = rng.standard_normal((cfg.cameras, cfg.dim, 3)) / cfg.length_scale
        self._b = rng.uniform(0.0, 2.0 * math.pi, (cfg.cameras, cfg.dim))

    def embed(self, position) -> np.ndarray:
        x = np.asarray(position, float)
        f = np.cos(self._w @ x + self._b)
        return f / np.linalg.norm(f, axis=1, keepdims=True)

    def describe(self, position, rng: np.random.Generator | None = None) -> np.ndarray:
        d = self.embed(position)
        if rng is not None and self.cfg.sigma > 0:
            d = d + self.cfg.sigma * rng.standard_normal(d.shape)
            d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d


def make_keyframe(drone: int, t: float, vio4: Pose4, vio6: Pose6, truth: Pose6,
                  field_: DescriptorField, seed: int, odometer: float = 0.0) -> Keyframe:
    """Keyframe with descriptors of the true position (noise seeded per keyframe)."""
    rng = stream_rng(seed, _TAG_DESC_NOISE, drone, int(round(t * 1e6)))
    desc = field_.describe(truth.translation, rng)
    return Keyframe(drone, time_key(t), vio4, vio6, desc, odometer, "local", truth)


# ---------------------------------------------------------------------------
# relative pose oracle


class RelativePoseOracle:
    """Stand-in for feature matching plus PnP: noisy truth with simulated inliers.

    For the pair (matched keyframe i@t0, query keyframe j@t1) it returns the
    pose of i@t0 in drone j's VIO frame, built from the true relative 4-DoF
    pose (plus noise) composed onto j's VIO pose. The inlier count decays
    with true range. With probability ``loop_rate`` the result is a gross
    error that keeps a high inlier count and a plausible attitude.

    Draws are seeded per keyframe pair, so every drone extracting the same
    pair gets the same answer.
    """

    def __init__(self, cfg: OracleConfig, loop_rate: float, seed: int, noise_scale: float = 1.0):
        self.cfg = cfg
        self.loop_rate = loop_rate
        self.seed = seed
        self.noise_scale = noise_scale
        self.calls = 0
        self.gross: set = set()  # {(i, t0, j, t1)}

    def extract(self, matched: Keyframe, query: Keyframe) -> ExtractionResult:
        if matched.truth is None or query.truth is None:
            raise ValueError("oracle needs keyframes with ground truth")
        self.calls += 1
        rng = stream_rng(self.seed, _TAG_ORACLE, matched.drone, int(round(matched.t * 1e6)),
                         query.drone, int(round(query.t * 1e6)))
        ti, tj = matched.truth, query.truth
        pi = Pose4(*ti.translation, yaw_of(ti.rotation))
        pj = Pose4(*tj.translation, yaw_of(tj.rotation))
        rel = relative4(pj, pi).as_array()  # i@t0 seen from j@t1
        rng_m = float(np.linalg.norm(ti.translation - tj.translation))
        sig = np.asarray(self.cfg.sigma, float) * self.noise_scale
        rel = rel + sig * rng.standard_normal(4)
        inliers = int(round(self.cfg.max_inliers * math.exp(-(rng_m / self.cfg.r_loop) ** 2)))
        gross = rng.random() < self.loop_rate
        if gross:
            d = rng.standard_normal(3)
            d[2] *= 0.2
            rel[:3] += rng.uniform(1.0, 5.0) * d / np.linalg.norm(d)
            rel[3] = rng.uniform(-math.pi, math.pi)
            inliers = max(inliers, int(rng.integers(self.cfg.max_inliers // 2, self.cfg.max_inliers + 1)))
            self.gross.add((matched.drone, matched.t, query.drone, query.t))
        # place it in j's VIO frame; keep i's own tilt so gravity stays consistent
        p_in_vj = compose4(query.vio4, Pose4.from_array(rel))
        tilt_i = rotz(-matched.vio4.yaw) @ matched.vio6.rotation
        pose = Pose6(rotz(p_in_vj.yaw) @ tilt_i, p_in_vj.translation)
        return ExtractionResult(inliers, pose, gross)

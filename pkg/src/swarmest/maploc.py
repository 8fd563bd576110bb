"""Multi-drone map-based localization.

Each drone keeps two keyframe databases: one for its own keyframes and one
for keyframes received from the swarm. A new keyframe is matched against
them by global descriptor; a candidate pair is turned into a relative pose
by a :class:`PoseExtractor`, gated on inlier count, gravity consistency and
edge length, and emitted as a :class:`~swarmest.measurements.MapEdge`.
Pairs where both keyframes come from other drones are never tried.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from .geometry import (
    Pose4,
    Pose6,
    project_to_4dof,
    relative4,
    rotation_angle,
    rotz,
    yaw_of,
)
from .measurements import DEFAULT_MAP_SIGMA, MapEdge

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Keyframe:
    """A place-recognition keyframe.

    ``descriptors`` has one unit-norm row per virtual camera. ``truth`` is
    only filled in by the simulator, for the relative-pose oracle.
    """

    drone: int
    t: float
    vio4: Pose4
    vio6: Pose6
    descriptors: np.ndarray
    odometer: float = 0.0
    origin: str = "local"
    truth: Pose6 | None = None

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.descriptors, dtype=float))
        norms = np.linalg.norm(d, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("keyframe descriptors must be unit vectors")
        object.__setattr__(self, "descriptors", d)

    @property
    def key(self) -> tuple:
        return (self.drone, round(self.t, 6))

    def as_remote(self) -> "Keyframe":
        return Keyframe(self.drone, self.t, self.vio4, self.vio6, self.descriptors,
                        self.odometer, "remote", self.truth)


@dataclass
class LoopThresholds:
    tau_fl: float = 0.5  # max descriptor distance
    tau_in: int = 20  # min inliers
    tau_rot: float = math.radians(5.0)  # max gravity inconsistency
    l_max: float = 10.0  # max edge length, m
    t_guard: float = 5.0  # same-drone temporal exclusion, s
    knn: int = 5

    def __post_init__(self):
        if min(self.tau_fl, self.tau_in, self.tau_rot, self.l_max) <= 0:
            raise ValueError("loop thresholds must be positive")


@dataclass
class ExtractionResult:
    inliers: int
    pose_in_query_frame: Pose6  # keyframe (i, t0) expressed in drone j's VIO frame
    gross_outlier: bool = False  # simulator bookkeeping only


class PoseExtractor(Protocol):
    def extract(self, matched: Keyframe, query: Keyframe) -> ExtractionResult: ...


class KeyframeDatabase:
    """Brute-force nearest-neighbour index over keyframe descriptors."""

    def __init__(self):
        self._kfs: list[Keyframe] = []
        self._keys: set = set()
        self._rows: list[np.ndarray] = []
        self._owner: list[int] = []
        self._mat: np.ndarray | None = None

    def __len__(self):
        return len(self._kfs)

    def __contains__(self, key):
        return key in self._keys

    @property
    def keyframes(self) -> list:
        return list(self._kfs)

    def add(self, kf: Keyframe) -> bool:
        if kf.key in self._keys:
            return False
        idx = len(self._kfs)
        self._kfs.append(kf)
        self._keys.add(kf.key)
        for row in kf.descriptors:
            self._rows.append(row)
            self._owner.append(idx)
        self._mat = None
        return True

    def knn(self, desc: np.ndarray, k: int, exclude=None) -> list:
        """Up to ``k`` ``(distance, keyframe)`` pairs, nearest first.

        ``exclude(kf) -> bool`` removes candidates before ranking.
        """
        if not self._rows:
            return []
        if self._mat is None:
            self._mat = np.vstack(self._rows)
        dist = np.linalg.norm(self._mat - desc[None, :], axis=1)
        order = np.argsort(dist, kind="stable")
        out = []
        seen = set()
        for r in order:
            kf = self._kfs[self._owner[r]]
            if kf.key in seen or (exclude is not None and exclude(kf)):
                continue
            seen.add(kf.key)
            out.append((float(dist[r]), kf))
            if len(out) >= k:
                break
        return out

    def dump(self, fh) -> None:
        for kf in self._kfs:
            fh.write(json.dumps(keyframe_to_record(kf)) + "\n")

    @classmethod
    def load(cls, fh) -> "KeyframeDatabase":
        db = cls()
        for line in fh:
            if line.strip():
                db.add(keyframe_from_record(json.loads(line)))
        return db


def keyframe_to_record(kf: Keyframe) -> dict:
    rec = {
        "drone": kf.drone,
        "t": kf.t,
        "vio4": [kf.vio4.x, kf.vio4.y, kf.vio4.z, kf.vio4.yaw],
        "vio6_rot": kf.vio6.rotation.ravel().tolist(),
        "vio6_pos": kf.vio6.translation.tolist(),
        "descriptors": kf.descriptors.tolist(),
        "odometer": kf.odometer,
        "origin": kf.origin,
    }
    if kf.truth is not None:
        rec["truth_rot"] = kf.truth.rotation.ravel().tolist()
        rec["truth_pos"] = kf.truth.translation.tolist()
    return rec


def keyframe_from_record(rec: dict) -> Keyframe:
    truth = None
    if "truth_rot" in rec:
        truth = Pose6(np.array(rec["truth_rot"]).reshape(3, 3), rec["truth_pos"])
    return Keyframe(
        drone=rec["drone"],
        t=rec["t"],
        vio4=Pose4(*rec["vio4"]),
        vio6=Pose6(np.array(rec["vio6_rot"]).reshape(3, 3), rec["vio6_pos"]),
        descriptors=np.array(rec["descriptors"]),
        odometer=rec.get("odometer", 0.0),
        origin=rec.get("origin", "local"),
        truth=truth,
    )


def kf_query(f: Keyframe, local_db: KeyframeDatabase, remote_db: KeyframeDatabase,
             self_id: int, thresholds: LoopThresholds = LoopThresholds()):
    """Best database match for ``f`` strictly closer than ``tau_fl``.

    The remote database is searched only for the drone's own keyframes.
    Returns ``(keyframe, distance)`` or ``None``.
    """

    def exclude(kf: Keyframe) -> bool:
        if kf.key == f.key:
            return True
        return kf.drone == f.drone and abs(kf.t - f.t) < thresholds.t_guard

    candidates = []
    for desc in f.descriptors:
        if f.drone == self_id:
            candidates += remote_db.knn(desc, thresholds.knn, exclude)
        candidates += local_db.knn(desc, thresholds.knn, exclude)
    best, l_min = None, math.inf
    for dist, kf in candidates:
        if dist < min(thresholds.tau_fl, l_min):
            best, l_min = kf, dist
    return None if best is None else (best, l_min)


def g_check(r_i_in_vj: np.ndarray, r_vio_i: np.ndarray, r_vio_j: np.ndarray,
            tau_rot: float) -> tuple[bool, float]:
    """Gravity-consistency test of an extracted rotation.

    Predicts keyframe j's attitude in drone i's VIO frame from the extracted
    rotation, removes the yaw difference to j's own VIO attitude, and
    passes when the remaining roll/pitch disagreement is at most
    ``tau_rot``. Returns ``(passed, angle)``.
    """
    delta = r_i_in_vj.T @ r_vio_j
    r_j_in_vi = r_vio_i @ delta
    dpsi = yaw_of(r_vio_j) - yaw_of(r_j_in_vi)
    err = (rotz(dpsi) @ r_j_in_vi).T @ r_vio_j
    angle = rotation_angle(err)
    return angle <= tau_rot, angle


def add_keyframe(f: Keyframe, local_db: KeyframeDatabase, remote_db: KeyframeDatabase,
                 self_id: int) -> bool:
    db = local_db if f.drone == self_id else remote_db
    added = db.add(f)
    if not added:
        log.debug("duplicate keyframe %s ignored", f.key)
    return added


def loop_detection(f: Keyframe, local_db: KeyframeDatabase, remote_db: KeyframeDatabase,
                   self_id: int, extractor: PoseExtractor,
                   thresholds: LoopThresholds = LoopThresholds(),
                   sigma=DEFAULT_MAP_SIGMA, stats: Counter | None = None):
    """Try to close a loop on ``f``; always stores ``f`` afterwards.

    Returns ``(edge, extraction)``; ``edge`` is ``None`` when any gate fails.
    """
    stats = stats if stats is not None else Counter()
    edge = res = None
    match = kf_query(f, local_db, remote_db, self_id, thresholds)
    if match is None:
        stats["no_match"] += 1
    else:
        other, _ = match
        res = extractor.extract(other, f)
        if res.inliers < thresholds.tau_in:
            stats["few_inliers"] += 1
        else:
            ok, _ = g_check(res.pose_in_query_frame.rotation, other.vio6.rotation,
                            f.vio6.rotation, thresholds.tau_rot)
            if not ok:
                stats["gravity_check"] += 1
            else:
                rel = relative4(project_to_4dof(res.pose_in_query_frame), f.vio4)
                if math.hypot(rel.x, rel.y, rel.z) > thresholds.l_max:
                    stats["too_long"] += 1
                else:
                    edge = MapEdge(other.drone, round(other.t, 6), f.drone, round(f.t, 6),
                                   rel, tuple(sigma), res.inliers, self_id)
                    stats["edges"] += 1
    add_keyframe(f, local_db, remote_db, self_id)
    return edge, res


@dataclass
class MapLocalizer:
    """Per-drone wrapper holding both databases and the extractor."""

    self_id: int
    extractor: PoseExtractor
    thresholds: LoopThresholds = field(default_factory=LoopThresholds)
    sigma: tuple = DEFAULT_MAP_SIGMA
    local_db: KeyframeDatabase = field(default_factory=KeyframeDatabase)
    remote_db: KeyframeDatabase = field(default_factory=KeyframeDatabase)
    stats: Counter = field(default_factory=Counter)
    gross_edges: set = field(default_factory=set)

    def process(self, f: Keyframe) -> MapEdge | None:
        if f.key in self.local_db or f.key in self.remote_db:
            self.stats["duplicate"] += 1
            return None
        edge, res = loop_detection(f, self.local_db, self.remote_db, self.self_id,
                                   self.extractor, self.thresholds, self.sigma, self.stats)
        if edge is not None and res is not None and res.gross_outlier:
            self.gross_edges.add(edge.ident)
        return edge

    def dump(self, fh) -> None:
        self.local_db.dump(fh)
        self.remote_db.dump(fh)

    def load(self, lines: Iterable[str]) -> None:
        for line in lines:
            if line.strip():
                add_keyframe(keyframe_from_record(json.loads(line)), self.local_db,
                             self.remote_db, self.self_id)

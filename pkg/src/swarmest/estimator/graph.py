"""Swarm frames and the bounded estimation graph."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose4, relative4
from ..measurements import DetectionEdge, DistanceEdge, MapEdge, OdometryEdge
from .config import EstimatorConfig


@dataclass(frozen=True)
class KeyframeState:
    """VIO snapshot of one drone at one swarm keyframe."""

    drone: int
    t: float
    vio4: Pose4
    tilt: np.ndarray  # zero-yaw roll/pitch rotation from VIO
    odometer: float

    @property
    def key(self) -> tuple:
        return (self.drone, self.t)


@dataclass
class SwarmFrame:
    t: float
    keyframes: dict = field(default_factory=dict)  # drone -> KeyframeState
    distances: list = field(default_factory=list)
    detections: list = field(default_factory=list)

    def add_keyframe(self, kf: KeyframeState) -> None:
        if kf.drone in self.keyframes:
            raise ValueError(f"frame {self.t} already has a keyframe of drone {kf.drone}")
        self.keyframes[kf.drone] = kf

    @property
    def keys(self) -> list:
        return [(d, self.t) for d in sorted(self.keyframes)]


class EstimatorGraph:
    """Ordered swarm frames plus map edges and the per-keyframe states.

    Odometry edges are not stored: each drone's chain is rebuilt from its
    surviving keyframes, so deleting a frame automatically links its
    neighbours with the composed delta.
    """

    def __init__(self, self_id: int, config: EstimatorConfig | None = None):
        self.self_id = self_id
        self.config = config or EstimatorConfig()
        self.frames: dict = {}  # t -> SwarmFrame, insertion ordered by t
        self.map_edges: dict = {}  # (i, t0, j, t1) -> MapEdge
        self.states: dict = {}  # key -> np.ndarray (4,)
        self.anchor: tuple | None = None
        self.pruned: list = []  # times of deleted frames

    # -- structure -------------------------------------------------------

    def __len__(self):
        return len(self.frames)

    @property
    def times(self) -> list:
        return list(self.frames)

    @property
    def oldest(self) -> float | None:
        return next(iter(self.frames)) if self.frames else None

    @property
    def newest(self) -> float | None:
        return next(reversed(self.frames)) if self.frames else None

    def drones(self) -> list:
        out = set()
        for f in self.frames.values():
            out.update(f.keyframes)
        return sorted(out)

    def has_key(self, key) -> bool:
        f = self.frames.get(key[1])
        return f is not None and key[0] in f.keyframes

    def keyframe(self, key) -> KeyframeState:
        return self.frames[key[1]].keyframes[key[0]]

    def keyframes_of(self, drone: int) -> list:
        return [f.keyframes[drone] for f in self.frames.values() if drone in f.keyframes]

    def add_frame(self, frame: SwarmFrame) -> None:
        if self.frames and frame.t <= self.newest:
            raise ValueError("frames must be added in increasing time")
        self.frames[frame.t] = frame
        if self.anchor is None and self.self_id in frame.keyframes:
            self.anchor = (self.self_id, frame.t)

    def add_map_edge(self, edge: MapEdge) -> bool:
        if not (self.has_key(edge.keys[0]) and self.has_key(edge.keys[1])):
            return False
        # the same keyframe pair may be extracted by several drones; keep one
        self.map_edges.setdefault(map_key(edge), edge)
        return True

    # -- edges -----------------------------------------------------------

    def odometry_edges(self) -> list:
        cfg = self.config
        out = []
        for drone in self.drones():
            kfs = self.keyframes_of(drone)
            for a, b in zip(kfs[:-1], kfs[1:]):
                path = max(b.odometer - a.odometer, 0.0)
                sp = cfg.odom_pos_base + cfg.odom_pos_per_m * path
                sy = cfg.odom_yaw_base + cfg.odom_yaw_per_m * path
                out.append(OdometryEdge(drone, a.t, b.t, relative4(a.vio4, b.vio4), (sp, sp, sp, sy)))
        return out

    def distance_edges(self) -> list:
        return [e for f in self.frames.values() for e in f.distances]

    def detection_edges(self) -> list:
        return [e for f in self.frames.values() for e in f.detections]

    def all_map_edges(self) -> list:
        return [self.map_edges[k] for k in sorted(self.map_edges)]

    def edges(self) -> list:
        return (self.odometry_edges() + self.distance_edges()
                + self.detection_edges() + self.all_map_edges())

    # -- pruning ---------------------------------------------------------

    def prune(self, rng: np.random.Generator, policy: str | None = None) -> list:
        """Delete frames until at most ``m_max`` remain; returns deleted times.

        The anchor frame is never deleted. ``random`` picks uniformly among
        the other frames, ``fifo`` deletes the oldest of them.
        """
        policy = policy or self.config.pruning
        removed = []
        while len(self.frames) > self.config.m_max:
            cands = [t for t in self.frames if self.anchor is None or t != self.anchor[1]]
            if policy == "fifo":
                t = cands[0]
            else:
                t = cands[int(rng.integers(len(cands)))]
            self._remove(t)
            removed.append(t)
        self.pruned.extend(removed)
        return removed

    def _remove(self, t: float) -> None:
        frame = self.frames.pop(t)
        for d in frame.keyframes:
            self.states.pop((d, t), None)
        dead = [k for k, e in self.map_edges.items() if e.t0 == t or e.t1 == t]
        for k in dead:
            e = self.map_edges[k]
            if not (self.has_key(e.keys[0]) and self.has_key(e.keys[1])):
                del self.map_edges[k]

    def check(self) -> None:
        """Raise if an edge references a missing variable."""
        for e in self.edges():
            for key in e.keys:
                if key[0] is not None and not self.has_key(key):
                    raise AssertionError(f"edge {e} references missing {key}")


def map_key(edge: MapEdge) -> tuple:
    return (edge.i, edge.t0, edge.j, edge.t1)


def edge_id(edge) -> tuple:
    """Stable identity of an edge, used in rejection reports."""
    if isinstance(edge, DistanceEdge):
        return ("uwb", edge.i, edge.j, edge.t)
    if isinstance(edge, DetectionEdge):
        return ("det", edge.observer, edge.target, edge.t, tuple(np.round(edge.direction, 12)))
    if isinstance(edge, MapEdge):
        return ("map",) + map_key(edge)
    if isinstance(edge, OdometryEdge):
        return ("odo", edge.drone, edge.t_prev, edge.t)
    raise TypeError(type(edge).__name__)

"""Per-drone swarm estimator: buffering, frame assembly, solve loop and output.

Time is discrete: every measurement carries a timestamp on the shared
frame clock. A frame tick is processed once ``config.lag`` seconds have
passed, so messages delayed by normal network latency are in the buffers
by then; anything arriving for an already processed tick is dropped and
counted.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from ..geometry import Pose4, compose4, relative4, rotz, wrap_angle
from ..maploc import Keyframe, MapLocalizer
from ..measurements import MapEdge
from ..netsim import (
    DetectionMsg,
    DistanceSet,
    Envelope,
    KeyframeBroadcast,
    MapEdgeBroadcast,
    VioSample,
)
from .association import associate_detection
from .config import EstimatorConfig
from .graph import EstimatorGraph, KeyframeState, SwarmFrame, edge_id
from .initialization import initialize
from .observability import DOF3, NONE, ObservabilityReport, check_observability
from .outliers import RejectionReport, reject_outliers
from .propagation import Propagator
from .solver import Problem, SolveStats, solve

NOT_READY, READY = "not_ready", "initialized"


def _tk(t: float) -> float:
    return round(float(t), 6)


@dataclass
class VioRecord:
    pose: Pose4
    tilt: np.ndarray
    odometer: float


@dataclass
class EstimateRecord:
    t: float
    drone: int
    pose: Pose4
    status: str

    def to_json(self) -> str:
        p = self.pose
        return json.dumps({"t": self.t, "drone": self.drone, "x": p.x, "y": p.y, "z": p.z,
                           "yaw": p.yaw, "frame": "local-of-self", "status": self.status})


@dataclass
class SolveEvent:
    t: float
    kind: str  # "init" or "solve"
    stats: SolveStats
    rejected: int = 0


class SwarmEstimator:
    def __init__(self, self_id: int, config: EstimatorConfig | None = None,
                 frame_dt: float = 0.1, localizer: MapLocalizer | None = None):
        self.self_id = self_id
        self.config = config or EstimatorConfig()
        self.frame_dt = frame_dt
        self.localizer = localizer
        self.graph = EstimatorGraph(self_id, self.config)
        self.status = NOT_READY
        self.initialized: set = set()
        self.report: ObservabilityReport | None = None
        self.rejections = RejectionReport()
        self.propagator = Propagator(self.config.t_stale)
        self.counters = Counter()
        self.solves: list = []
        self._vio = defaultdict(dict)  # drone -> {t: VioRecord} on frame ticks
        self._uwb = defaultdict(list)  # t -> [DistanceEdge]
        self._det = defaultdict(list)  # t -> [DetectionEdge]
        self._pr_keys: set = set()  # (drone, t) of place-recognition keyframes
        self._pending_map: dict = {}
        self._last_kf: dict = {}  # drone -> (t, Pose4) at its last swarm keyframe
        self._last_frame_t: float | None = None
        self._logged: dict = {}  # drone -> VIO time of the last emitted record
        self._done_t = -math.inf  # newest processed frame tick
        self._prune_rng = np.random.default_rng([self.config.seed, 0x70])
        self._init_rng = np.random.default_rng([self.config.seed, 0x69, self_id])

    # ------------------------------------------------------------------
    # ingest

    def _late(self, t: float, what: str) -> bool:
        if t <= self._done_t + 1e-9:
            self.counters[f"late_{what}"] += 1
            return True
        return False

    def _on_frame_tick(self, t: float) -> bool:
        n = t / self.frame_dt
        return abs(n - round(n)) < 1e-6

    def ingest_vio(self, drone: int, t: float, pose: Pose4, tilt, odometer: float) -> None:
        t = _tk(t)
        tilt = np.asarray(tilt, float).reshape(3, 3)
        self.propagator.update_vio(drone, t, pose, tilt)
        if not self._on_frame_tick(t) or self._late(t, "vio"):
            return
        self._vio[drone][t] = VioRecord(pose, tilt, odometer)
        self.counters["vio"] += 1

    def ingest_distances(self, edges) -> None:
        for e in edges:
            if not self._late(e.t, "uwb"):
                self._uwb[_tk(e.t)].append(e)

    def ingest_detections(self, edges) -> None:
        for e in edges:
            if not self._late(e.t, "detection"):
                self._det[_tk(e.t)].append(e)

    def ingest_keyframe(self, kf: Keyframe) -> MapEdge | None:
        """Store a place-recognition keyframe; returns a new map edge if one closes."""
        t = _tk(kf.t)
        if not self._late(t, "keyframe"):
            self._pr_keys.add((kf.drone, t))
            self._vio[kf.drone].setdefault(t, VioRecord(kf.vio4, rotz(-kf.vio4.yaw) @ kf.vio6.rotation,
                                                         kf.odometer))
        if self.localizer is None:
            return None
        edge = self.localizer.process(kf if kf.drone == self.self_id else kf.as_remote())
        if edge is not None:
            self.ingest_map_edge(edge)
        return edge

    def ingest_map_edge(self, edge: MapEdge) -> None:
        if not self.config.use_map:
            return
        edge = dataclasses.replace(edge, t0=_tk(edge.t0), t1=_tk(edge.t1))
        key = (edge.i, edge.t0, edge.j, edge.t1)
        if max(edge.t0, edge.t1) <= self._done_t + 1e-9:
            if self.graph.add_map_edge(edge):
                self.counters["map_attached_late"] += 1
            else:
                self.counters["map_unattached"] += 1
            return
        self._pending_map.setdefault(key, edge)

    def ingest_envelope(self, env: Envelope) -> list:
        """Handle a delivered broadcast; returns payloads to re-broadcast."""
        p = env.payload
        out = []
        if isinstance(p, VioSample):
            self.ingest_vio(p.drone, p.t, p.pose, np.array(p.tilt), p.odometer)
        elif isinstance(p, DistanceSet):
            self.ingest_distances(p.edges)
        elif isinstance(p, DetectionMsg):
            self.ingest_detections(p.edges)
        elif isinstance(p, KeyframeBroadcast):
            edge = self.ingest_keyframe(p.keyframe)
            if edge is not None:
                out.append(MapEdgeBroadcast(edge))
        elif isinstance(p, MapEdgeBroadcast):
            self.ingest_map_edge(p.edge)
        else:
            raise TypeError(f"malformed payload {type(p).__name__}")
        return out

    # ------------------------------------------------------------------
    # frame processing

    def is_swarm_keyframe(self, t: float, vio_now: dict) -> bool:
        cfg = self.config
        if self._last_frame_t is None:
            return bool(vio_now)
        if t - self._last_frame_t >= cfg.t_kf - 1e-9:
            return True
        for d, rec in vio_now.items():
            last = self._last_kf.get(d)
            if last is None:
                return True
            moved = float(np.linalg.norm(rec.pose.translation - last[1].translation))
            if moved > cfg.d_kf or abs(wrap_angle(rec.pose.yaw - last[1].yaw)) > cfg.psi_kf:
                return True
            if (d, t) in self._pr_keys:
                return True
        return False

    def advance(self, now: float) -> list:
        """Process every frame tick up to ``now - lag``; returns solve events."""
        limit = now - self.config.lag + 1e-9
        ticks = sorted({t for d in self._vio.values() for t in d if t <= limit})
        events = []
        for t in ticks:
            if t <= self._done_t:
                continue
            events += self._process_tick(t)
        # measurements on ticks that did not become frames are discarded
        if math.isfinite(limit):
            floor_t = math.floor(limit / self.frame_dt + 1e-6) * self.frame_dt
            self._done_t = max(self._done_t, _tk(floor_t))
        for buf in (self._uwb, self._det):
            for t in [t for t in buf if t <= self._done_t]:
                del buf[t]
        for d in self._vio.values():
            for t in [t for t in d if t <= self._done_t]:
                del d[t]
        return events

    def _process_tick(self, t: float) -> list:
        vio_now = {d: buf[t] for d, buf in sorted(self._vio.items()) if t in buf}
        self._done_t = t
        if not self.is_swarm_keyframe(t, vio_now):
            return []
        frame = SwarmFrame(t)
        for d, rec in vio_now.items():
            frame.add_keyframe(KeyframeState(d, t, rec.pose, rec.tilt, rec.odometer))
            self._last_kf[d] = (t, rec.pose)
        self._last_frame_t = t
        self.graph.add_frame(frame)
        self.counters["frames"] += 1
        removed = self.graph.prune(self._prune_rng)
        self.counters["pruned"] += len(removed)
        self._seed_states(frame)
        if self.config.use_uwb:
            frame.distances = [e for e in self._uwb.pop(t, [])
                               if e.i in frame.keyframes and e.j in frame.keyframes]
        if self.config.use_detection:
            frame.detections = self._associate(frame, self._det.pop(t, []))
        for key in sorted(self._pending_map):
            e = self._pending_map[key]
            if max(e.t0, e.t1) <= t + 1e-9:
                del self._pending_map[key]
                if not self.graph.add_map_edge(e):
                    self.counters["map_unattached"] += 1
        return self._update(t)

    def _seed_states(self, frame: SwarmFrame) -> None:
        g = self.graph
        for d, kf in frame.keyframes.items():
            if d == self.self_id and self.status == NOT_READY:
                g.states[kf.key] = kf.vio4.as_array()
                continue
            if d not in self.initialized:
                continue
            prev = [k for k in g.keyframes_of(d) if k.t < frame.t and k.key in g.states]
            if prev:
                p = prev[-1]
                est = compose4(Pose4.from_array(g.states[p.key]), relative4(p.vio4, kf.vio4))
                g.states[kf.key] = est.as_array()

    def _associate(self, frame: SwarmFrame, dets: list) -> list:
        out = []
        for e in dets:
            if e.observer not in frame.keyframes:
                continue
            if self.status == NOT_READY or e.observer not in self.initialized:
                # before initialization the front end's label is all there is
                if e.target is not None and e.target in frame.keyframes:
                    out.append(e)
                continue
            obs = Pose4.from_array(self.graph.states[(e.observer, frame.t)])
            cands = {d: Pose4.from_array(self.graph.states[(d, frame.t)])
                     for d in frame.keyframes if d in self.initialized and d != e.observer}
            tgt = associate_detection(e, obs, cands, self.config.theta_assoc)
            if tgt is None:
                self.counters["det_unassociated"] += 1
                continue
            out.append(e if tgt == e.target else e.with_target(tgt))
        return out

    # ------------------------------------------------------------------
    # estimation

    def _edges_for(self, drones) -> list:
        drones = set(drones)
        return [e for e in self.graph.edges() if all(k[0] in drones for k in e.keys)]

    def _frozen(self) -> list:
        return [d for d in self.initialized if self.report and self.report.level(d) == DOF3]

    def _update(self, t: float) -> list:
        g = self.graph
        self.report = check_observability(g, self.config)
        drones = g.drones()
        events = []
        if self.status == NOT_READY:
            others = [d for d in drones if d != self.self_id]
            if others and not self.report.at_least_3dof(others):
                return events
            new = set(others)
        else:
            new = {d for d in drones if d not in self.initialized and self.report.level(d) != NONE}
        if new or self.status == NOT_READY:
            known = set(self.initialized) | {self.self_id}
            edges, _ = reject_outliers(self._edges_for(known | new), self.config)
            frozen = {d for d in known | new if self.report.level(d) == DOF3}
            res = initialize(g, g.states, known, new, frozen, edges, self.config, self._init_rng)
            if not res.ready:
                self.counters["init_failed"] += 1
                return events
            g.states.update(res.states)
            self.initialized = known | new
            self.status = READY
            self.counters["initializations"] += 1
            best = min(res.stats, key=lambda s: s.final_cost) if res.stats else SolveStats(converged=True)
            events.append(SolveEvent(t, "init", best))
        events.append(self._solve(t))
        self._publish()
        return events

    def _keys(self) -> list:
        g = self.graph
        return [(d, t) for t in g.times for d in sorted(g.frames[t].keyframes)
                if d in self.initialized and (d, t) in g.states]

    def _solve(self, t: float, rounds: int = 1) -> SolveEvent:
        """Robust solve, residual test at that solution, re-solve on the kept edges.

        With ``rounds`` > 1 the test and re-solve repeat until the kept set
        stops changing.
        """
        g = self.graph
        cfg = self.config
        keys = self._keys()
        keyset = set(keys)
        edges = [e for e in self._edges_for(self.initialized) if all(k in keyset for k in e.keys)]
        fixed = [g.anchor] if g.anchor in keyset else []
        frozen = [k for k in keys if k[0] in self._frozen()]
        x = np.array([g.states[k] for k in keys]) if keys else np.zeros((0, 4))

        def run(use, x):
            x_new, st = solve(Problem(use, keys, fixed, frozen, cfg.huber_delta), x,
                              cfg.max_iter, cfg.grad_tol, cfg.cost_tol,
                              step_tol=cfg.step_tol)
            return (x_new if np.all(np.isfinite(x_new)) else x), st

        as_states = lambda x: {k: x[n] for n, k in enumerate(keys)}
        base, report = reject_outliers(edges, cfg, as_states(x))
        x, stats = run(base, x)
        solved = {edge_id(e) for e in base}
        for _ in range(rounds):
            norms = Problem(base, keys, fixed, frozen, cfg.huber_delta).per_edge(x)
            kept, rep = reject_outliers(base, cfg, as_states(x), norms)
            ids = {edge_id(e) for e in kept}
            report = RejectionReport({**report.rejected, **rep.rejected})
            if ids == solved:
                break
            x, stats = run(kept, x)
            solved = ids
        self.rejections = report
        if not stats.converged:
            self.counters["diverged"] += 1
        for n, k in enumerate(keys):
            g.states[k] = x[n]
        ev = SolveEvent(t, "solve", stats, len(report))
        self.solves.append(ev)
        return ev

    def flush(self, rounds: int = 10) -> SolveEvent | None:
        """Process all buffered ticks and iterate rejection and solving to a fixed point."""
        self.advance(math.inf)
        if self.status != READY:
            return None
        ev = self._solve(self._done_t, rounds)
        self._publish()
        return ev

    def _publish(self) -> None:
        g = self.graph
        refs = {}
        for d in sorted(self.initialized):
            kfs = [k for k in g.keyframes_of(d) if k.key in g.states]
            if kfs:
                kf = kfs[-1]
                refs[d] = (Pose4.from_array(g.states[kf.key]), kf.vio4)
        self.propagator.publish(refs)

    # ------------------------------------------------------------------
    # outputs

    def estimate(self, key) -> Pose4 | None:
        s = self.graph.states.get(key)
        return None if s is None else Pose4.from_array(s)

    def keyframe_estimates(self) -> dict:
        """``{drone: [(t, Pose4), ...]}`` for every estimated keyframe."""
        out = defaultdict(list)
        for d, t in self._keys():
            out[d].append((t, Pose4.from_array(self.graph.states[(d, t)])))
        return dict(out)

    def relative_pose(self, other: int, t: float | None = None) -> Pose4 | None:
        """Pose of ``other`` in this drone's body frame, at frame ``t`` (default newest common)."""
        g = self.graph
        if t is None:
            common = [tt for tt in g.times if (self.self_id, tt) in g.states and (other, tt) in g.states]
            if not common:
                return None
            t = common[-1]
        a, b = g.states.get((self.self_id, t)), g.states.get((other, t))
        if a is None or b is None:
            return None
        return relative4(Pose4.from_array(a), Pose4.from_array(b))

    def propagate(self, now: float) -> list:
        """Estimate records for every initialized drone with a new VIO sample since the last call.

        A record is stamped with the time of the VIO sample it was built
        from, so other drones' poses lag by the network latency. Stale
        drones are reported at ``now`` with their held pose.
        """
        if self.status != READY:
            return []
        out = []
        for d, p in self.propagator.step(now).items():
            if p.stale:
                # held poses are reported at frame rate only
                if self._on_frame_tick(_tk(now)):
                    out.append(EstimateRecord(_tk(now), d, p.pose4, "stale"))
                continue
            t = _tk(p.t)
            if self._logged.get(d) == t:
                continue
            self._logged[d] = t
            status = "3dof" if self.report and self.report.level(d) == DOF3 else "ok"
            out.append(EstimateRecord(t, d, p.pose4, status))
        return out


__all__ = ["SwarmEstimator", "EstimateRecord", "SolveEvent", "NOT_READY", "READY"]

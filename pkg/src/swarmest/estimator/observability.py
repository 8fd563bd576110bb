r"""Qualitative observability of each drone's pose relative to the estimating drone.

For an ordered pair (k, i) the evidence is: did k move, did i move, is there
a range between them, did k detect i, did i detect k, and does a map edge
link them. The level follows these rules, first match wins:

========  ========  ========  =======  =======  ========  =====
motion k  motion i  distance  det k>i  det i>k  map edge  level
========  ========  ========  =======  =======  ========  =====
\-        \-        \-        \-       \-       yes       6dof
\-        \-        \-        yes      yes      \-        6dof
yes       no        \-        \-       yes      no        6dof
yes       yes       yes       \-       \-       \-        6dof
yes       no        yes       \-       no       no        3dof
========  ========  ========  =======  =======  ========  =====

anything else is ``none``. With more than two drones a drone is as
observable as the best chain of pairwise links back to the estimating
drone, where a chain is as weak as its weakest link.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..measurements import DetectionEdge, DistanceEdge, MapEdge

NONE, DOF3, DOF6 = "none", "3dof", "6dof"
_RANK = {NONE: 0, DOF3: 1, DOF6: 2}


@dataclass(frozen=True)
class PairEvidence:
    motion_k: bool = False
    motion_i: bool = False
    distance: bool = False
    det_ki: bool = False
    det_ik: bool = False
    map_edge: bool = False


def level_from_evidence(ev: PairEvidence) -> str:
    if ev.map_edge:
        return DOF6
    if ev.det_ki and ev.det_ik:
        return DOF6
    if ev.motion_k and not ev.motion_i and ev.det_ik:
        return DOF6
    if ev.motion_k and ev.motion_i and ev.distance:
        return DOF6
    if ev.motion_k and not ev.motion_i and ev.distance and not ev.det_ik:
        return DOF3
    return NONE


@dataclass
class ObservabilityReport:
    self_id: int
    levels: dict = field(default_factory=dict)  # drone -> level
    evidence: dict = field(default_factory=dict)  # (k, i) -> PairEvidence

    def level(self, drone: int) -> str:
        return self.levels.get(drone, NONE)

    def at_least_3dof(self, drones=None) -> bool:
        drones = self.levels if drones is None else drones
        return all(_RANK[self.level(d)] >= 1 for d in drones)


def motion_flags(graph, config) -> dict:
    """Per drone: VIO path length in the latest window exceeds ``d_mot``."""
    out = {}
    newest = graph.newest
    for d in graph.drones():
        kfs = [kf for kf in graph.keyframes_of(d) if kf.t >= newest - config.mot_window - 1e-9]
        out[d] = bool(kfs) and (kfs[-1].odometer - kfs[0].odometer) > config.d_mot
    return out


def collect_evidence(drones, motion: dict, edges) -> dict:
    """Pairwise evidence for every ordered pair of distinct drones."""
    dist, det, link = set(), set(), set()
    for e in edges:
        if isinstance(e, DistanceEdge):
            dist.add(frozenset((e.i, e.j)))
        elif isinstance(e, DetectionEdge) and e.target is not None:
            det.add((e.observer, e.target))
        elif isinstance(e, MapEdge) and e.i != e.j:
            link.add(frozenset((e.i, e.j)))
    out = {}
    for k in drones:
        for i in drones:
            if i == k:
                continue
            pair = frozenset((k, i))
            out[(k, i)] = PairEvidence(
                motion.get(k, False), motion.get(i, False), pair in dist,
                (k, i) in det, (i, k) in det, pair in link,
            )
    return out


def observability_levels(self_id: int, drones, evidence: dict) -> dict:
    """Widest-path levels from ``self_id`` over the pairwise level graph."""
    levels = {d: NONE for d in drones}
    levels[self_id] = DOF6
    changed = True
    while changed:
        changed = False
        for (k, i), ev in evidence.items():
            if _RANK[levels.get(k, NONE)] == 0:
                continue
            step = level_from_evidence(ev)
            cand = min(levels[k], step, key=_RANK.get)
            if _RANK[cand] > _RANK[levels[i]]:
                levels[i] = cand
                changed = True
    return levels


def check_observability(graph, config, extra_edges=()) -> ObservabilityReport:
    drones = graph.drones()
    if graph.self_id not in drones:
        drones = sorted(set(drones) | {graph.self_id})
    motion = motion_flags(graph, config) if len(graph) else {}
    edges = list(graph.distance_edges()) + list(graph.detection_edges()) + graph.all_map_edges()
    edges += list(extra_edges)
    evidence = collect_evidence(drones, motion, edges)
    levels = observability_levels(graph.self_id, drones, evidence)
    return ObservabilityReport(graph.self_id, levels, evidence)

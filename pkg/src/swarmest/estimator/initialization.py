"""Multi-start initialization of newly observable drones."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose4, compose4, inverse4, rotz
from ..measurements import DetectionEdge, DistanceEdge, predicted_body_position
from .config import EstimatorConfig
from .solver import Problem, solve


@dataclass
class InitResult:
    ready: bool
    states: dict = field(default_factory=dict)
    cost: float = math.inf
    restarts: int = 0
    stats: list = field(default_factory=list)


def max_observed_distance(edges, fallback: float) -> float:
    d = [e.d for e in edges if isinstance(e, DistanceEdge)]
    d += [1.0 / e.inv_depth for e in edges if isinstance(e, DetectionEdge)]
    return max(d) if d else fallback


def sample_offset(rng: np.random.Generator, radius: float) -> Pose4:
    """Uniform position in a ball of ``radius`` and uniform yaw."""
    v = rng.standard_normal(3)
    v *= radius * rng.random() ** (1.0 / 3.0) / max(np.linalg.norm(v), 1e-12)
    return Pose4(v[0], v[1], v[2], rng.uniform(-math.pi, math.pi))


def map_guided_offsets(graph, states: dict, new: set) -> dict:
    """Offsets of new drones implied directly by map edges to known drones."""
    out = {}
    for e in graph.all_map_edges():
        ka, kb = e.keys
        if e.i in new and e.j not in new and kb in states:
            p_i = compose4(Pose4.from_array(states[kb]), inverse4(e.rel))
            out.setdefault(e.i, compose4(p_i, inverse4(graph.keyframe(ka).vio4)))
        elif e.j in new and e.i not in new and ka in states:
            p_j = compose4(Pose4.from_array(states[ka]), e.rel)
            out.setdefault(e.j, compose4(p_j, inverse4(graph.keyframe(kb).vio4)))
    return out


def detection_guided_offsets(graph, states: dict, new: set, edges, n_yaw: int = 4) -> list:
    """Start offsets that place new drones where a detection says they are.

    A detection fixes the relative position but not the yaw of the new
    drone, so each candidate is repeated over ``n_yaw`` evenly spaced yaws.
    """
    anchors = {}
    for e in edges:
        if not isinstance(e, DetectionEdge) or e.target is None:
            continue
        ka, kb = e.keys
        w = e.cam_pos + e.direction / e.inv_depth
        if e.target in new and e.observer not in new and ka in states:
            pk = Pose4.from_array(states[ka])
            p = pk.translation + rotz(pk.yaw) @ w
            anchors.setdefault(e.target, ("seen", p, kb))
        elif e.observer in new and e.target not in new and kb in states:
            anchors.setdefault(e.observer, ("sees", Pose4.from_array(states[kb]).translation, w, ka))
    out = []
    for n in range(n_yaw if anchors else 0):
        yaw = -math.pi + 2.0 * math.pi * n / n_yaw
        offsets = {}
        for d, a in anchors.items():
            if a[0] == "seen":
                pose = Pose4(*a[1], yaw)
                key = a[2]
            else:
                pose = Pose4(*(a[1] - rotz(yaw) @ a[2]), yaw)
                key = a[3]
            offsets[d] = compose4(pose, inverse4(graph.keyframe(key).vio4))
        out.append(offsets)
    return out


def flipped_detections(edges, states: dict) -> int:
    """Detections whose predicted bearing points away from the measured one.

    The tangent-plane residual vanishes for the antipodal bearing too, so a
    mirrored solution can have the same cost as the true one.
    """
    n = 0
    for e in edges:
        if not isinstance(e, DetectionEdge) or e.target is None:
            continue
        ka, kb = e.keys
        if ka not in states or kb not in states:
            continue
        v = predicted_body_position(Pose4.from_array(states[ka]), Pose4.from_array(states[kb])) - e.cam_pos
        if float(e.direction @ v) < 0.0:
            n += 1
    return n


def initialize(graph, states: dict, known: set, new: set, frozen_yaw_drones: set,
               edges: list, config: EstimatorConfig, rng: np.random.Generator) -> InitResult:
    """Solve from several random starts for the drones in ``new``.

    ``known`` drones keep their current states as the starting point. Each
    start places every new drone's VIO trajectory at a random offset; extra
    starts use offsets implied by map edges and by detections when present. The
    solution with the fewest flipped detections wins, then the lowest cost.
    """
    drones = set(known) | set(new)
    keys = [(d, t) for t in graph.times for d in sorted(graph.frames[t].keyframes) if d in drones]
    use = [e for e in edges if all(k[0] in drones for k in e.keys)]
    if not new:
        return InitResult(True, dict(states))
    radius = max_observed_distance(use, config.l_max)
    starts = []
    for _ in range(config.n_init):
        starts.append({d: sample_offset(rng, radius) for d in sorted(new)})
    guided = map_guided_offsets(graph, states, set(new))
    if guided:
        start = {d: guided.get(d) or sample_offset(rng, radius) for d in sorted(new)}
        starts.append(start)
    for guided in detection_guided_offsets(graph, states, set(new), use):
        starts.append({d: guided.get(d) or sample_offset(rng, radius) for d in sorted(new)})
    frozen = [k for k in keys if k[0] in frozen_yaw_drones]
    fixed = [graph.anchor] if graph.anchor in set(keys) else []
    problem = Problem(use, keys, fixed=fixed, frozen_yaw=frozen, huber_delta=config.huber_delta)
    best = InitResult(False, restarts=len(starts))
    best_rank = (math.inf, math.inf)
    for offsets in starts:
        x0 = np.empty((len(keys), 4))
        for n, k in enumerate(keys):
            if k[0] in offsets:
                x0[n] = compose4(offsets[k[0]], graph.keyframe(k).vio4).as_array()
            else:
                x0[n] = states[k]
        x, st = solve(problem, x0, config.max_iter, config.grad_tol, config.cost_tol,
                      step_tol=config.step_tol)
        best.stats.append(st)
        if not (np.all(np.isfinite(x)) and np.isfinite(st.final_cost)):
            continue
        sol = {k: x[n] for n, k in enumerate(keys)}
        rank = (flipped_detections(use, sol), st.final_cost)
        if rank < best_rank:
            best_rank = rank
            best.cost = st.final_cost
            best.states = sol
            best.ready = True
    return best


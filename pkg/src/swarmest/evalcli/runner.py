"""Run a scenario: simulate, replay through the network into per-drone estimators, evaluate."""

from __future__ import annotations

import dataclasses
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..estimator import EstimatorConfig, SwarmEstimator, edge_id
from ..geometry import Pose4, compose4, relative4
from ..maploc import MapLocalizer
from ..netsim import (
    BroadcastNetwork,
    ChannelConfig,
    DetectionMsg,
    DistanceSet,
    Envelope,
    KeyframeBroadcast,
    MapEdgeBroadcast,
    VioSample,
)
from ..simworld import SimWorld, build_world
from ..simworld.logio import write_ground_truth, write_injection_log, write_measurement_log
from ..simworld.scenario import Scenario
from .metrics import MetricReport, ate_entry, drift_entry, re_entry, trajectory_length

ABLATIONS = ("none", "no-uwb", "no-detection", "no-map")


class DivergenceError(RuntimeError):
    pass


@dataclass
class RunOptions:
    ablate: str = "none"
    loss_uwb: float | None = None
    loss_vio: float | None = None
    m_max: int | None = None
    pruning: str | None = None
    estimator: dict = field(default_factory=dict)  # extra EstimatorConfig overrides


@dataclass
class RunResult:
    world: SimWorld
    estimators: dict  # drone -> SwarmEstimator
    estimates: dict  # observer -> [EstimateRecord]
    report: MetricReport
    network: BroadcastNetwork
    gross_loops: set

    @property
    def diverged(self) -> bool:
        return self.report.solver.get("diverged", 0) > 0


def estimator_config(scenario: Scenario, opts: RunOptions) -> EstimatorConfig:
    data = dict(scenario.estimator)
    data.update(opts.estimator)
    data.setdefault("seed", scenario.seed)
    cfg = EstimatorConfig.from_dict(data)
    cfg = cfg.replace(use_uwb=cfg.use_uwb and scenario.sensors.uwb,
                      use_detection=cfg.use_detection and scenario.sensors.detection,
                      use_map=cfg.use_map and scenario.sensors.map)
    if opts.ablate not in ABLATIONS:
        raise ValueError(f"unknown ablation {opts.ablate!r}; choose from {ABLATIONS}")
    if opts.ablate == "no-uwb":
        cfg = cfg.replace(use_uwb=False)
    elif opts.ablate == "no-detection":
        cfg = cfg.replace(use_detection=False)
    elif opts.ablate == "no-map":
        cfg = cfg.replace(use_map=False)
    if opts.m_max is not None:
        cfg = cfg.replace(m_max=opts.m_max)
    if opts.pruning is not None:
        cfg = cfg.replace(pruning=opts.pruning)
    return cfg


def channel_config(scenario: Scenario, opts: RunOptions) -> ChannelConfig:
    n = scenario.network
    drop = {"vio": n.loss_vio, "uwb": n.loss_uwb, "detection": n.loss_detection,
            "keyframe": n.loss_keyframe, "map": n.loss_map}
    if opts.loss_uwb is not None:
        drop["uwb"] = opts.loss_uwb
    if opts.loss_vio is not None:
        drop["vio"] = opts.loss_vio
    return ChannelConfig(drop, n.latency, n.jitter, n.reorder, scenario.seed)


def _by_tick(meas, edges, owner) -> dict:
    out = defaultdict(lambda: defaultdict(list))
    for e in edges:
        out[meas.tick_of(e.t)][owner(e)].append(e)
    return out


def replay(world: SimWorld, cfg: EstimatorConfig, channel: ChannelConfig, packet_log=None) -> tuple:
    """Drive one estimator per drone through the broadcast network.

    Returns ``(estimators, estimate logs, network, oracle)``. Each drone
    feeds its own measurements straight into its estimator and broadcasts
    them; VIO goes out at frame rate, the estimator's own VIO every tick.
    Estimates are propagated every tick, so a drone's own pose is logged
    at the VIO rate.
    """
    meas = world.meas
    s = world.scenario
    frame_dt = 1.0 / s.rates.frame_hz
    oracle = world.make_oracle()
    net = BroadcastNetwork(channel, packet_log)
    ests = {}
    for d in sorted(meas.vio):
        loc = MapLocalizer(d, oracle) if cfg.use_map else None
        ests[d] = SwarmEstimator(d, cfg, frame_dt, loc)
        net.register(d)
    uwb = _by_tick(meas, meas.uwb if cfg.use_uwb else [], lambda e: e.i)
    det = _by_tick(meas, meas.detections if cfg.use_detection else [], lambda e: e.observer)
    kfs = defaultdict(dict)
    for d, lst in meas.keyframes.items():
        for kf in lst:
            kfs[meas.tick_of(kf.t)][d] = kf
    logs = {d: [] for d in ests}
    stride = meas.frame_stride

    def send(sender, now, payload):
        net.broadcast(Envelope(sender, now, payload))

    for k in range(meas.n_ticks):
        now = meas.tick_time(k)
        frame = k % stride == 0
        for d, est in ests.items():
            v = meas.vio[d]
            if not (v.index[0] <= k <= v.index[-1]):
                continue
            r = v.row(k)
            pose, tilt, odo = v.pose4(k), v.tilt[r], float(v.odometer[r])
            est.ingest_vio(d, now, pose, tilt, odo)
            if frame:
                send(d, now, VioSample(d, now, pose, tuple(tilt.ravel().tolist()), odo))
            if uwb[k].get(d):
                es = tuple(uwb[k][d])
                est.ingest_distances(es)
                send(d, now, DistanceSet(d, now, es))
            if det[k].get(d):
                es = tuple(det[k][d])
                est.ingest_detections(es)
                send(d, now, DetectionMsg(d, now, es))
            kf = kfs[k].get(d)
            if kf is not None:
                send(d, now, KeyframeBroadcast(kf))
                edge = est.ingest_keyframe(kf)
                if edge is not None:
                    send(d, now, MapEdgeBroadcast(edge))
        for rcv, envs in net.step(now).items():
            for env in envs:
                for p in ests[rcv].ingest_envelope(env):
                    send(rcv, now, p)
        for est in ests.values():
            est.advance(now)
        for d, est in ests.items():
            logs[d].extend(est.propagate(now))
    end = meas.tick_time(meas.n_ticks - 1) + 1.0
    for rcv, envs in net.step(end).items():
        for env in envs:
            ests[rcv].ingest_envelope(env)
    for est in ests.values():
        est.flush()
    return ests, logs, net, oracle


# ---------------------------------------------------------------------------
# evaluation


def _series(rows) -> np.ndarray:
    return np.array(rows, dtype=float).reshape(-1, 5)


def _row(t, p: Pose4) -> list:
    return [t, p.x, p.y, p.z, p.yaw]


def truth_relative(world: SimWorld, k: int, i: int, ticks) -> np.ndarray:
    gk, gi = world.gt.drones[k], world.gt.drones[i]
    return _series([_row(world.meas.tick_time(n), relative4(gk.pose4(n), gi.pose4(n)))
                    for n in ticks if gk.active(n) and gi.active(n)])


def truth_in_observer(world: SimWorld, k: int, i: int, ticks) -> np.ndarray:
    gi = world.gt.drones[i]
    return _series([_row(world.meas.tick_time(n), world.truth_in_frame(k, i, n))
                    for n in ticks if gi.active(n) and world.gt.drones[k].active(n)])


def _on_grid(t: float, dt: float | None) -> bool:
    if dt is None:
        return True
    n = t / dt
    return abs(n - round(n)) < 1e-6


def estimate_series(records, drone: int, dt: float | None = None) -> np.ndarray:
    """Estimates of ``drone``; with ``dt``, only those stamped on that time grid."""
    return _series([_row(r.t, r.pose) for r in records if r.drone == drone and _on_grid(r.t, dt)])


def estimated_relative(records, k: int, i: int, dt: float | None = None) -> np.ndarray:
    by_t = defaultdict(dict)
    for r in records:
        if not _on_grid(r.t, dt):
            continue
        by_t[r.t][r.drone] = r.pose
    rows = [_row(t, relative4(p[k], p[i])) for t, p in sorted(by_t.items()) if k in p and i in p]
    return _series(rows)


def aligned_vio(world: SimWorld, k: int, i: int, ticks) -> np.ndarray:
    """Relative pose of ``i`` from ``k`` using only VIO aligned to truth at each start."""
    gk, gi = world.gt.drones[k], world.gt.drones[i]
    vk, vi = world.meas.vio[k], world.meas.vio[i]
    offset = relative4(gk.pose4(gk.first), gi.pose4(gi.first))
    rows = []
    for n in ticks:
        if vk.index[0] <= n <= vk.index[-1] and vi.index[0] <= n <= vi.index[-1]:
            rows.append(_row(world.meas.tick_time(n), relative4(vk.pose4(n), compose4(offset, vi.pose4(n)))))
    return _series(rows)


def vio_series(world: SimWorld, d: int, ticks) -> np.ndarray:
    v = world.meas.vio[d]
    return _series([_row(world.meas.tick_time(n), v.pose4(n)) for n in ticks
                    if v.index[0] <= n <= v.index[-1]])


def injection_audit(world: SimWorld, ests: dict, gross_loops: set) -> dict:
    """Fraction of injected outliers that reached a final graph and were rejected there."""
    injected_uwb = {("uwb", i, j, t) for i, j, t in world.uwb_injected}
    injected_map = {("map", i, round(t0, 6), j, round(t1, 6)) for i, t0, j, t1 in gross_loops}
    present = rejected = 0
    for est in ests.values():
        ids = {edge_id(e) for e in est.graph.distance_edges() + est.graph.all_map_edges()}
        hit = ids & (injected_uwb | injected_map)
        present += len(hit)
        rejected += sum(1 for h in hit if h in est.rejections)
    return {
        "injected_uwb": len(injected_uwb), "injected_map": len(injected_map),
        "in_graph": present, "rejected": rejected,
        "rejected_fraction": (rejected / present) if present else None,
    }


def evaluate(world: SimWorld, ests: dict, logs: dict, net: BroadcastNetwork, gross_loops: set,
             mode: str) -> MetricReport:
    s = world.scenario
    dt = 1.0 / s.rates.frame_hz
    ticks = list(range(0, world.meas.n_ticks, world.meas.frame_stride))
    drones = sorted(ests)
    rep = MetricReport(s.name, s.seed, mode, drones)
    base_re = {}
    for k in drones:
        for i in drones:
            if i == k:
                continue
            pair = f"{k}-{i}"
            gt_rel = truth_relative(world, k, i, ticks)
            rep.re[pair] = re_entry(estimated_relative(logs[k], k, i, dt), gt_rel, dt) if len(gt_rel) else None
            base_re[pair] = re_entry(aligned_vio(world, k, i, ticks), gt_rel, dt) if len(gt_rel) else None
        for i in drones:
            gt_i = truth_in_observer(world, k, i, ticks)
            est_i = estimate_series(logs[k], i, dt)
            rep.ate[f"{k}/{i}"] = ate_entry(est_i, gt_i, dt) if len(gt_i) else {"pos": None, "yaw": None}
    base_drift = {}
    for d in drones:
        gt_d = truth_in_observer(world, d, d, ticks)
        rep.length[str(d)] = trajectory_length(gt_d) if len(gt_d) else 0.0
        rep.drift[str(d)] = drift_entry(estimate_series(logs[d], d, dt), gt_d, dt) if len(gt_d) else None
        base_drift[str(d)] = drift_entry(vio_series(world, d, ticks), gt_d, dt) if len(gt_d) else None
        rep.status[str(d)] = ests[d].status
    rep.baseline = {"re": base_re, "drift": base_drift}
    solves = [ev for est in ests.values() for ev in est.solves]
    rep.solver = {
        "solves": len(solves),
        "diverged": sum(1 for ev in solves if not ev.stats.converged),
        "max_iterations": max((ev.stats.iterations for ev in solves), default=0),
        "initialized": {str(d): sorted(ests[d].initialized) for d in drones},
    }
    rep.outliers = injection_audit(world, ests, gross_loops)
    rep.outliers["rejected_in_final"] = {str(d): dict(sorted(ests[d].rejections.reasons().items()))
                                         for d in drones}
    rep.network = net.stats()
    return rep


# ---------------------------------------------------------------------------
# outputs


def write_tum(path, series: np.ndarray) -> None:
    """``t x y z qx qy qz qw`` with yaw-only orientation."""
    with open(path, "w") as fh:
        for t, x, y, z, yaw in series:
            fh.write(f"{t:.6f} {x:.9f} {y:.9f} {z:.9f} 0 0 {math.sin(yaw / 2):.9f} {math.cos(yaw / 2):.9f}\n")


def write_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w = result.world
    write_measurement_log(w.meas, out / "measurements.jsonl")
    write_ground_truth(w, out / "ground_truth.jsonl")
    write_injection_log(w, result.gross_loops, out / "injections.jsonl")
    for k, recs in result.estimates.items():
        with open(out / f"estimates_{k}.jsonl", "w") as fh:
            for r in recs:
                fh.write(r.to_json() + "\n")
        for i in sorted(result.estimators):
            ser = estimate_series(recs, i)
            if len(ser):
                write_tum(out / f"traj_{k}_{i}.tum", ser)
    with open(out / "rejections.jsonl", "w") as fh:
        for d, est in sorted(result.estimators.items()):
            for eid, reason in sorted(est.rejections.rejected.items(), key=lambda kv: repr(kv[0])):
                fh.write(json.dumps({"drone": d, "edge": list(eid), "reason": reason}) + "\n")
    (out / "metrics.json").write_text(result.report.to_json())
    return out


def run_world(world: SimWorld, opts: RunOptions | None = None, out_dir=None) -> RunResult:
    opts = opts or RunOptions()
    cfg = estimator_config(world.scenario, opts)
    channel = channel_config(world.scenario, opts)
    packet_log = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        packet_log = open(Path(out_dir) / "packets.jsonl", "w")
    try:
        ests, logs, net, oracle = replay(world, cfg, channel, packet_log)
    finally:
        if packet_log is not None:
            packet_log.close()
    report = evaluate(world, ests, logs, net, oracle.gross, opts.ablate)
    result = RunResult(world, ests, logs, report, net, set(oracle.gross))
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def run_scenario(scenario: Scenario, opts: RunOptions | None = None, out_dir=None) -> RunResult:
    return run_world(build_world(scenario), opts, out_dir)


def run_ablations(scenario: Scenario, opts: RunOptions | None = None) -> dict:
    """Full system plus one run per removed edge type: ``{mode: MetricReport}``."""
    opts = opts or RunOptions()
    world = build_world(scenario)
    return {mode: run_world(world, dataclasses.replace(opts, ablate=mode)).report for mode in ABLATIONS}


def compare_pruning(scenario: Scenario, opts: RunOptions | None = None) -> dict:
    opts = opts or RunOptions()
    world = build_world(scenario)
    return {p: run_world(world, dataclasses.replace(opts, pruning=p)).report for p in ("random", "fifo")}


__all__ = ["ABLATIONS", "DivergenceError", "RunOptions", "RunResult", "compare_pruning",
           "estimator_config", "evaluate", "replay", "run_ablations", "run_scenario", "run_world",
           "write_outputs", "write_tum"]

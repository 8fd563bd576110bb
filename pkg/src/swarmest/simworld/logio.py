"""Line-delimited JSON measurement and ground-truth logs.

One record per line, keys in a fixed order, records sorted by
``(t, type, ids)``. The first line is a header carrying the scenario so a
log can be replayed without the original config file.

Record types::

    header    scenario
    vio       t drone pose[4] tilt[9] odom
    uwb       t i j d sigma
    det       t observer target dir[3] inv_depth cam_pos[3] sigma_dir sigma_inv_depth
    keyframe  t drone vio4 vio6_rot vio6_pos descriptors odometer origin [truth_*]
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..maploc import keyframe_from_record, keyframe_to_record
from ..measurements import DetectionEdge, DistanceEdge
from .scenario import scenario_from_dict
from .sensors import VioStream
from .world import Measurements, SimWorld

_ORDER = {"vio": 0, "uwb": 1, "det": 2, "keyframe": 3}


def _dumps(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def _records(meas: Measurements):
    recs = []
    for drone in sorted(meas.vio):
        v = meas.vio[drone]
        for r in range(len(v.index)):
            recs.append(((float(v.t[r]), 0, drone), {
                "type": "vio", "t": round(float(v.t[r]), 6), "drone": drone,
                "pose": v.pose[r].tolist(), "tilt": v.tilt[r].ravel().tolist(),
                "odom": float(v.odometer[r]),
            }))
    for e in meas.uwb:
        recs.append(((e.t, 1, e.i, e.j), {
            "type": "uwb", "t": e.t, "i": e.i, "j": e.j, "d": e.d, "sigma": e.sigma,
        }))
    for n, e in enumerate(meas.detections):
        recs.append(((e.t, 2, e.observer, n), {
            "type": "det", "t": e.t, "observer": e.observer, "target": e.target,
            "dir": e.direction.tolist(), "inv_depth": e.inv_depth,
            "cam_pos": e.cam_pos.tolist(), "sigma_dir": e.sigma_dir,
            "sigma_inv_depth": e.sigma_inv_depth,
        }))
    for drone in sorted(meas.keyframes):
        for kf in meas.keyframes[drone]:
            rec = {"type": "keyframe"}
            rec.update(keyframe_to_record(kf))
            recs.append(((kf.t, 3, drone), rec))
    recs.sort(key=lambda r: r[0])
    return [r for _, r in recs]


def write_measurement_log(meas: Measurements, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(_dumps({"type": "header", "scenario": meas.scenario.to_dict()}) + "\n")
        for rec in _records(meas):
            fh.write(_dumps(rec) + "\n")
    return path


def read_measurement_log(path) -> Measurements:
    """Rebuild :class:`Measurements` from a log written by :func:`write_measurement_log`."""
    vio_rows: dict = {}
    uwb, det, kfs = [], [], {}
    scenario = None
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("type")
            if kind == "header":
                scenario = scenario_from_dict(rec["scenario"])
            elif kind == "vio":
                vio_rows.setdefault(rec["drone"], []).append(rec)
            elif kind == "uwb":
                uwb.append(DistanceEdge(rec["i"], rec["j"], rec["t"], rec["d"], rec["sigma"]))
            elif kind == "det":
                det.append(DetectionEdge(rec["observer"], rec["target"], rec["t"],
                                         np.array(rec["dir"]), rec["inv_depth"], np.eye(3),
                                         np.array(rec["cam_pos"]), rec["sigma_dir"],
                                         rec["sigma_inv_depth"]))
            elif kind == "keyframe":
                kfs.setdefault(rec["drone"], []).append(keyframe_from_record(rec))
            else:
                raise ValueError(f"{path}: unknown record type {kind!r}")
    if scenario is None:
        raise ValueError(f"{path}: missing header record")
    dt = 1.0 / scenario.rates.vio_hz
    vio = {}
    for drone, rows in sorted(vio_rows.items()):
        t = np.array([r["t"] for r in rows])
        idx = np.rint(t / dt).astype(int)
        vio[drone] = VioStream(
            drone, idx, t, np.array([r["pose"] for r in rows]),
            np.array([r["tilt"] for r in rows]).reshape(-1, 3, 3),
            np.array([r["odom"] for r in rows]),
        )
    for d in vio:
        kfs.setdefault(d, [])
    return Measurements(scenario, vio, uwb, det, kfs, dt)


def write_ground_truth(world: SimWorld, path) -> Path:
    """Per-tick true 4-DoF poses of every active drone (world frame)."""
    path = Path(path)
    gt = world.gt
    with open(path, "w") as fh:
        for k in range(len(gt.t)):
            for drone in sorted(gt.drones):
                d = gt.drones[drone]
                if d.active(k):
                    fh.write(_dumps({"t": round(float(gt.t[k]), 6), "drone": drone,
                                     "pose": [*d.pos[k].tolist(), float(d.yaw[k])]}) + "\n")
    return path


def read_ground_truth(path) -> dict:
    """``{drone: (t (N,), pose (N, 4))}`` from :func:`write_ground_truth` output."""
    rows: dict = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                rows.setdefault(rec["drone"], []).append((rec["t"], rec["pose"]))
    return {d: (np.array([r[0] for r in v]), np.array([r[1] for r in v])) for d, v in rows.items()}


def write_injection_log(world: SimWorld, gross_loops, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for i, j, t in sorted(world.uwb_injected):
            fh.write(_dumps({"type": "uwb_outlier", "t": t, "i": i, "j": j}) + "\n")
        for obs, t, true_t, rep in sorted(world.mislabeled, key=lambda r: (r[1], r[0], r[2])):
            fh.write(_dumps({"type": "mislabel", "t": t, "observer": obs, "target": true_t,
                             "reported": rep}) + "\n")
        for i, t0, j, t1 in sorted(gross_loops):
            fh.write(_dumps({"type": "loop_outlier", "i": i, "t0": t0, "j": j, "t1": t1}) + "\n")
    return path

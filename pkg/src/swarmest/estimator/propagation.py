"""High-rate forward propagation of optimized poses with the latest VIO."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..geometry import Pose4, Pose6, compose4, inverse4, lift_to_6dof, rotz


def propagate(opt: Pose4, vio_ref: Pose4, vio_now: Pose4) -> Pose4:
    """``opt * inverse(vio_ref) * vio_now``."""
    return compose4(compose4(opt, inverse4(vio_ref)), vio_now)


@dataclass
class Propagated:
    pose4: Pose4
    pose6: Pose6
    stale: bool
    t: float = 0.0  # time of the VIO sample the pose was propagated with


@dataclass
class _Ref:
    opt: np.ndarray
    vio: np.ndarray


@dataclass
class Propagator:
    """Serves propagated estimates from the last published solution.

    :meth:`publish` swaps in a new snapshot of per-drone references
    (optimized pose and the VIO pose it belongs to); :meth:`update_vio`
    records the newest VIO sample. A drone whose VIO is older than
    ``t_stale`` keeps its last output and is flagged stale.
    """

    t_stale: float = 0.5
    refs: dict = field(default_factory=dict)  # drone -> _Ref
    vio: dict = field(default_factory=dict)  # drone -> (t, pose array, tilt)
    last: dict = field(default_factory=dict)  # drone -> Propagated

    def publish(self, refs: dict) -> None:
        """``refs``: ``{drone: (opt Pose4, vio Pose4)}``."""
        self.refs = {d: _Ref(o.as_array(), v.as_array()) for d, (o, v) in refs.items()}

    def update_vio(self, drone: int, t: float, pose: Pose4, tilt: np.ndarray) -> None:
        prev = self.vio.get(drone)
        if prev is None or t >= prev[0]:
            self.vio[drone] = (t, pose.as_array(), tilt)

    def step(self, now: float) -> dict:
        """Propagate every drone with a reference; returns ``{drone: Propagated}``."""
        drones = [d for d in sorted(self.refs) if d in self.vio]
        if not drones:
            return {}
        opt = np.array([self.refs[d].opt for d in drones])
        ref = np.array([self.refs[d].vio for d in drones])
        cur = np.array([self.vio[d][1] for d in drones])
        out_arr = kernels.propagate_batch(opt, ref, cur)
        out = {}
        for n, d in enumerate(drones):
            t_vio, vpose, tilt = self.vio[d]
            if now - t_vio > self.t_stale and d in self.last:
                prev = self.last[d]
                out[d] = Propagated(prev.pose4, prev.pose6, True, prev.t)
                continue
            p4 = Pose4.from_array(out_arr[n])
            vio4 = Pose4.from_array(vpose)
            p6 = lift_to_6dof(p4, Pose6(rotz(vio4.yaw) @ tilt, vio4.translation), vio4)
            out[d] = Propagated(p4, p6, now - t_vio > self.t_stale, t_vio)
        self.last.update(out)
        return out

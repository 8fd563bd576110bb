"""Consistency checks that drop suspicious edges before a solve."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..measurements import DistanceEdge, MapEdge, OdometryEdge
from .config import EstimatorConfig
from .graph import edge_id


@dataclass
class RejectionReport:
    rejected: dict = field(default_factory=dict)  # edge id -> reason

    def reasons(self) -> Counter:
        return Counter(self.rejected.values())

    def __contains__(self, eid) -> bool:
        return eid in self.rejected

    def __len__(self):
        return len(self.rejected)


def reject_outliers(edges, config: EstimatorConfig, states: dict | None = None,
                    residual_norms=None) -> tuple[list, RejectionReport]:
    """Filter ``edges``; returns ``(kept, report)``.

    Checks, in order: range pairs ``i->j`` / ``j->i`` at one instant that
    disagree by more than ``tau_bidir`` (both dropped); map edges longer
    than ``l_max``; and, when ``states`` are given, ranges between drones
    whose estimated heights differ by more than ``h_max``. When
    ``residual_norms`` (whitened, aligned with ``edges``) are given, any
    non-odometry edge above ``tau_res`` is dropped too.
    """
    report = RejectionReport()
    by_pair = {}
    for e in edges:
        if isinstance(e, DistanceEdge):
            by_pair[(e.i, e.j, e.t)] = e
    for n, e in enumerate(edges):
        reason = None
        if isinstance(e, DistanceEdge):
            back = by_pair.get((e.j, e.i, e.t))
            if back is not None and abs(e.d - back.d) > config.tau_bidir:
                reason = "bidirectional"
            elif states is not None:
                si, sj = states.get(e.keys[0]), states.get(e.keys[1])
                if si is not None and sj is not None and abs(si[2] - sj[2]) > config.h_max:
                    reason = "height"
        elif isinstance(e, MapEdge):
            if math.hypot(e.rel.x, e.rel.y, e.rel.z) > config.l_max:
                reason = "length"
        if (reason is None and residual_norms is not None and not isinstance(e, OdometryEdge)
                and residual_norms[n] > config.tau_res):
            reason = "residual"
        if reason is not None:
            report.rejected[edge_id(e)] = reason
    kept = [e for e in edges if edge_id(e) not in report.rejected]
    return kept, report


def residual_norms(problem, x) -> np.ndarray:
    return problem.per_edge(x)

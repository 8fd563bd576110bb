"""Nearest-neighbour association of detections to drones."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import Pose4, relative4
from ..measurements import DetectionEdge


def associate_detection(det: DetectionEdge, observer: Pose4, candidates: dict,
                        theta: float) -> int | None:
    """Drone whose predicted bearing is closest to ``det.direction``.

    ``candidates`` maps drone id to its estimated pose at the detection
    time. The best candidate is accepted only below ``theta``; bearings
    within 1e-9 rad are ranked by range mismatch.
    """
    best = None
    for drone in sorted(candidates):
        if drone == det.observer:
            continue
        v = relative4(observer, candidates[drone]).translation - det.cam_pos
        rng = float(np.linalg.norm(v))
        if rng == 0.0:
            continue
        ang = math.acos(max(-1.0, min(1.0, float(det.direction @ v) / rng)))
        mismatch = abs(rng - 1.0 / det.inv_depth)
        score = (ang, mismatch)
        if best is None or ang < best[0][0] - 1e-9 or (
                abs(ang - best[0][0]) <= 1e-9 and mismatch < best[0][1]):
            best = (score, drone)
    if best is None or best[0][0] >= theta:
        return None
    return best[1]

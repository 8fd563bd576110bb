"""Batch residual/Jacobian kernels used by the solver.

The compiled extension is used when it was built; otherwise the numpy
implementation is loaded. Set ``SWARMEST_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _kernels_py

if os.environ.get("SWARMEST_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

pose_pair_batch = _impl.pose_pair_batch
distance_batch = _impl.distance_batch
detection_batch = _impl.detection_batch
propagate_batch = _impl.propagate_batch

__all__ = [
    "BACKEND",
    "pose_pair_batch",
    "distance_batch",
    "detection_batch",
    "propagate_batch",
]

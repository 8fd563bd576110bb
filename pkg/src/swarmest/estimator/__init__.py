"""Decentralized swarm pose-graph estimator."""

from .config import EstimatorConfig
from .core import NOT_READY, READY, EstimateRecord, SolveEvent, SwarmEstimator
from .graph import EstimatorGraph, KeyframeState, SwarmFrame, edge_id
from .observability import DOF3, DOF6, NONE, ObservabilityReport, check_observability
from .outliers import RejectionReport, reject_outliers
from .propagation import Propagator, propagate
from .solver import Problem, SolveStats, solve

__all__ = [
    "EstimatorConfig", "SwarmEstimator", "EstimateRecord", "SolveEvent", "NOT_READY", "READY",
    "EstimatorGraph", "KeyframeState", "SwarmFrame", "edge_id",
    "DOF3", "DOF6", "NONE", "ObservabilityReport", "check_observability",
    "RejectionReport", "reject_outliers", "Propagator", "propagate",
    "Problem", "SolveStats", "solve",
]

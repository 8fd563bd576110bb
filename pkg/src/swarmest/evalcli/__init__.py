"""Scenario runner, ablation harness, metrics and command line interface."""

from .metrics import MetricError, MetricReport, compute_ate, compute_drift, compute_re
from .runner import RunOptions, RunResult, compare_pruning, run_ablations, run_scenario, run_world

__all__ = [
    "MetricError", "MetricReport", "RunOptions", "RunResult", "compare_pruning", "compute_ate",
    "compute_drift", "compute_re", "run_ablations", "run_scenario", "run_world",
]

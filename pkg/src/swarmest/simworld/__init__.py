"""Simulated world: trajectories, drifting VIO, UWB, detections and keyframes."""

from .logio import read_measurement_log, write_measurement_log
from .scenario import ConfigError, Scenario, load_scenario, scenario_from_dict
from .sensors import (
    DescriptorField,
    RelativePoseOracle,
    VioStream,
    make_keyframe,
    simulate_detections,
    simulate_uwb,
    simulate_vio,
)
from .trajectory import GroundTruth, generate_trajectory
from .world import Measurements, SimWorld, build_world

__all__ = [
    "ConfigError", "DescriptorField", "GroundTruth", "Measurements", "RelativePoseOracle",
    "Scenario", "SimWorld", "VioStream", "build_world", "generate_trajectory", "load_scenario",
    "make_keyframe", "read_measurement_log", "scenario_from_dict", "simulate_detections",
    "simulate_uwb", "simulate_vio", "write_measurement_log",
]

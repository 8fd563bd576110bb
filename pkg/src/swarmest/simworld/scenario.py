"""Scenario configuration: a TOML file mapped onto nested dataclasses.

Every section is optional; omitted keys take the defaults below. Unknown keys
raise ``ConfigError`` so typos do not silently fall back to defaults.

Schema (all times in seconds, lengths in meters, angles in radians unless the
key name says ``_deg``)::

    name = "reference"
    seed = 42
    duration = 60.0

    [rates]        vio_hz, frame_hz, uwb_hz, detection_hz
    [sensors]      uwb, detection, map   (booleans: front-end on/off)
    [noise]        vio_pos_frac, vio_yaw_rw, vio_yaw_bias, vio_scale,
                   uwb_sigma, det_sigma_dir, det_inv_depth_frac, scale
    [outliers]     uwb_rate, uwb_min, uwb_max, loop_rate, misassoc_rate
    [detection]    dead_zone_deg, max_range, drone_width, focal,
                   cam_pos = [x, y, z]
    [descriptors]  dim, length_scale, sigma, cameras
    [oracle]       r_loop, max_inliers, sigma = [x, y, z, yaw]
    [keyframes]    distance, interval  (place-recognition keyframe policy)
    [network]      loss_vio, loss_uwb, loss_detection, loss_keyframe,
                   loss_map, latency, jitter, reorder
    [estimator]    any EstimatorConfig field (m_max, d_kf, tau_res, ...)

    [[drones]]
    id = 1
    kind = "circle" | "lissajous" | "waypoints" | "static"
    start = 0.0, stop = inf
    yaw = "velocity" | <float>
    # circle: center, radius, period, phase, direction
    # lissajous: center, amplitude, period, phase
    # waypoints: points, speed, loop
    # static: position
"""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class Rates:
    vio_hz: float = 100.0
    frame_hz: float = 10.0
    uwb_hz: float = 10.0
    detection_hz: float = 10.0


@dataclass
class Sensors:
    uwb: bool = True
    detection: bool = True
    map: bool = True


@dataclass
class NoiseConfig:
    vio_pos_frac: float = 0.005  # per-axis std as a fraction of step length
    vio_yaw_rw: float = 0.002  # yaw random walk, rad / sqrt(m)
    vio_yaw_bias: float = 0.004  # std of per-drone yaw bias, rad / m
    vio_scale: float = 0.01  # std of per-drone scale error
    uwb_sigma: float = 0.15
    det_sigma_dir: float = 0.02
    det_inv_depth_frac: float = 0.05
    scale: float = 1.0  # multiplies every injected noise; 0 gives noiseless streams


@dataclass
class OutlierConfig:
    uwb_rate: float = 0.0
    uwb_min: float = 0.5
    uwb_max: float = 3.0
    loop_rate: float = 0.0
    misassoc_rate: float = 0.0


@dataclass
class DetectionConfig:
    dead_zone_deg: float = 30.0
    max_range: float = 8.0
    drone_width: float = 0.4
    focal: float = 250.0
    cam_pos: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class DescriptorConfig:
    dim: int = 128
    length_scale: float = 1.0
    sigma: float = 0.005
    cameras: int = 1


@dataclass
class OracleConfig:
    r_loop: float = 1.0
    max_inliers: int = 100
    sigma: list = field(default_factory=lambda: [0.02, 0.02, 0.02, 0.005])


@dataclass
class KeyframeConfig:
    distance: float = 0.5
    interval: float = 2.0


@dataclass
class NetworkConfig:
    loss_vio: float = 0.0
    loss_uwb: float = 0.0
    loss_detection: float = 0.0
    loss_keyframe: float = 0.0
    loss_map: float = 0.0
    latency: float = 0.02
    jitter: float = 0.01
    reorder: bool = False


@dataclass
class DroneSpec:
    id: int
    kind: str = "static"
    start: float = 0.0
    stop: float = math.inf
    yaw: Any = "velocity"
    position: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    center: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    radius: float = 2.0
    period: Any = 20.0
    phase: Any = 0.0
    direction: int = 1
    amplitude: list = field(default_factory=lambda: [2.0, 2.0, 0.0])
    points: list = field(default_factory=list)
    speed: float = 1.0
    loop: bool = False


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    duration: float = 30.0
    v_max: float = 5.0
    rates: Rates = field(default_factory=Rates)
    sensors: Sensors = field(default_factory=Sensors)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    outliers: OutlierConfig = field(default_factory=OutlierConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    descriptors: DescriptorConfig = field(default_factory=DescriptorConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    keyframes: KeyframeConfig = field(default_factory=KeyframeConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    estimator: dict = field(default_factory=dict)
    drones: list = field(default_factory=list)

    def validate(self) -> "Scenario":
        r = self.rates
        for name in ("vio_hz", "frame_hz", "uwb_hz", "detection_hz"):
            if not getattr(r, name) > 0:
                raise ConfigError(f"rates.{name} must be positive")
        for name in ("frame_hz", "uwb_hz", "detection_hz"):
            ratio = r.vio_hz / getattr(r, name)
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(f"rates.vio_hz must be a multiple of rates.{name}")
        ratio = r.frame_hz / r.uwb_hz
        if abs(ratio - round(ratio)) > 1e-9 or abs(r.frame_hz / r.detection_hz - round(r.frame_hz / r.detection_hz)) > 1e-9:
            raise ConfigError("uwb_hz and detection_hz must divide frame_hz")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not self.drones:
            raise ConfigError("scenario has no drones")
        ids = [d.id for d in self.drones]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate drone ids")
        for name, val in dataclasses.asdict(self.network).items():
            if name.startswith("loss_") and not 0.0 <= val < 1.0:
                raise ConfigError(f"network.{name} must be in [0, 1)")
        return self

    @property
    def drone_ids(self) -> list:
        return sorted(d.id for d in self.drones)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for drone in d["drones"]:
            if math.isinf(drone["stop"]):
                drone["stop"] = "inf"
        return d


_SECTIONS = {
    "rates": Rates,
    "sensors": Sensors,
    "noise": NoiseConfig,
    "outliers": OutlierConfig,
    "detection": DetectionConfig,
    "descriptors": DescriptorConfig,
    "oracle": OracleConfig,
    "keyframes": KeyframeConfig,
    "network": NetworkConfig,
}


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    return cls(**data)


def scenario_from_dict(data: dict) -> Scenario:
    data = copy.deepcopy(data)
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key == "drones":
            drones = []
            for d in value:
                if "stop" in d and d["stop"] in ("inf", None):
                    d["stop"] = math.inf
                drones.append(_build(DroneSpec, d, "drones"))
            kwargs["drones"] = drones
        elif key in ("name", "seed", "duration", "v_max", "estimator"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    try:
        return Scenario(**kwargs).validate()
    except TypeError as exc:
        # a value of the wrong type, e.g. a string where a rate belongs
        raise ConfigError(f"invalid value type: {exc}") from exc


def _coerce(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` overrides (values parsed as TOML)."""
    data = copy.deepcopy(data)
    for item in overrides or ():
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            path, text = item.split("=", 1)
            value = _coerce(text.strip())
        else:
            path, value = item
        parts = path.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return data


def load_scenario_dict(path) -> dict:
    path = Path(path)
    if not path.exists():
        bundled = Path(__file__).resolve().parent.parent / "scenarios" / f"{path.name}"
        if not bundled.suffix:
            bundled = bundled.with_suffix(".toml")
        if bundled.exists():
            path = bundled
        else:
            raise ConfigError(f"scenario file not found: {path}")
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def load_scenario(path, overrides=None) -> Scenario:
    """Read a scenario file (or a bundled scenario name) and apply overrides."""
    return scenario_from_dict(apply_overrides(load_scenario_dict(path), overrides))

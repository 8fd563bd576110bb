"""Measurement edges, whitened residuals, robust loss and analytic Jacobians.

Every residual is whitened by its per-component standard deviations, so the
squared norm is the Mahalanobis norm under a diagonal covariance.

The functions here work on one edge at a time and are the readable
reference; :mod:`swarmest.kernels` evaluates whole edge batches for the
solver and is checked against these.

``states`` arguments are mappings from a variable key ``(drone, t)`` to a
:class:`~swarmest.geometry.Pose4`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .geometry import Pose4, relative4, rotz, wrap_angle

DroneId = int
Key = tuple  # (drone, t)

DEFAULT_SIGMA_DIR = 0.02
DEFAULT_INV_DEPTH_FRAC = 0.05
DEFAULT_MAP_SIGMA = (0.05, 0.05, 0.05, 0.02)
DEFAULT_UWB_SIGMA = 0.15
DEFAULT_HUBER_DELTA = 1.0

# d/dyaw Rz(yaw) = Rz(yaw) @ _K
_K = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


class MissingStateError(KeyError):
    """An edge references a variable that is not in the state map."""


class DegenerateGeometryError(ValueError):
    """Observer and target positions coincide; the edge must be skipped."""


def _vec(seq, n):
    a = np.asarray(seq, dtype=float).reshape(n)
    return a


@dataclass(frozen=True)
class OdometryEdge:
    drone: DroneId
    t_prev: float
    t: float
    delta: Pose4
    sigma: tuple = (0.05, 0.05, 0.05, 0.01)

    def __post_init__(self):
        if not self.t > self.t_prev:
            raise ValueError("odometry edge needs t > t_prev")
        if min(self.sigma) <= 0:
            raise ValueError("sigma must be positive")

    @property
    def keys(self):
        return ((self.drone, self.t_prev), (self.drone, self.t))


@dataclass(frozen=True)
class MapEdge:
    """Relative 4-DoF pose from keyframe (i, t0) to keyframe (j, t1)."""

    i: DroneId
    t0: float
    j: DroneId
    t1: float
    rel: Pose4
    sigma: tuple = DEFAULT_MAP_SIGMA
    inliers: int = 0
    origin: DroneId = -1  # drone that extracted the edge

    def __post_init__(self):
        if (self.i, self.t0) == (self.j, self.t1):
            raise ValueError("map edge endpoints must differ")
        if min(self.sigma) <= 0:
            raise ValueError("sigma must be positive")

    @property
    def keys(self):
        return ((self.i, self.t0), (self.j, self.t1))

    @property
    def ident(self) -> tuple:
        return (self.i, self.t0, self.j, self.t1, self.origin)


@dataclass(frozen=True)
class DistanceEdge:
    """UWB range measured by drone ``i`` to drone ``j``."""

    i: DroneId
    j: DroneId
    t: float
    d: float
    sigma: float = DEFAULT_UWB_SIGMA

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("distance edge needs two drones")
        if self.d < 0:
            raise ValueError("negative distance")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def keys(self):
        return ((self.i, self.t), (self.j, self.t))


@dataclass(frozen=True)
class DetectionEdge:
    """Bearing and inverse depth of drone ``target`` seen by ``observer``.

    ``direction`` is a unit vector in the observer's 4-DoF body frame.
    ``target`` may be ``None`` for an unassociated detection.
    """

    observer: DroneId
    target: DroneId | None
    t: float
    direction: np.ndarray
    inv_depth: float
    cam_rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    cam_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma_dir: float = DEFAULT_SIGMA_DIR
    sigma_inv_depth: float | None = None

    def __post_init__(self):
        d = _vec(self.direction, 3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("detection direction must be a unit vector")
        if not self.inv_depth > 0:
            raise ValueError("inverse depth must be positive")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "cam_rot", np.asarray(self.cam_rot, float).reshape(3, 3))
        object.__setattr__(self, "cam_pos", _vec(self.cam_pos, 3))
        if self.sigma_inv_depth is None:
            object.__setattr__(
                self, "sigma_inv_depth", DEFAULT_INV_DEPTH_FRAC * self.inv_depth
            )
        if self.sigma_dir <= 0 or self.sigma_inv_depth <= 0:
            raise ValueError("sigma must be positive")

    @property
    def keys(self):
        return ((self.observer, self.t), (self.target, self.t))

    def with_target(self, target: DroneId | None) -> "DetectionEdge":
        return DetectionEdge(
            self.observer, target, self.t, self.direction, self.inv_depth,
            self.cam_rot, self.cam_pos, self.sigma_dir, self.sigma_inv_depth,
        )


Edge = Union[OdometryEdge, MapEdge, DistanceEdge, DetectionEdge]


@dataclass(frozen=True)
class DroneGeometry:
    width: float = 0.4  # physical drone width, m
    focal: float = 250.0  # virtual camera focal length, px

    def __post_init__(self):
        if self.width <= 0 or self.focal <= 0:
            raise ValueError("drone width and focal length must be positive")


# ---------------------------------------------------------------------------
# measurement models


def make_odometry_edge(drone, t_prev, t, p_prev: Pose4, p_now: Pose4, sigma) -> OdometryEdge:
    return OdometryEdge(drone, t_prev, t, relative4(p_prev, p_now), tuple(sigma))


def bbox_to_detection(center_px, width_px: float, geom: DroneGeometry,
                      cam_rot=None, cam_pos=None):
    """Turn a bounding box into ``(direction, inv_depth)`` in the body frame.

    ``center_px`` is relative to the principal point. ``cam_pos`` does not
    enter the measurement itself; it is carried on the edge for the
    residual.
    """
    if not width_px > 0:
        raise ValueError("bounding box width must be positive")
    cam_rot = np.eye(3) if cam_rot is None else np.asarray(cam_rot, float)
    ray = np.array([center_px[0], center_px[1], geom.focal], dtype=float)
    direction = cam_rot @ (ray / np.linalg.norm(ray))
    return direction, width_px / (geom.width * geom.focal)


def detection_forward_model(rel_pos_body, cam_rot=None, cam_pos=None):
    """Noiseless detection of a target at ``rel_pos_body`` (observer body frame)."""
    cam_rot = np.eye(3) if cam_rot is None else np.asarray(cam_rot, float)
    cam_pos = np.zeros(3) if cam_pos is None else _vec(cam_pos, 3)
    v = _vec(rel_pos_body, 3) - cam_pos
    rng = float(np.linalg.norm(v))
    if rng <= 0.0:
        raise DegenerateGeometryError("target coincides with camera")
    in_cam = cam_rot.T @ (v / rng)
    return cam_rot @ in_cam, 1.0 / rng


def detection_to_bbox(direction, inv_depth, geom: DroneGeometry, cam_rot=None):
    """Inverse of :func:`bbox_to_detection` (for simulation); ``None`` behind camera."""
    cam_rot = np.eye(3) if cam_rot is None else np.asarray(cam_rot, float)
    ray = cam_rot.T @ _vec(direction, 3)
    if ray[2] <= 0:
        return None
    center = geom.focal * ray[:2] / ray[2]
    return center, inv_depth * geom.width * geom.focal


# ---------------------------------------------------------------------------
# robust loss


def huber(s: float, delta: float = DEFAULT_HUBER_DELTA) -> float:
    """Huber loss on a squared norm ``s``."""
    if s <= delta * delta:
        return s
    return 2.0 * delta * math.sqrt(s) - delta * delta


def huber_weight(s: float, delta: float = DEFAULT_HUBER_DELTA) -> float:
    """Derivative of :func:`huber` with respect to ``s``."""
    if s <= delta * delta:
        return 1.0
    return delta / math.sqrt(s)


# ---------------------------------------------------------------------------
# residuals


def tangent_basis(u) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane orthogonal to unit vector ``u``.

    Uses the Householder reflection that maps e_z onto -sign(u_z) u, so the
    result is a deterministic function of ``u``.
    """
    u = _vec(u, 3)
    sign = 1.0 if u[2] >= 0.0 else -1.0
    w = u.copy()
    w[2] += sign
    h = np.eye(3) - 2.0 * np.outer(w, w) / float(w @ w)
    return h[:, 0].copy(), h[:, 1].copy()


def tangent_basis_batch(u) -> np.ndarray:
    """Row-wise :func:`tangent_basis`; returns shape ``(n, 2, 3)``."""
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    w = u.copy()
    w[:, 2] += np.where(u[:, 2] >= 0.0, 1.0, -1.0)
    h = np.eye(3)[None] - 2.0 * w[:, :, None] * w[:, None, :] / np.einsum("ij,ij->i", w, w)[:, None, None]
    return np.ascontiguousarray(np.swapaxes(h[:, :, :2], 1, 2))


def _get(states: Mapping, key) -> Pose4:
    try:
        return states[key]
    except KeyError:
        raise MissingStateError(key) from None


def _pose_pair_residual(meas: Pose4, sigma, pa: Pose4, pb: Pose4) -> np.ndarray:
    err = relative4(meas, relative4(pa, pb))
    s = np.asarray(sigma, dtype=float)
    return np.array([err.x, err.y, err.z, err.yaw]) / s


def residual_odometry(edge: OdometryEdge, states: Mapping) -> np.ndarray:
    ka, kb = edge.keys
    return _pose_pair_residual(edge.delta, edge.sigma, _get(states, ka), _get(states, kb))


def residual_map_edge(edge: MapEdge, states: Mapping) -> np.ndarray:
    ka, kb = edge.keys
    return _pose_pair_residual(edge.rel, edge.sigma, _get(states, ka), _get(states, kb))


def residual_distance(edge: DistanceEdge, states: Mapping) -> float:
    ki, kj = edge.keys
    xi, xj = _get(states, ki).translation, _get(states, kj).translation
    return (edge.d - float(np.linalg.norm(xi - xj))) / edge.sigma


def predicted_body_position(observer: Pose4, target: Pose4) -> np.ndarray:
    return relative4(observer, target).translation


def residual_detection(edge: DetectionEdge, states: Mapping) -> np.ndarray:
    if edge.target is None:
        raise MissingStateError("unassociated detection")
    kk, ki = edge.keys
    v = predicted_body_position(_get(states, kk), _get(states, ki)) - edge.cam_pos
    n = float(np.linalg.norm(v))
    if n <= 0.0:
        raise DegenerateGeometryError("observer and target coincide")
    b1, b2 = tangent_basis(edge.direction)
    diff = edge.direction - v / n
    return np.array([
        b1 @ diff / edge.sigma_dir,
        b2 @ diff / edge.sigma_dir,
        (edge.inv_depth - 1.0 / n) / edge.sigma_inv_depth,
    ])


def residual(edge: Edge, states: Mapping) -> np.ndarray:
    """Whitened residual of any edge as a 1-D array."""
    if isinstance(edge, OdometryEdge):
        return residual_odometry(edge, states)
    if isinstance(edge, MapEdge):
        return residual_map_edge(edge, states)
    if isinstance(edge, DistanceEdge):
        return np.array([residual_distance(edge, states)])
    if isinstance(edge, DetectionEdge):
        return residual_detection(edge, states)
    raise TypeError(f"unknown edge type {type(edge).__name__}")


# ---------------------------------------------------------------------------
# analytic Jacobians


def _pose_pair_jacobians(meas: Pose4, sigma, pa: Pose4, pb: Pose4):
    s = np.asarray(sigma, dtype=float)
    m = rotz(-(meas.yaw + pa.yaw))
    dx = pb.translation - pa.translation
    ja = np.zeros((4, 4))
    jb = np.zeros((4, 4))
    ja[:3, :3] = -m
    ja[:3, 3] = -m @ _K @ dx
    ja[3, 3] = -1.0
    jb[:3, :3] = m
    jb[3, 3] = 1.0
    return ja / s[:, None], jb / s[:, None]


def jacobians(edge: Edge, states: Mapping) -> dict:
    """Partial derivatives of the whitened residual per incident variable.

    Returns ``{key: (m, 4) array}`` over ``(x, y, z, yaw)``. Blocks of
    variables that appear twice (self-loops) are summed.
    """
    out: dict = {}

    def put(key, block):
        out[key] = out[key] + block if key in out else block

    if isinstance(edge, (OdometryEdge, MapEdge)):
        ka, kb = edge.keys
        meas = edge.delta if isinstance(edge, OdometryEdge) else edge.rel
        ja, jb = _pose_pair_jacobians(meas, edge.sigma, _get(states, ka), _get(states, kb))
        put(ka, ja)
        put(kb, jb)
    elif isinstance(edge, DistanceEdge):
        ki, kj = edge.keys
        diff = _get(states, ki).translation - _get(states, kj).translation
        n = float(np.linalg.norm(diff))
        g = np.zeros((1, 4))
        if n > 0:
            g[0, :3] = -diff / (edge.sigma * n)
        put(ki, g)
        put(kj, -g)
    elif isinstance(edge, DetectionEdge):
        kk, ki = edge.keys
        pk, pi = _get(states, kk), _get(states, ki)
        rk = rotz(-pk.yaw)
        dx = pi.translation - pk.translation
        v = rk @ dx - edge.cam_pos
        n = float(np.linalg.norm(v))
        if n <= 0.0:
            raise DegenerateGeometryError("observer and target coincide")
        u = v / n
        b1, b2 = tangent_basis(edge.direction)
        dr_dv = np.zeros((3, 3))
        proj = (np.eye(3) - np.outer(u, u)) / n
        dr_dv[0] = -(b1 @ proj) / edge.sigma_dir
        dr_dv[1] = -(b2 @ proj) / edge.sigma_dir
        dr_dv[2] = u / (n * n) / edge.sigma_inv_depth
        jk = np.zeros((3, 4))
        ji = np.zeros((3, 4))
        jk[:, :3] = -dr_dv @ rk
        jk[:, 3] = dr_dv @ (-rk @ _K @ dx)
        ji[:, :3] = dr_dv @ rk
        put(kk, jk)
        put(ki, ji)
    else:
        raise TypeError(f"unknown edge type {type(edge).__name__}")
    return out


def edge_is_robust(edge: Edge) -> bool:
    """Odometry terms are plain squares; every other edge goes through Huber."""
    return not isinstance(edge, OdometryEdge)

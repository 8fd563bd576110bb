import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmest.geometry import IDENTITY4, Pose4, compose4, relative4, rotx, rotz
from swarmest.measurements import (
    DEFAULT_UWB_SIGMA,
    DegenerateGeometryError,
    DetectionEdge,
    DistanceEdge,
    DroneGeometry,
    MapEdge,
    MissingStateError,
    OdometryEdge,
    bbox_to_detection,
    detection_forward_model,
    detection_to_bbox,
    huber,
    huber_weight,
    jacobians,
    make_odometry_edge,
    residual,
    residual_detection,
    residual_distance,
    residual_map_edge,
    residual_odometry,
    tangent_basis,
    tangent_basis_batch,
)

A, B = (1, 0.0), (2, 0.0)


def rand_pose(rng, scale=5.0):
    return Pose4(*rng.uniform(-scale, scale, 3), rng.uniform(-math.pi, math.pi))


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


# -- edge construction ------------------------------------------------------

def test_odometry_examples():
    p = Pose4(1, 2, 3, 0.4)
    assert make_odometry_edge(1, 0, 1, p, p, (1, 1, 1, 1)).delta == IDENTITY4
    e = make_odometry_edge(1, 0, 1, IDENTITY4, Pose4(1, 0, 0, 0), (1, 1, 1, 1))
    assert e.delta == Pose4(1, 0, 0, 0)


def test_odometry_round_trip_random():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = rand_pose(rng), rand_pose(rng)
        e = make_odometry_edge(1, 0, 1, a, b, (1, 1, 1, 1))
        c = compose4(a, e.delta)
        np.testing.assert_allclose(c.translation, b.translation, atol=1e-12)
        assert math.remainder(c.yaw - b.yaw, 2 * math.pi) == pytest.approx(0, abs=1e-12)


def test_edge_invariants():
    with pytest.raises(ValueError):
        OdometryEdge(1, 1.0, 1.0, IDENTITY4)
    with pytest.raises(ValueError):
        DistanceEdge(1, 1, 0.0, 2.0)
    with pytest.raises(ValueError):
        DistanceEdge(1, 2, 0.0, -1.0)
    with pytest.raises(ValueError):
        MapEdge(1, 0.0, 1, 0.0, IDENTITY4)
    with pytest.raises(ValueError):
        DetectionEdge(1, 2, 0.0, [0, 0, 2], 0.5)
    with pytest.raises(ValueError):
        DetectionEdge(1, 2, 0.0, [0, 0, 1], 0.0)


# -- detection model ----------------------------------------------------------

def test_bbox_examples():
    g = DroneGeometry(width=0.4, focal=250.0)
    d, s = bbox_to_detection((0, 0), 50, g)
    np.testing.assert_allclose(d, [0, 0, 1])
    assert s == pytest.approx(0.5)
    d, _ = bbox_to_detection((250, 0), 50, g)
    np.testing.assert_allclose(d, unit([1, 0, 1]))
    with pytest.raises(ValueError):
        bbox_to_detection((0, 0), 0.0, g)


def test_bbox_width_at_four_metres():
    # width = s * f / range
    _, width = detection_to_bbox([0, 0, 1], 1 / 4.0, DroneGeometry(0.4, 250.0))
    assert width == pytest.approx(25.0)


def test_forward_model_examples():
    d, s = detection_forward_model([0, 0, 2])
    np.testing.assert_allclose(d, [0, 0, 1])
    assert s == pytest.approx(0.5)
    assert detection_forward_model([3, 4, 0])[1] == pytest.approx(0.2)
    with pytest.raises(DegenerateGeometryError):
        detection_forward_model([1, 1, 1], cam_pos=[1, 1, 1])


def test_forward_model_bbox_round_trip():
    rng = np.random.default_rng(4)
    g = DroneGeometry()
    cam_rot = rotx(0.3) @ rotz(0.5)
    n = 0
    while n < 100:
        rel = rng.uniform(-6, 6, 3)
        d, s = detection_forward_model(rel, cam_rot)
        box = detection_to_bbox(d, s, g, cam_rot)
        if box is None:
            continue
        d2, s2 = bbox_to_detection(box[0], box[1], g, cam_rot)
        np.testing.assert_allclose(d2, d, atol=1e-9)
        assert s2 == pytest.approx(s, abs=1e-9)
        n += 1


# -- robust loss --------------------------------------------------------------

def test_huber_examples():
    assert huber(0.25, 1.0) == 0.25
    assert huber(4.0, 1.0) == 3.0


def test_huber_c1_at_knee():
    d, h = 1.3, 1e-7
    s0 = d * d
    assert huber(s0 - h, d) == pytest.approx(huber(s0 + h, d), abs=1e-6)
    left = (huber(s0, d) - huber(s0 - h, d)) / h
    right = (huber(s0 + h, d) - huber(s0, d)) / h
    assert left == pytest.approx(right, abs=1e-5)
    assert huber_weight(s0, d) == pytest.approx(1.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100), st.floats(0.1, 5))
def test_huber_monotone_and_concave_tail(s1, s2, delta):
    lo, hi = min(s1, s2), max(s1, s2)
    assert huber(lo, delta) <= huber(hi, delta) + 1e-12
    if lo > delta ** 2:
        mid = 0.5 * (lo + hi)
        assert huber(mid, delta) >= 0.5 * (huber(lo, delta) + huber(hi, delta)) - 1e-9


# -- tangent basis ------------------------------------------------------------

def test_tangent_basis_examples():
    for u in ([0, 0, 1], [1, 0, 0], [0, 0, -1]):
        b1, b2 = tangent_basis(u)
        g = np.array([b1, b2, u])
        np.testing.assert_allclose(g @ g.T, np.eye(3), atol=1e-12)


def test_tangent_basis_random_gram():
    rng = np.random.default_rng(5)
    u = rng.normal(size=(1000, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    batch = tangent_basis_batch(u)
    for k in range(1000):
        b1, b2 = tangent_basis(u[k])
        g = np.array([b1, b2, u[k]])
        np.testing.assert_allclose(g @ g.T, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(batch[k], [b1, b2], atol=1e-14)


# -- residuals ----------------------------------------------------------------

def test_odometry_residual_examples():
    e = OdometryEdge(1, 0.0, 1.0, IDENTITY4, (1, 1, 1, 1))
    states = {(1, 0.0): IDENTITY4, (1, 1.0): IDENTITY4}
    np.testing.assert_allclose(residual_odometry(e, states), 0)
    states[(1, 1.0)] = Pose4(0.1, 0, 0, 0)
    np.testing.assert_allclose(residual_odometry(e, states), [0.1, 0, 0, 0])
    with pytest.raises(MissingStateError):
        residual_odometry(e, {(1, 0.0): IDENTITY4})


def _pose_pair_oracle(meas, sigma, pa, pb):
    # homogeneous matrices: inv(M) inv(A) B
    m = np.linalg.inv(meas.to_matrix()) @ np.linalg.inv(pa.to_matrix()) @ pb.to_matrix()
    yaw = math.atan2(m[1, 0], m[0, 0])
    return np.array([m[0, 3], m[1, 3], m[2, 3], yaw]) / np.asarray(sigma)


def test_pose_pair_residuals_match_matrix_oracle():
    rng = np.random.default_rng(6)
    for _ in range(100):
        pa, pb, meas = rand_pose(rng), rand_pose(rng), rand_pose(rng)
        sig = rng.uniform(0.01, 1, 4)
        states = {A: pa, B: pb}
        odo = OdometryEdge(1, 0.0, 1.0, meas, tuple(sig))
        r = residual_odometry(odo, {(1, 0.0): pa, (1, 1.0): pb})
        np.testing.assert_allclose(r, _pose_pair_oracle(meas, sig, pa, pb), atol=1e-9)
        me = MapEdge(1, 0.0, 2, 0.0, meas, tuple(sig))
        np.testing.assert_allclose(residual_map_edge(me, states),
                                   _pose_pair_oracle(meas, sig, pa, pb), atol=1e-9)


def test_map_residual_examples():
    pa, pb = Pose4(1, 2, 0, 0.3), Pose4(-1, 0.5, 1, -2.0)
    e = MapEdge(1, 0.0, 2, 3.0, relative4(pa, pb))
    np.testing.assert_allclose(residual_map_edge(e, {(1, 0.0): pa, (2, 3.0): pb}), 0, atol=1e-12)
    loop = MapEdge(1, 0.0, 1, 5.0, IDENTITY4)
    np.testing.assert_allclose(residual_map_edge(loop, {(1, 0.0): pa, (1, 5.0): pa}), 0)


def test_distance_residual_examples():
    states = {A: IDENTITY4, B: Pose4(3, 4, 0, 0)}
    assert residual_distance(DistanceEdge(1, 2, 0.0, 5.0, 1.0), states) == 0
    assert residual_distance(DistanceEdge(1, 2, 0.0, 5.15, 1.0), states) == pytest.approx(0.15)
    assert DEFAULT_UWB_SIGMA == 0.15
    assert residual_distance(DistanceEdge(1, 2, 0.0, 5.15), states) == pytest.approx(1.0)


def test_detection_residual_examples():
    states = {A: IDENTITY4, B: Pose4(0, 0, 2, 0)}
    e = DetectionEdge(1, 2, 0.0, [0, 0, 1], 0.5)
    np.testing.assert_allclose(residual_detection(e, states), 0, atol=1e-15)
    with pytest.raises(DegenerateGeometryError):
        residual_detection(e, {A: IDENTITY4, B: IDENTITY4})


def _detection_oracle(e, pk, pi):
    # target position in observer body frame by matrix inversion
    v = (np.linalg.inv(pk.to_matrix()) @ np.append(pi.translation, 1.0))[:3] - e.cam_pos
    n = np.linalg.norm(v)
    b1, b2 = tangent_basis(e.direction)
    return np.array([b1 @ (e.direction - v / n) / e.sigma_dir,
                     b2 @ (e.direction - v / n) / e.sigma_dir,
                     (e.inv_depth - 1 / n) / e.sigma_inv_depth])


def test_detection_residual_random():
    rng = np.random.default_rng(7)
    cam_pos = np.array([0.05, 0.0, -0.02])
    for _ in range(100):
        pk, pi = rand_pose(rng), rand_pose(rng)
        v = (np.linalg.inv(pk.to_matrix()) @ np.append(pi.translation, 1.0))[:3]
        d, s = detection_forward_model(v, cam_pos=cam_pos)
        e = DetectionEdge(1, 2, 0.0, d, s, cam_pos=cam_pos)
        np.testing.assert_allclose(residual_detection(e, {A: pk, B: pi}), 0, atol=1e-9)
        moved = Pose4(pi.x + rng.normal(), pi.y + rng.normal(), pi.z, pi.yaw)
        np.testing.assert_allclose(residual_detection(e, {A: pk, B: moved}),
                                   _detection_oracle(e, pk, moved), atol=1e-9)


def test_whitening_scales_residuals():
    rng = np.random.default_rng(8)
    pa, pb = rand_pose(rng), rand_pose(rng)
    states = {A: pa, B: pb, (1, 1.0): pb}
    c = 3.7
    sig4 = np.array([0.1, 0.2, 0.3, 0.4])
    meas = rand_pose(rng)
    d = [0.0, 1.0, 0.0]
    pairs = [
        (OdometryEdge(1, 0.0, 1.0, meas, tuple(sig4)), OdometryEdge(1, 0.0, 1.0, meas, tuple(c * sig4))),
        (MapEdge(1, 0.0, 2, 0.0, meas, tuple(sig4)), MapEdge(1, 0.0, 2, 0.0, meas, tuple(c * sig4))),
        (DistanceEdge(1, 2, 0.0, 4.0, 0.2), DistanceEdge(1, 2, 0.0, 4.0, 0.2 * c)),
        (DetectionEdge(1, 2, 0.0, d, 0.3, sigma_dir=0.02, sigma_inv_depth=0.01),
         DetectionEdge(1, 2, 0.0, d, 0.3, sigma_dir=0.02 * c, sigma_inv_depth=0.01 * c)),
    ]
    for e1, e2 in pairs:
        np.testing.assert_allclose(residual(e2, states), residual(e1, states) / c, rtol=1e-12)


# -- Jacobians ----------------------------------------------------------------

def _fd_check(edge, states, h=1e-6):
    jac = jacobians(edge, states)
    for key, block in jac.items():
        num = np.zeros_like(block)
        base = states[key].as_array()
        for c in range(4):
            for sgn in (1, -1):
                x = base.copy()
                x[c] += sgn * h
                s = dict(states)
                s[key] = Pose4.from_array(x)
                num[:, c] += sgn * residual(edge, s)
        num /= 2 * h
        err = np.max(np.abs(num - block)) / max(1.0, np.max(np.abs(block)))
        assert err < 1e-5, (type(edge).__name__, key, err)


def test_distance_jacobian_formula():
    states = {A: Pose4(1, 2, 3, 0.1), B: Pose4(-1, 0, 2, 0.4)}
    e = DistanceEdge(1, 2, 0.0, 3.0, 0.2)
    diff = states[A].translation - states[B].translation
    expect = -diff / (0.2 * np.linalg.norm(diff))
    np.testing.assert_allclose(jacobians(e, states)[A][0, :3], expect)


def test_jacobians_finite_difference_random():
    rng = np.random.default_rng(9)
    for _ in range(50):
        pa, pb = rand_pose(rng), rand_pose(rng)
        states = {A: pa, B: pb, (1, 1.0): pb}
        _fd_check(OdometryEdge(1, 0.0, 1.0, rand_pose(rng), (0.1, 0.1, 0.2, 0.05)), states)
        _fd_check(MapEdge(1, 0.0, 2, 0.0, rand_pose(rng)), states)
        _fd_check(DistanceEdge(1, 2, 0.0, 3.0), states)
        _fd_check(DetectionEdge(1, 2, 0.0, unit(rng.normal(size=3)), 0.3,
                                cam_pos=[0.05, 0, 0]), states)


def test_odometry_jacobian_gauge_invariance():
    rng = np.random.default_rng(10)
    for _ in range(20):
        states = {(1, 0.0): rand_pose(rng), (1, 1.0): rand_pose(rng)}
        jac = jacobians(OdometryEdge(1, 0.0, 1.0, rand_pose(rng)), states)
        total = jac[(1, 0.0)][:, :3] + jac[(1, 1.0)][:, :3]
        np.testing.assert_allclose(total, 0, atol=1e-12)

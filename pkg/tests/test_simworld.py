import math

import numpy as np
import pytest

from swarmest.geometry import Pose4, Pose6, project_to_4dof, relative4, rotz
from swarmest.maploc import LoopThresholds
from swarmest.measurements import detection_forward_model
from swarmest.simworld import (
    ConfigError,
    DescriptorField,
    RelativePoseOracle,
    build_world,
    generate_trajectory,
    load_scenario,
    make_keyframe,
    read_measurement_log,
    scenario_from_dict,
    simulate_detections,
    simulate_uwb,
    simulate_vio,
    write_measurement_log,
)
from swarmest.simworld.scenario import (
    DescriptorConfig,
    DetectionConfig,
    DroneSpec,
    NoiseConfig,
    OracleConfig,
    OutlierConfig,
)
from swarmest.simworld.sensors import in_dead_zone

QUIET = NoiseConfig(scale=0.0)


def two_static(p1=(0, 0, 1), p2=(3, 0, 1), duration=2.0):
    specs = [DroneSpec(1, "static", position=list(p1), yaw=0.0),
             DroneSpec(2, "static", position=list(p2), yaw=0.0)]
    return generate_trajectory(specs, duration, 100.0)


# -- trajectories -------------------------------------------------------------

def test_static_is_constant():
    gt = generate_trajectory([DroneSpec(1, "static", position=[1, 2, 3], yaw=0.4)], 5.0, 100.0)
    d = gt.drones[1]
    assert np.all(d.pos == [1, 2, 3]) and np.all(d.yaw == pytest.approx(0.4))


def test_circle_radius():
    gt = generate_trajectory([DroneSpec(1, "circle", center=[0, 0, 1], radius=2.0, period=20.0)], 20.0, 100.0)
    np.testing.assert_allclose(np.hypot(gt.drones[1].pos[:, 0], gt.drones[1].pos[:, 1]), 2.0, atol=1e-12)


def test_parallel_side_by_side_lines():
    specs = [DroneSpec(1, "waypoints", points=[[0, 0, 1], [10, 0, 1]], speed=1.0),
             DroneSpec(2, "waypoints", points=[[0, 1, 1], [10, 1, 1]], speed=1.0)]
    gt = generate_trajectory(specs, 10.0, 100.0)
    sep = gt.drones[2].pos - gt.drones[1].pos
    np.testing.assert_allclose(sep, np.tile([0, 1, 0], (len(gt.t), 1)), atol=1e-12)


def test_speed_bounded_and_infeasible_rejected():
    spec = DroneSpec(1, "circle", radius=3.0, period=10.0)
    gt = generate_trajectory([spec], 10.0, 100.0, v_max=5.0)
    step = np.linalg.norm(np.diff(gt.drones[1].pos, axis=0), axis=1)
    assert step.max() < 5.0 * gt.dt
    with pytest.raises(ConfigError):
        generate_trajectory([DroneSpec(1, "circle", radius=30.0, period=5.0)], 5.0, 100.0)
    with pytest.raises(ConfigError):
        generate_trajectory([DroneSpec(1, "waypoints", points=[[0, 0, 0], [0, 0, 0]])], 5.0, 100.0)


# -- VIO ----------------------------------------------------------------------

def test_zero_noise_vio_is_truth_in_start_frame():
    gt = generate_trajectory([DroneSpec(1, "lissajous", amplitude=[3, 2, 0.5], period=[20, 10, 7])], 20.0, 100.0)
    v = simulate_vio(gt, QUIET, seed=1)[1]
    d = gt.drones[1]
    start = d.pose4(0)
    for k in range(0, len(gt.t), 97):
        expect = relative4(start, d.pose4(k))
        got = v.pose4(k)
        np.testing.assert_allclose(got.translation, expect.translation, atol=1e-9)
        assert abs(math.remainder(got.yaw - expect.yaw, 2 * math.pi)) < 1e-9
    assert v.pose4(0) == Pose4()


def test_yaw_noise_drift_grows_with_path():
    # Monte-Carlo over 100 seeds: mean position error at 1/3, 2/3 and the end
    spec = DroneSpec(1, "waypoints", points=[[0, 0, 1], [30, 0, 1]], speed=2.0, yaw=0.0)
    gt = generate_trajectory([spec], 15.0, 100.0)
    noise = NoiseConfig(vio_pos_frac=0.0, vio_yaw_rw=0.01, vio_yaw_bias=0.0, vio_scale=0.0)
    truth = gt.drones[1].pos - gt.drones[1].pos[0]
    marks = [len(gt.t) // 3, 2 * len(gt.t) // 3, len(gt.t) - 1]
    err = np.zeros(3)
    for seed in range(100):
        v = simulate_vio(gt, noise, seed)[1]
        err += [np.linalg.norm(v.pose[k, :3] - truth[k]) for k in marks]
    assert 0 < err[0] < err[1] < err[2]


def test_default_vio_drift_is_a_few_percent():
    spec = DroneSpec(1, "circle", radius=3.0, period=30.0)
    gt = generate_trajectory([spec], 60.0, 100.0)
    d = gt.drones[1]
    start = d.pose4(0)
    fracs = []
    for seed in range(20):
        v = simulate_vio(gt, NoiseConfig(), seed)[1]
        final = relative4(start, d.pose4(d.last)).translation
        fracs.append(np.linalg.norm(v.pose[-1, :3] - final) / d.path_length())
    # same order of magnitude as the few-percent drift of real VIO
    assert 0.001 < np.mean(fracs) < 0.05


# -- UWB ----------------------------------------------------------------------

def test_uwb_zero_noise_and_both_directions():
    gt = two_static()
    res = simulate_uwb(gt, [0, 10], 0.0, OutlierConfig(), seed=0)
    assert len(res.edges) == 4
    assert {(e.i, e.j) for e in res.edges} == {(1, 2), (2, 1)}
    assert all(e.d == pytest.approx(3.0) for e in res.edges)


def test_uwb_noise_std():
    gt = two_static(duration=50.0)
    res = simulate_uwb(gt, range(len(gt.t)), 0.15, OutlierConfig(), seed=3)
    d = np.array([e.d for e in res.edges])[:10000]
    assert len(d) == 10000
    assert 0.14 <= d.std() <= 0.16


def test_uwb_outlier_rate():
    gt = two_static(duration=50.0)
    res = simulate_uwb(gt, range(0, len(gt.t), 2), 0.0, OutlierConfig(uwb_rate=0.1), seed=4)
    n = len(res.edges)
    big = sum(e.d - 3.0 > 0.5 for e in res.edges)
    assert big == len(res.injected)
    # 5 binomial sigmas
    assert abs(big - 0.1 * n) < 5 * math.sqrt(n * 0.09)


# -- detections ---------------------------------------------------------------

def test_target_below_is_in_dead_zone():
    gt = two_static((0, 0, 3), (0.1, 0, 0))
    res = simulate_detections(gt, [0], DetectionConfig(), QUIET, 0.0, seed=0)
    assert [(e.observer, e.target) for e in res.edges] == [(2, 1)]


def test_zero_noise_detection_matches_forward_model():
    gt = two_static((0, 0, 1), (2, 1, 1.5))
    res = simulate_detections(gt, [0], DetectionConfig(), QUIET, 0.0, seed=0)
    for e in res.edges:
        o, t = gt.drones[e.observer].pose4(0), gt.drones[e.target].pose4(0)
        d, s = detection_forward_model(relative4(o, t).translation)
        np.testing.assert_allclose(e.direction, d, atol=1e-12)
        assert e.inv_depth == pytest.approx(s, abs=1e-12)


def test_mislabel_rate():
    specs = [DroneSpec(i, "static", position=[i, 0, 1], yaw=0.0) for i in (1, 2, 3)]
    gt = generate_trajectory(specs, 20.0, 100.0)
    res = simulate_detections(gt, range(0, len(gt.t), 10), DetectionConfig(), QUIET, 0.05, seed=2)
    n = len(res.edges)
    bad = len(res.mislabeled)
    assert n > 1000
    assert abs(bad - 0.05 * n) < 5 * math.sqrt(n * 0.05 * 0.95)
    assert all(e.target != e.observer for e in res.edges)


def test_dead_zone_predicate_matches_cone():
    rng = np.random.default_rng(0)
    half = math.radians(30)
    v = rng.normal(size=(2000, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    angle_from_down = np.arccos(np.clip(-v[:, 2], -1, 1))
    for vec, ang in zip(v, angle_from_down):
        assert in_dead_zone(vec, half) == (ang < half)


# -- descriptors and oracle ---------------------------------------------------

def _kf(field_, drone, t, pos, yaw=0.0, seed=0):
    p6 = Pose6(rotz(yaw), np.asarray(pos, float))
    p4 = Pose4(*pos, yaw)
    return make_keyframe(drone, t, p4, p6, p6, field_, seed)


def test_descriptor_locality():
    f = DescriptorField(DescriptorConfig(sigma=0.0), seed=1)
    tau = LoopThresholds().tau_fl
    a, b = _kf(f, 1, 0.0, [0, 0, 1]), _kf(f, 2, 0.0, [0, 0, 1])
    assert np.linalg.norm(a.descriptors - b.descriptors) == 0.0
    near = _kf(f, 2, 0.0, [0.3, 0, 1])
    far = _kf(f, 2, 0.0, [10, 0, 1])
    assert np.linalg.norm(a.descriptors - near.descriptors) < tau
    assert np.linalg.norm(a.descriptors - far.descriptors) > tau


def test_oracle_examples():
    f = DescriptorField(DescriptorConfig(), seed=1)
    a, b = _kf(f, 1, 0.0, [1, 2, 1], 0.3), _kf(f, 2, 7.0, [1, 2, 1], -0.8)
    oracle = RelativePoseOracle(OracleConfig(sigma=[0, 0, 0, 0]), 0.0, seed=0)
    res = oracle.extract(a, b)
    assert res.inliers == OracleConfig().max_inliers
    got = project_to_4dof(res.pose_in_query_frame)
    np.testing.assert_allclose(got.translation, [1, 2, 1], atol=1e-12)
    assert got.yaw == pytest.approx(0.3, abs=1e-12)
    far = _kf(f, 2, 7.0, [51, 2, 1])
    assert oracle.extract(a, far).inliers < LoopThresholds().tau_in


def test_oracle_gross_rate():
    f = DescriptorField(DescriptorConfig(), seed=1)
    oracle = RelativePoseOracle(OracleConfig(), 0.02, seed=5)
    a = _kf(f, 1, 0.0, [0, 0, 1])
    for k in range(1000):
        oracle.extract(a, _kf(f, 2, 0.1 * (k + 1), [0, 0, 1]))
    n = len(oracle.gross)
    assert abs(n - 20) < 5 * math.sqrt(1000 * 0.02 * 0.98)


# -- scenarios and logs -------------------------------------------------------

def test_scenario_validation():
    with pytest.raises(ConfigError):
        scenario_from_dict({"drones": []})
    with pytest.raises(ConfigError):
        scenario_from_dict({"drones": [{"id": 1}], "bogus": 1})
    with pytest.raises(ConfigError):
        scenario_from_dict({"drones": [{"id": 1}], "network": {"loss_uwb": 1.0}})
    with pytest.raises(ConfigError):
        load_scenario("no_such_scenario")
    s = load_scenario("reference", ["noise.uwb_sigma=0.1", "seed=3"])
    assert s.noise.uwb_sigma == 0.1 and s.seed == 3


def test_noiseless_world_is_exact():
    w = build_world(load_scenario("noiseless", ["duration=5.0"]))
    for e in w.meas.uwb:
        true = np.linalg.norm(w.gt.drones[e.i].pos[w.meas.tick_of(e.t)] - w.gt.drones[e.j].pos[w.meas.tick_of(e.t)])
        assert e.d == pytest.approx(true, abs=1e-12)


def test_measurement_log_determinism_and_round_trip(tmp_path):
    s = load_scenario("reference", ["duration=4.0"])
    p1 = write_measurement_log(build_world(s).meas, tmp_path / "a.jsonl")
    p2 = write_measurement_log(build_world(s).meas, tmp_path / "b.jsonl")
    assert p1.read_bytes() == p2.read_bytes()
    meas = read_measurement_log(p1)
    p3 = write_measurement_log(meas, tmp_path / "c.jsonl")
    assert p3.read_bytes() == p1.read_bytes()

"""Compiled and numpy kernels must agree, and both must match per-pose geometry."""

import importlib
import subprocess
import sys

import numpy as np
import pytest

from swarmest import _kernels_py, kernels
from swarmest.geometry import Pose4, compose4, inverse4
from swarmest.measurements import tangent_basis_batch

try:
    from swarmest import _kernels as _kernels_c
except ImportError:  # pragma: no cover
    _kernels_c = None

needs_c = pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")


def poses(rng, n):
    p = rng.uniform(-5, 5, (n, 4))
    p[:, 3] = rng.uniform(-4, 4, n)
    return p


def test_backend_selection_respects_env():
    code = "from swarmest import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"SWARMEST_PURE_PYTHON": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("cython", "python")


def test_pose_pair_matches_geometry():
    rng = np.random.default_rng(0)
    meas, pa, pb = poses(rng, 50), poses(rng, 50), poses(rng, 50)
    inv_sig = rng.uniform(1, 50, (50, 4))
    r, _, _ = _kernels_py.pose_pair_batch(meas, inv_sig, pa, pb)
    for n in range(50):
        e = compose4(inverse4(Pose4(*meas[n])), compose4(inverse4(Pose4(*pa[n])), Pose4(*pb[n])))
        np.testing.assert_allclose(r[n], e.as_array() * inv_sig[n], atol=1e-9)


def test_propagate_matches_geometry():
    rng = np.random.default_rng(1)
    o, a, b = poses(rng, 30), poses(rng, 30), poses(rng, 30)
    out = _kernels_py.propagate_batch(o, a, b)
    for n in range(30):
        e = compose4(Pose4(*o[n]), compose4(inverse4(Pose4(*a[n])), Pose4(*b[n])))
        np.testing.assert_allclose(out[n], e.as_array(), atol=1e-12)


@needs_c
@pytest.mark.parametrize("seed", range(5))
def test_compiled_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    n = 200
    meas, pa, pb = poses(rng, n), poses(rng, n), poses(rng, n)
    inv4 = rng.uniform(1, 50, (n, 4))
    for got, ref in zip(_kernels_c.pose_pair_batch(meas, inv4, pa, pb),
                        _kernels_py.pose_pair_batch(meas, inv4, pa, pb)):
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)

    d = rng.uniform(0.5, 10, n)
    inv1 = rng.uniform(1, 10, n)
    pb[0, :3] = pa[0, :3]  # coincident positions take the zero-Jacobian branch
    for got, ref in zip(_kernels_c.distance_batch(d, inv1, pa, pb), _kernels_py.distance_batch(d, inv1, pa, pb)):
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)

    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    args = (dirs, rng.uniform(0.1, 1, n), np.tile([0.1, 0, 0.02], (n, 1)), tangent_basis_batch(dirs),
            rng.uniform(10, 100, n), rng.uniform(1, 10, n), pa, pb)
    for got, ref in zip(_kernels_c.detection_batch(*args), _kernels_py.detection_batch(*args)):
        np.testing.assert_allclose(got, ref, rtol=1e-11, atol=1e-11)

    np.testing.assert_allclose(_kernels_c.propagate_batch(meas, pa, pb),
                               _kernels_py.propagate_batch(meas, pa, pb), rtol=1e-12, atol=1e-12)


@needs_c
def test_empty_batches():
    z4, z1 = np.zeros((0, 4)), np.zeros(0)
    for mod in (_kernels_c, _kernels_py):
        r, ja, jb = mod.pose_pair_batch(z4, z4, z4, z4)
        assert r.shape == (0, 4) and ja.shape == (0, 4, 4)
        assert mod.distance_batch(z1, z1, z4, z4)[0].shape == (0,)
        assert mod.propagate_batch(z4, z4, z4).shape == (0, 4)


def test_reload_keeps_public_names():
    mod = importlib.reload(kernels)
    for name in mod.__all__:
        assert hasattr(mod, name)

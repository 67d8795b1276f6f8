"""The numba kernels and their pure-numpy counterparts must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest

from dloplan import _accel, kernels
from dloplan.geom2d import Workspace

from conftest import random_scene


@pytest.fixture
def scene(rng):
    return random_scene(rng, 5)


def test_polygon_sd_backends_agree(scene, rng):
    pts = rng.uniform(-0.2, 1.2, (300, 2))
    for o in scene.obstacles:
        d0, g0 = kernels.polygon_sd_numpy(pts, o.vertices)
        d1, g1 = kernels.polygon_sd_numba(pts, o.vertices)
        assert np.allclose(d0, d1, atol=1e-14)
        assert np.allclose(g0, g1, atol=1e-12)


def test_clearance_backends_agree(scene, rng):
    pts = rng.uniform(0, 1, (300, 2))
    v, s = scene.packed
    for walls in (True, False):
        d0, g0 = kernels.clearance_numpy(pts, v, s, 1.0, 1.0, walls)
        d1, g1 = kernels.clearance_numba(pts, v, s, 1.0, 1.0, walls)
        assert np.allclose(d0, d1, atol=1e-14)
        assert np.allclose(g0, g1, atol=1e-12)


def test_segment_clearance_backends_agree(scene, rng):
    v, s = scene.packed
    for _ in range(200):
        a, b = rng.uniform(0, 1, (2, 2))
        x = kernels.segment_clearance_numpy(a, b, v, s, 1.0, 1.0, True)
        y = kernels.segment_clearance_numba(a[0], a[1], b[0], b[1], v, s, 1.0, 1.0, True)
        assert x == pytest.approx(y, abs=1e-13)


def test_sigmoid_interp_backends_agree(rng):
    wps = np.cumsum(rng.normal(size=(30, 2)), axis=0)
    sig = np.concatenate([[0], np.cumsum(rng.uniform(0.1, 1, 29))])
    sig /= sig[-1]
    q = rng.uniform(0, 1, 100)
    v0, d0 = kernels.sigmoid_interp_numpy(wps, sig, 50.0, q)
    v1, d1 = kernels.sigmoid_interp_numba(wps, sig, 50.0, q)
    assert np.allclose(v0, v1, atol=1e-12)
    assert np.allclose(d0, d1, rtol=1e-10, atol=1e-10)


def test_empty_workspace_kernels():
    w = Workspace(1.0, 2.0)
    v, s = w.packed
    d, _ = kernels.clearance(np.array([[0.5, 0.5]]), v, s, 1.0, 2.0)
    assert d[0] == pytest.approx(0.5)


@pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba unavailable")
def test_numba_can_be_disabled_by_environment():
    code = ("from dloplan import _accel, kernels, dlo_sim\n"
            "assert not _accel.USE_NUMBA\n"
            "assert not hasattr(kernels.chain_relax_kernel, 'py_func')\n"
            "s = dlo_sim.init_sim(dlo_sim.CableParams(), [[0.1, 0.1, 0.3], [0.35, 0.1, -0.3]])\n"
            "print(float(s.shape.sum()))\n")
    env = dict(os.environ, DLOPLAN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    from dloplan import dlo_sim
    ref = dlo_sim.init_sim(dlo_sim.CableParams(), [[0.1, 0.1, 0.3], [0.35, 0.1, -0.3]])
    assert float(out.stdout) == pytest.approx(float(ref.shape.sum()), abs=1e-9)

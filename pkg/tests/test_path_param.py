import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dloplan.path_param import ParametrizedPath, interpolate, interpolate_grad, segment_point
from dloplan.pivot_planner import Path


def pp_of(wps, sharpness=50.0):
    return ParametrizedPath(Path.from_waypoints(wps), sharpness)


def test_segment_point_examples():
    pp = pp_of([[0, 0], [1, 0], [1, 1]])
    assert np.array_equal(segment_point(pp, 0, 0.0), [0, 0])
    assert np.allclose(segment_point(pp, 0, 0.5), [1, 0])
    assert np.allclose(segment_point(pp, 0, 0.25), [0.5, 0])
    # extrapolates beyond its own interval
    assert np.allclose(segment_point(pp, 0, 1.0), [2, 0])


def test_single_segment_exact():
    pp = pp_of([[0, 0], [2, 0]])
    assert np.allclose(interpolate(pp, 0.25), [0.5, 0], atol=1e-15)
    s = np.linspace(0, 1, 11)
    v, d = interpolate_grad(pp, s)
    assert np.allclose(v, np.stack([2 * s, 0 * s], 1), atol=1e-14)
    assert np.allclose(d, [[2, 0]] * 11, atol=1e-12)


def test_right_angle_corner():
    v = interpolate(pp_of([[0, 0], [1, 0], [1, 1]]), 0.5)
    assert np.linalg.norm(v - [1, 0]) < 0.02


def test_boundary_leakage_decreases_with_sharpness():
    th = np.linspace(0, np.pi / 2, 60)
    wps = np.stack([np.cos(th), np.sin(th)], 1)
    errs = []
    for a in (10.0, 50.0, 200.0):
        pp = pp_of(wps, a)
        errs.append(np.linalg.norm(interpolate(pp, 0.0, pin=False) - pp.path.waypoints[0]))
    assert errs[0] > errs[1] > errs[2]
    L = pp.path.length
    assert errs[1] < 1e-3 * L


def test_pinned_endpoints_exact(rng):
    pp = pp_of(np.cumsum(rng.normal(size=(20, 2)), axis=0))
    assert np.array_equal(interpolate(pp, 0.0), pp.path.waypoints[0])
    assert np.array_equal(interpolate(pp, 1.0), pp.path.waypoints[-1])


def test_constant_path_derivative_zero():
    pp = ParametrizedPath(Path([[0.3, 0.3]] * 4, [0, 0.2, 0.6, 1.0]))
    _, d = interpolate_grad(pp, np.linspace(0, 1, 7))
    assert np.allclose(d, 0, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 0.99))
def test_derivative_matches_fd(seed, s):
    r = np.random.default_rng(seed)
    pp = pp_of(np.cumsum(r.uniform(-1, 1, (8, 2)), axis=0))
    _, d = interpolate_grad(pp, s)
    h = 1e-6
    fd = (interpolate(pp, s + h, pin=False) - interpolate(pp, s - h, pin=False)) / (2 * h)
    assert np.linalg.norm(d - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


def test_smoothness_bound(rng):
    wps = np.cumsum(rng.uniform(-0.1, 0.1, (30, 2)), axis=0)
    pp = pp_of(wps)
    slope = (np.hypot(*np.diff(wps, axis=0).T) / np.diff(pp.path.sigma)).max()
    h = 1e-4
    s = np.linspace(0, 1 - h, 500)
    jump = np.linalg.norm(interpolate(pp, s + h, pin=False) - interpolate(pp, s, pin=False), axis=1)
    assert jump.max() <= 2 * slope * h

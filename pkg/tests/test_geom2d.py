import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dloplan import geom2d
from dloplan.geom2d import ConvexObstacle, GeometryError, Workspace

from conftest import random_scene


def dense_boundary_distance(p, verts, k=4000):
    best = np.inf
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        t = np.linspace(0, 1, k)[:, None]
        best = min(best, np.linalg.norm(a + t * (b - a) - p, axis=1).min())
    return best


def test_signed_distance_examples(unit_square):
    assert geom2d.signed_distance((1.0, 0.0), unit_square) == pytest.approx(0.5, abs=1e-12)
    assert geom2d.signed_distance((0.0, 0.0), unit_square) == pytest.approx(-0.5, abs=1e-12)
    assert geom2d.signed_distance((1.0, 1.0), unit_square) == pytest.approx(math.sqrt(2) * 0.5, abs=1e-12)


def test_signed_distance_matches_boundary_sampling(unit_square, rng):
    o = ConvexObstacle([[0, 0], [1, 0.2], [1.2, 1], [0.1, 0.8]])
    for _ in range(50):
        p = rng.uniform(-1, 2, 2)
        d = geom2d.signed_distance(p, o)
        if d > 0:
            assert d == pytest.approx(dense_boundary_distance(p, o.vertices, 20000), abs=1e-6)


def test_obstacle_validation():
    with pytest.raises(GeometryError):
        ConvexObstacle([[0, 0], [1, 0]])
    with pytest.raises(GeometryError):
        ConvexObstacle([[0, 0], [0, 1], [1, 0]])          # clockwise
    with pytest.raises(GeometryError):
        ConvexObstacle([[0, 0], [1, 0], [1, 0], [0, 1]])  # repeated vertex
    with pytest.raises(GeometryError):
        ConvexObstacle([[0, 0], [2, 0], [1, 0.5], [2, 1], [0, 1]])  # not convex
    with pytest.raises(GeometryError):
        Workspace(1.0, 1.0, (ConvexObstacle.rectangle(0.95, 0.5, 0.2, 0.2),))


def test_min_clearance_examples():
    assert geom2d.min_clearance((0.5, 0.5), Workspace(1.0, 1.0)) == pytest.approx(0.5)
    w = Workspace(1.0, 1.0, (ConvexObstacle.rectangle(0.5, 0.7, 0.2, 0.2),))
    # 0.1 from the obstacle, 0.4 from the nearest wall
    assert geom2d.min_clearance((0.5, 0.5), w) == pytest.approx(0.1)


def test_min_clearance_brute_force(rng):
    for _ in range(10):
        w = random_scene(rng)
        for p in rng.uniform(0, 1, (20, 2)):
            expect = min([geom2d.signed_distance(p, o) for o in w.obstacles] +
                         [p[0], p[1], 1 - p[0], 1 - p[1]])
            assert geom2d.min_clearance(p, w) == pytest.approx(expect, abs=1e-12)
            for o in w.obstacles:
                assert geom2d.min_clearance(p, w) <= geom2d.signed_distance(p, o) + 1e-15


def test_segment_collides_examples():
    w = Workspace(1.0, 1.0, (ConvexObstacle.rectangle(0.5, 0.5, 0.2, 0.2),))
    assert not geom2d.segment_collides((0.1, 0.1), (0.9, 0.1), w, 0.05)
    assert geom2d.segment_collides((0.1, 0.5), (0.9, 0.5), w, 0.0)
    # tangent at exactly the margin: 0.7 - 0.6 = 0.1
    assert not geom2d.segment_collides((0.2, 0.7), (0.8, 0.7), w, 0.1)
    assert geom2d.segment_collides((0.2, 0.7), (0.8, 0.7), w, 0.1 + 1e-6)
    with pytest.raises(GeometryError):
        geom2d.segment_collides((0.2, 0.7), (0.8, 0.7), w, -0.1)


def test_segment_collides_symmetric_and_matches_sampling(rng):
    w = random_scene(rng, 5)
    for _ in range(200):
        a, b = rng.uniform(0, 1, (2, 2))
        m = rng.uniform(0, 0.05)
        r = geom2d.segment_collides(a, b, w, m)
        assert r == geom2d.segment_collides(b, a, w, m)
        t = np.linspace(0, 1, 2001)[:, None]
        sampled = geom2d.clearance_many(a + t * (b - a), w)[0].min()
        if sampled < m - 1e-3:
            assert r
        if sampled > m + 1e-3:
            assert not r


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_signed_distance_lipschitz(x0, y0, x1, y1):
    o = ConvexObstacle([[0, 0], [1, 0.2], [1.2, 1], [0.1, 0.8]])
    d = abs(geom2d.signed_distance((x0, y0), o) - geom2d.signed_distance((x1, y1), o))
    assert d <= math.hypot(x1 - x0, y1 - y0) + 1e-12


def test_signed_distance_gradient_fd(unit_square, rng):
    pts = rng.uniform(-1.5, 1.5, (40, 2))
    d, g = geom2d.signed_distance_grad(pts, unit_square)
    h = 1e-7
    for p, gp in zip(pts, g):
        fd = [(geom2d.signed_distance(p + e * h, unit_square) - geom2d.signed_distance(p - e * h, unit_square)) / (2 * h)
              for e in np.eye(2)]
        assert np.allclose(gp, fd, atol=1e-5)


def test_polygons_intersect_touching_counts():
    a = ConvexObstacle.rectangle(0, 0, 1, 1).vertices
    assert geom2d.polygons_intersect(a, ConvexObstacle.rectangle(1.0, 0, 1, 1).vertices)
    assert not geom2d.polygons_intersect(a, ConvexObstacle.rectangle(1.01, 0, 1, 1).vertices)

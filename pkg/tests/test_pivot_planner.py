import numpy as np
import pytest

from dloplan import geom2d
from dloplan.geom2d import ConvexObstacle, Workspace
from dloplan.pivot_planner import (Path, PivotCostWeights, PlannerConfig, PlanningError, edge_cost, path_cost,
                                   plan_pivot)

EMPTY = Workspace(1.0, 1.0)


def test_edge_cost_pure_length():
    assert edge_cost((0.4, 0.5), (0.6, 0.5), EMPTY, PivotCostWeights(1.0, 0.0)) == pytest.approx(0.2, abs=1e-12)


def test_edge_cost_constant_clearance():
    # clearance along y=0.4 is 0.4 everywhere on x in [0.4, 0.6]
    c = edge_cost((0.4, 0.4), (0.6, 0.4), EMPTY, PivotCostWeights(0.0, 1.0))
    assert c == pytest.approx(0.2 / 0.4, rel=1e-9)


def test_edge_cost_is_sum_of_terms():
    a, b = (0.2, 0.3), (0.7, 0.6)
    both = edge_cost(a, b, EMPTY, PivotCostWeights(1.0, 1.0))
    assert both == pytest.approx(edge_cost(a, b, EMPTY, PivotCostWeights(1.0, 0.0))
                                 + edge_cost(a, b, EMPTY, PivotCostWeights(0.0, 1.0)), rel=1e-12)


def test_path_cost_additivity_and_quadrature():
    w = Workspace(1.0, 1.0, (ConvexObstacle.rectangle(0.5, 0.5, 0.2, 0.2),))
    wt = PivotCostWeights(1.0, 1.0)
    a, b = np.array([0.1, 0.1]), np.array([0.9, 0.2])
    assert path_cost(Path.from_waypoints([a, b]), w, wt) == pytest.approx(edge_cost(a, b, w, wt), rel=1e-12)
    # splitting at the midpoint where the clearance is the constant 0.2 from the bottom wall
    c, d = np.array([0.3, 0.2]), np.array([0.7, 0.2])
    whole = path_cost(Path.from_waypoints([c, d]), EMPTY, wt)
    split = path_cost(Path.from_waypoints([c, 0.5 * (c + d), d]), EMPTY, wt)
    assert abs(whole - split) < 1e-9
    # fine-sampled line integral oracle, independent of the package's quadrature
    t = np.linspace(0, 1, 20001)
    pts = a + t[:, None] * (b - a)
    delta = np.maximum(np.array([geom2d.min_clearance(p, w) for p in pts]), 1e-3)
    L = np.linalg.norm(b - a)
    oracle = L + np.trapezoid(1 / delta, t * L)
    assert edge_cost(a, b, w, wt) == pytest.approx(oracle, rel=0.01)


def test_plan_empty_workspace_near_straight():
    start, goal = np.array([0.1, 0.2]), np.array([0.85, 0.75])
    res = plan_pivot(start, goal, EMPTY, PivotCostWeights(1.0, 0.0), PlannerConfig(max_iterations=5000, rng_seed=7))
    assert res.success
    assert res.cost <= 1.2 * np.linalg.norm(goal - start)
    assert np.allclose(res.path.waypoints[0], start) and np.allclose(res.path.waypoints[-1], goal)


def test_goal_inside_obstacle_rejected():
    w = Workspace(1.0, 1.0, (ConvexObstacle.rectangle(0.5, 0.5, 0.2, 0.2),))
    with pytest.raises(PlanningError):
        plan_pivot((0.1, 0.1), (0.5, 0.5), w, PivotCostWeights(), PlannerConfig())


@pytest.fixture(scope="module")
def two_block_scene():
    return Workspace(1.0, 1.0, (ConvexObstacle.rectangle(0.35, 0.5, 0.2, 0.3),
                                ConvexObstacle.rectangle(0.7, 0.5, 0.2, 0.3)))


def test_clearance_weight_increases_clearance(two_block_scene):
    w = two_block_scene
    cfg = PlannerConfig(max_iterations=2500, rng_seed=3)
    short = plan_pivot((0.5, 0.1), (0.5, 0.9), w, PivotCostWeights(1.0, 0.0), cfg)
    safe = plan_pivot((0.5, 0.1), (0.5, 0.9), w, PivotCostWeights(1.0, 1.0), cfg)
    assert short.success and safe.success
    c_short = geom2d.polyline_clearance(short.path.waypoints, w)
    c_safe = geom2d.polyline_clearance(safe.path.waypoints, w)
    assert c_safe >= c_short


def test_planner_invariants(two_block_scene):
    w = two_block_scene
    cfg = PlannerConfig(max_iterations=1500, rng_seed=11)
    wt = PivotCostWeights()
    a = plan_pivot((0.1, 0.1), (0.9, 0.9), w, wt, cfg)
    b = plan_pivot((0.1, 0.1), (0.9, 0.9), w, wt, cfg)
    assert np.array_equal(a.path.waypoints, b.path.waypoints)
    for p, q in zip(a.path.waypoints[:-1], a.path.waypoints[1:]):
        assert not geom2d.segment_collides(p, q, w, cfg.collision_margin)
    trace = np.asarray(a.cost_trace, dtype=float)
    finite = trace[np.isfinite(trace)]
    assert np.all(np.diff(finite) <= 1e-12)
    assert a.cost > 0
    assert a.cost == pytest.approx(path_cost(a.path, w, wt, cfg.step_size / 10), rel=1e-9)
    sg = a.path.sigma
    seg = np.hypot(*np.diff(a.path.waypoints, axis=0).T)
    assert np.allclose(sg, np.concatenate([[0], np.cumsum(seg)]) / seg.sum())

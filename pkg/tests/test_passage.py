import itertools

import numpy as np
import pytest

from dloplan import geom2d
from dloplan.geom2d import ConvexObstacle, GeometryError, Workspace
from dloplan.passage import (Passage, all_obstacles, detect_passages, nearest_segment, passage_valid,
                             traversed_passages)
from dloplan.pivot_planner import Path

from conftest import random_scene


def sample_boundary(v, k=400):
    t = np.linspace(0, 1, k, endpoint=False)[:, None]
    return np.concatenate([a + t * (b - a) for a, b in zip(v, np.roll(v, -1, axis=0))])


def test_nearest_segment_facing_squares():
    a = ConvexObstacle.rectangle(0.0, 0.0, 1.0, 1.0)
    b = ConvexObstacle.rectangle(1.2, 0.0, 1.0, 1.0)
    pa, pb, d = nearest_segment(a, b)
    assert d == pytest.approx(0.2)
    assert np.allclose(pa, [0.5, 0.0]) and np.allclose(pb, [0.7, 0.0])


def test_nearest_segment_diagonal_vertex_pair():
    a = ConvexObstacle.rectangle(0.0, 0.0, 1.0, 1.0)
    b = ConvexObstacle.rectangle(1.5, 1.5, 1.0, 1.0)
    pa, pb, d = nearest_segment(a, b)
    assert np.allclose(pa, [0.5, 0.5]) and np.allclose(pb, [1.0, 1.0])
    sa, sb = sample_boundary(a.vertices), sample_boundary(b.vertices)
    brute = np.linalg.norm(sa[:, None] - sb[None], axis=-1).min()
    assert d == pytest.approx(brute, abs=1e-9)


def test_nearest_segment_touching_rejected():
    a = ConvexObstacle.rectangle(0.0, 0.0, 1.0, 1.0)
    with pytest.raises(GeometryError):
        nearest_segment(a, ConvexObstacle.rectangle(1.0, 0.0, 1.0, 1.0))


def test_passage_valid_examples():
    a = ConvexObstacle.rectangle(0.2, 0.5, 0.1, 0.1)
    b = ConvexObstacle.rectangle(0.8, 0.5, 0.1, 0.1)
    pa, pb, d = nearest_segment(a, b)
    p = Passage(pa, pb, d, (0, 1))
    assert passage_valid(p, Workspace(1.0, 1.0, (a, b)), [a, b])
    mid = ConvexObstacle([[0.5, 0.5], [0.55, 0.5], [0.55, 0.55]])
    assert not passage_valid(p, Workspace(1.0, 1.0, (a, b, mid)), [a, b, mid])
    # tangent from outside: circle centre (0.5, 0.5), radius 0.25
    tangent = ConvexObstacle([[0.4, 0.75], [0.6, 0.75], [0.5, 0.85]])
    assert passage_valid(p, Workspace(1.0, 1.0, (a, b, tangent)), [a, b, tangent])


def test_empty_workspace_has_wall_passages():
    ps = detect_passages(Workspace(1.0, 1.0))
    # walls: bottom=0, right=1, top=2, left=3; adjacent walls touch, opposite ones form passages
    assert sorted(p.obstacle_ids for p in ps) == [(0, 2), (1, 3)]
    assert all(p.width == pytest.approx(1.0) for p in ps)


def test_third_obstacle_between_removes_far_pair():
    a = ConvexObstacle.rectangle(0.2, 0.5, 0.1, 0.1)
    m = ConvexObstacle.rectangle(0.5, 0.5, 0.1, 0.1)
    b = ConvexObstacle.rectangle(0.8, 0.5, 0.1, 0.1)
    ps = detect_passages(Workspace(1.0, 1.0, (a, m, b)))
    ids = {p.obstacle_ids for p in ps}
    assert (0, 2) not in ids and (0, 1) in ids and (1, 2) in ids


def brute_force_passages(w):
    """Independent oracle: dense boundary sampling for the pair distance, explicit circle test."""
    obs = all_obstacles(w)
    out = set()
    for i, j in itertools.combinations(range(len(obs)), 2):
        if geom2d.polygons_intersect(obs[i].vertices, obs[j].vertices):
            continue
        pa, pb, d = nearest_segment(obs[i], obs[j])
        c, r = 0.5 * (pa + pb), 0.5 * d
        ok = all(geom2d.signed_distance(c, obs[k]) >= r - 1e-9 for k in range(len(obs)) if k not in (i, j))
        if ok:
            out.add((i, j))
    return out


def test_detect_passages_matches_oracle_and_support_distance(rng):
    for _ in range(10):
        w = random_scene(rng, 4)
        ps = detect_passages(w)
        assert {p.obstacle_ids for p in ps} == brute_force_passages(w)
        obs = all_obstacles(w)
        for p in ps:
            sa, sb = sample_boundary(obs[p.obstacle_ids[0]].vertices, 300), sample_boundary(obs[p.obstacle_ids[1]].vertices, 300)
            brute = np.linalg.norm(sa[:, None] - sb[None], axis=-1).min()
            assert p.width <= brute + 1e-12
            assert p.width == pytest.approx(brute, abs=5e-3)


def test_detect_passages_permutation_invariant(rng):
    w = random_scene(rng, 4)
    perm = rng.permutation(len(w.obstacles))
    w2 = Workspace(w.width, w.height, tuple(w.obstacles[k] for k in perm))
    n = len(w.obstacles)

    def key(ws, relabel):
        return sorted((tuple(sorted(relabel(i) for i in p.obstacle_ids)), round(p.width, 12))
                      for p in detect_passages(ws))
    inv = {int(k): int(i) for i, k in enumerate(perm)}
    assert key(w, lambda i: i) == key(w2, lambda i: [k for k, v in inv.items() if v == i][0] if i < n else i)


def test_traversed_passages_ordering():
    a = ConvexObstacle.rectangle(0.5, 0.25, 0.2, 0.1)
    b = ConvexObstacle.rectangle(0.5, 0.75, 0.2, 0.1)
    w = Workspace(1.0, 1.0, (a, b))
    ps = detect_passages(w)
    assert traversed_passages(Path.from_waypoints([[0.05, 0.05], [0.1, 0.05]]), ps) == []
    path = Path.from_waypoints([[0.3, 0.05], [0.52, 0.5], [0.3, 0.95]])
    hits = traversed_passages(path, ps)
    sig = [s for _, s in hits]
    assert len(hits) >= 2 and sig == sorted(sig)
    assert all(0 < s < 1 for s in sig)

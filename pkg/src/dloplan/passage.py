"""Passages: shortest segments between obstacle pairs with an empty diameter circle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dloplan import geom2d
from dloplan.geom2d import ConvexObstacle, GeometryError, Workspace
from dloplan.kernels import GEO_EPS
from dloplan.pivot_planner import Path


@dataclass(frozen=True, eq=False)
class Passage:
    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    width: float
    obstacle_ids: tuple

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.endpoint_a + self.endpoint_b)

    @property
    def direction(self) -> np.ndarray:
        """Unit vector from endpoint_a to endpoint_b."""
        return (self.endpoint_b - self.endpoint_a) / self.width

    def __eq__(self, other):
        return (isinstance(other, Passage) and self.obstacle_ids == other.obstacle_ids
                and np.allclose(self.endpoint_a, other.endpoint_a) and np.allclose(self.endpoint_b, other.endpoint_b))


@dataclass(frozen=True)
class PassageSet:
    passages: tuple = ()

    def __len__(self):
        return len(self.passages)

    def __iter__(self):
        return iter(self.passages)

    def __getitem__(self, i):
        return self.passages[i]


def all_obstacles(w: Workspace):
    """User obstacles followed by the four boundary walls (bottom, right, top, left)."""
    return list(w.obstacles) + w.wall_obstacles()


def nearest_segment(o1: ConvexObstacle, o2: ConvexObstacle):
    """Closest point pair between two disjoint convex polygons and their distance.

    When the minimum is attained along parallel facing edges the midpoint of
    the overlap is returned, so the result is unique.
    """
    a, b = o1.vertices, o2.vertices
    if geom2d.polygons_intersect(a, b):
        raise GeometryError("obstacles touch or overlap; no separating segment exists")
    cands = []
    for src, dst, flip in ((a, b, False), (b, a, True)):
        e0 = dst
        e1 = np.roll(dst, -1, axis=0)
        ev = e1 - e0
        l2 = (ev ** 2).sum(axis=1)
        t = np.clip(((src[:, None, :] - e0[None]) * ev[None]).sum(axis=2) / l2[None], 0.0, 1.0)
        q = e0[None] + t[..., None] * ev[None]                  # (|src|, |dst|, 2)
        p = np.broadcast_to(src[:, None, :], q.shape)
        pair = (q, p) if flip else (p, q)
        cands.append(np.stack(pair, axis=2).reshape(-1, 2, 2))  # rows: (point on o1, point on o2)
    cands = np.concatenate(cands)
    d = np.hypot(*(cands[:, 1] - cands[:, 0]).T)
    dmin = d.min()
    tight = cands[d <= dmin + GEO_EPS]
    pa = tight[:, 0]
    # extreme points of the minimiser set on o1, then its midpoint
    if len(pa) > 1:
        spread = pa - pa[0]
        axis = spread[np.argmax(np.hypot(*spread.T))]
        if np.hypot(*axis) > GEO_EPS:
            proj = pa @ axis
            mid_a = 0.5 * (pa[np.argmin(proj)] + pa[np.argmax(proj)])
            offset = tight[np.argmin(proj), 1] - tight[np.argmin(proj), 0]
            return mid_a, mid_a + offset, float(dmin)
    best = tight[0]
    return best[0].copy(), best[1].copy(), float(dmin)


def passage_valid(p: Passage, w: Workspace, obstacles=None) -> bool:
    """No third obstacle reaches strictly inside the circle whose diameter is the passage."""
    obstacles = obstacles if obstacles is not None else all_obstacles(w)
    center = p.midpoint
    r = 0.5 * p.width
    for k, o in enumerate(obstacles):
        if k in p.obstacle_ids:
            continue
        if geom2d.signed_distance(center, o) < r - GEO_EPS:
            return False
    return True


def detect_passages(w: Workspace) -> PassageSet:
    """All valid passages, ordered by obstacle-id pair.

    Walls take ids ``len(w.obstacles) + (0..3)``.  Pairs in contact have no
    free gap between them and produce no passage.
    """
    obstacles = all_obstacles(w)
    out = []
    for i in range(len(obstacles)):
        for j in range(i + 1, len(obstacles)):
            if geom2d.polygons_intersect(obstacles[i].vertices, obstacles[j].vertices):
                continue
            pa, pb, d = nearest_segment(obstacles[i], obstacles[j])
            if d <= GEO_EPS:
                continue
            cand = Passage(pa, pb, d, (i, j))
            if passage_valid(cand, w, obstacles):
                out.append(cand)
    return PassageSet(tuple(out))


def traversed_passages(path: Path, ps: PassageSet):
    """(passage index, sigma) for every crossing of the path with a passage, sorted by sigma."""
    wp = path.waypoints
    sg = path.sigma
    hits = []
    for pid, p in enumerate(ps):
        found = []
        for k in range(len(wp) - 1):
            r = geom2d.segment_intersection(wp[k], wp[k + 1], p.endpoint_a, p.endpoint_b)
            if r is None:
                continue
            s = sg[k] + r[0] * (sg[k + 1] - sg[k])
            if not any(abs(s - f) < 1e-9 for f in found):
                found.append(s)
        hits.extend((pid, s) for s in found)
    hits.sort(key=lambda h: (h[1], h[0]))
    return hits

"""2D geometry: convex obstacles, workspace, signed distances and collision tests."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from dloplan import kernels
from dloplan.kernels import GEO_EPS


class GeometryError(ValueError):
    pass


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"non-finite point {p!r}")
    return arr


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass(frozen=True, eq=False)
class ConvexObstacle:
    """Convex polygon with counter-clockwise vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise GeometryError(f"obstacle needs >= 3 two-dimensional vertices, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GeometryError("obstacle has non-finite vertices")
        e = np.roll(v, -1, axis=0) - v
        if np.any(np.hypot(e[:, 0], e[:, 1]) <= GEO_EPS):
            raise GeometryError("obstacle has repeated vertices")
        turns = _cross2(e, np.roll(e, -1, axis=0))
        if np.any(turns <= GEO_EPS):
            raise GeometryError("obstacle vertices must be strictly convex and counter-clockwise")
        # a star polygon also turns left everywhere; total turning must be one revolution
        ang = np.arctan2(turns, (e * np.roll(e, -1, axis=0)).sum(axis=1)).sum()
        if abs(ang - 2 * np.pi) > 1e-6:
            raise GeometryError("obstacle polygon is self-intersecting")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def rectangle(cls, cx, cy, w, h):
        hx, hy = w / 2.0, h / 2.0
        return cls([[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]])

    @classmethod
    def from_points(cls, pts):
        """Build from an unordered point cloud (convex hull, CCW)."""
        from scipy.spatial import ConvexHull

        pts = np.asarray(pts, dtype=np.float64)
        hull = ConvexHull(pts)
        return cls(pts[hull.vertices])

    def __eq__(self, other):
        return isinstance(other, ConvexObstacle) and np.array_equal(self.vertices, other.vertices)

    def __hash__(self):
        return hash(self.vertices.tobytes())


@dataclass(frozen=True, eq=False)
class Workspace:
    width: float
    height: float
    obstacles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise GeometryError("workspace width and height must be positive")
        obs = tuple(o if isinstance(o, ConvexObstacle) else ConvexObstacle(o) for o in self.obstacles)
        for k, o in enumerate(obs):
            v = o.vertices
            if (v[:, 0].min() < -GEO_EPS or v[:, 1].min() < -GEO_EPS
                    or v[:, 0].max() > self.width + GEO_EPS or v[:, 1].max() > self.height + GEO_EPS):
                raise GeometryError(f"obstacle {k} has vertices outside the workspace")
        object.__setattr__(self, "obstacles", obs)

    def __eq__(self, other):
        return (isinstance(other, Workspace) and self.width == other.width and self.height == other.height
                and self.obstacles == other.obstacles)

    @cached_property
    def packed(self):
        """(verts, starts) arrays used by the kernels."""
        if not self.obstacles:
            return np.zeros((0, 2)), np.zeros(1, dtype=np.int64)
        verts = np.ascontiguousarray(np.concatenate([o.vertices for o in self.obstacles]))
        starts = np.zeros(len(self.obstacles) + 1, dtype=np.int64)
        starts[1:] = np.cumsum([len(o.vertices) for o in self.obstacles])
        return verts, starts

    def wall_obstacles(self, thickness=None):
        """The boundary as four thin rectangles just outside the workspace.

        Order: bottom, right, top, left.
        """
        t = thickness if thickness is not None else 0.1 * max(self.width, self.height)
        w, h = self.width, self.height
        return [
            ConvexObstacle([[0, -t], [w, -t], [w, 0], [0, 0]]),
            ConvexObstacle([[w, 0], [w + t, 0], [w + t, h], [w, h]]),
            ConvexObstacle([[0, h], [w, h], [w, h + t], [0, h + t]]),
            ConvexObstacle([[-t, 0], [0, 0], [0, h], [-t, h]]),
        ]


def signed_distance(p, o: ConvexObstacle) -> float:
    """Exact signed distance: positive outside, negative inside."""
    sd, _ = kernels.polygon_sd(as_point(p)[None], o.vertices)
    return float(sd[0])


def signed_distance_grad(points, o: ConvexObstacle):
    return kernels.polygon_sd(points, o.vertices)


def boundary_distance(p, w: Workspace) -> float:
    p = as_point(p)
    return float(min(p[0], w.width - p[0], p[1], w.height - p[1]))


def min_clearance(p, w: Workspace) -> float:
    """Smallest signed distance to any obstacle or to the workspace boundary."""
    verts, starts = w.packed
    d, _ = kernels.clearance(as_point(p)[None], verts, starts, w.width, w.height)
    return float(d[0])


def clearance_many(points, w: Workspace, walls=True):
    """Vectorised clearance and its gradient for an (N, 2) point array."""
    verts, starts = w.packed
    return kernels.clearance(points, verts, starts, w.width, w.height, walls)


def segment_clearance(a, b, w: Workspace, walls=True) -> float:
    """Distance from segment ab to the closest obstacle or boundary (0 if touching)."""
    verts, starts = w.packed
    return kernels.segment_clearance(as_point(a), as_point(b), verts, starts, w.width, w.height, walls)


def segment_collides(a, b, w: Workspace, margin: float = 0.0) -> bool:
    """True iff some point of segment ab is closer than ``margin`` to an obstacle."""
    if margin < 0:
        raise GeometryError("margin must be non-negative")
    a, b = as_point(a), as_point(b)
    c = segment_clearance(a, b, w)
    if c > GEO_EPS:
        return c < margin - GEO_EPS
    # touching or crossing: use the signed minimum so tangency at margin 0 stays collision-free
    return segment_min_clearance(a, b, w) < margin - GEO_EPS


def _halfplane_min(a, b, verts):
    """min over t in [0, 1] of max_i n_i.(a + t(b - a)) - n_i.v_i; exact for a convex polygon."""
    e = np.roll(verts, -1, axis=0) - verts
    n = np.stack([e[:, 1], -e[:, 0]], axis=1) / np.hypot(e[:, 0], e[:, 1])[:, None]
    alpha = n @ a - (n * verts).sum(axis=1)
    beta = n @ (b - a)
    ts = [0.0, 1.0]
    for i in range(len(alpha)):
        for j in range(i + 1, len(alpha)):
            if abs(beta[i] - beta[j]) > 1e-15:
                t = (alpha[j] - alpha[i]) / (beta[i] - beta[j])
                if 0.0 < t < 1.0:
                    ts.append(t)
    ts = np.asarray(ts)
    return float((alpha[:, None] + beta[:, None] * ts[None]).max(axis=0).min())


def segment_min_clearance(a, b, w: Workspace, walls=True) -> float:
    """Minimum of the signed clearance along segment ab (negative when it enters an obstacle)."""
    a, b = as_point(a), as_point(b)
    c = segment_clearance(a, b, w, walls)
    if c > GEO_EPS:
        return c
    best = c
    for o in w.obstacles:
        best = min(best, _halfplane_min(a, b, o.vertices))
    if walls:
        best = min(best, boundary_distance(a, w), boundary_distance(b, w))
    return float(best)


def polyline_clearance(points, w: Workspace, walls=True) -> float:
    pts = np.asarray(points, dtype=np.float64)
    verts, starts = w.packed
    if len(pts) == 1:
        return float(clearance_many(pts, w, walls)[0][0])
    return float(kernels.polyline_clearance(pts, verts, starts, w.width, w.height, walls))


def point_segment_closest(p, a, b):
    ab = b - a
    l2 = float(ab @ ab)
    t = 0.0 if l2 == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / l2))
    return a + t * ab


def segment_intersection(p0, p1, q0, q1):
    """Parameters (t, u) where p0 + t(p1-p0) = q0 + u(q1-q0), or None if parallel/no hit."""
    r = p1 - p0
    s = q1 - q0
    den = _cross2(r, s)
    if abs(den) < 1e-15:
        return None
    qp = q0 - p0
    t = _cross2(qp, s) / den
    u = _cross2(qp, r) / den
    if -GEO_EPS <= t <= 1 + GEO_EPS and -GEO_EPS <= u <= 1 + GEO_EPS:
        return float(t), float(u)
    return None


def polygons_intersect(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons (touching counts as intersecting)."""
    for poly in (a, b):
        e = np.roll(poly, -1, axis=0) - poly
        axes = np.stack([e[:, 1], -e[:, 0]], axis=1)
        pa = a @ axes.T
        pb = b @ axes.T
        if np.any(pa.max(axis=0) < pb.min(axis=0) - GEO_EPS) or np.any(pb.max(axis=0) < pa.min(axis=0) - GEO_EPS):
            return False
    return True

"""Homotopic keypoint path sets derived from a pivot path and the passages it crosses."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from dloplan import geom2d
from dloplan.geom2d import Workspace
from dloplan.kernels import GEO_EPS
from dloplan.passage import Passage, PassageSet, all_obstacles, traversed_passages
from dloplan.pivot_planner import Path

log = logging.getLogger(__name__)


class PathSetError(RuntimeError):
    pass


class MissedPassageError(PathSetError):
    def __init__(self, keypoint, passage_id=None):
        self.keypoint = keypoint
        self.passage_id = passage_id
        super().__init__(f"keypoint {keypoint} path does not cross passage {passage_id}")


@dataclass(frozen=True, eq=False)
class DLOShape:
    """Ordered 2D keypoints of the cable."""

    keypoints: np.ndarray

    def __post_init__(self):
        k = np.array(self.keypoints, dtype=np.float64)
        if k.ndim != 2 or k.shape[1] != 2 or len(k) < 3:
            raise ValueError("a DLO shape needs at least three 2D keypoints")
        if not np.all(np.isfinite(k)):
            raise ValueError("non-finite keypoint")
        spacing = np.hypot(*np.diff(k, axis=0).T)
        nominal = spacing.mean()
        if nominal <= 0 or np.any(spacing < 0.2 * nominal) or np.any(spacing > 2.0 * nominal):
            raise ValueError("keypoint spacing outside the [0.2, 2.0] x nominal sanity band")
        k.setflags(write=False)
        object.__setattr__(self, "keypoints", k)

    def __len__(self):
        return len(self.keypoints)

    def __eq__(self, other):
        return isinstance(other, DLOShape) and np.array_equal(self.keypoints, other.keypoints)

    @property
    def length(self) -> float:
        return float(np.hypot(*np.diff(self.keypoints, axis=0).T).sum())


def keypoints_of(s) -> np.ndarray:
    return s.keypoints if isinstance(s, DLOShape) else np.asarray(s, dtype=np.float64)


@dataclass(frozen=True)
class PathSetParams:
    gamma: float = 0.2
    alpha: float = 0.7
    resample_count: int = 60
    # crossings are kept this fraction of the passage width away from its ends
    edge_margin_frac: float = 0.2
    max_retries: int = 4

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.resample_count < 2:
            raise ValueError("resample_count must be at least 2")
        if not 0 <= self.edge_margin_frac < 0.5:
            raise ValueError("edge_margin_frac must lie in [0, 0.5)")


@dataclass(frozen=True)
class PathSet:
    paths: tuple
    pivot_index: int

    def __len__(self):
        return len(self.paths)

    def waypoint_array(self) -> np.ndarray:
        """(n, m+1, 2) array; requires equal waypoint counts."""
        return np.stack([p.waypoints for p in self.paths])


@dataclass
class CrossingRecord:
    passage_id: int
    sigma: float
    passage: Passage
    bound: float
    anchors: np.ndarray
    reversed: bool


@dataclass
class PathSetResult:
    path_set: PathSet
    crossings: list
    gamma: float
    attempts: int
    report: "ValidationReport"


@dataclass
class ValidationReport:
    collision_free: list = field(default_factory=list)
    min_clearance: list = field(default_factory=list)
    homotopy_failures: list = field(default_factory=list)
    spacing_ok: bool = True
    reversals: list = field(default_factory=list)

    @property
    def homotopy_ok(self) -> bool:
        return not self.homotopy_failures

    @property
    def ok(self) -> bool:
        return all(self.collision_free) and self.homotopy_ok and self.spacing_ok


def pivot_index_for(n: int) -> int:
    return n // 2


def transfer_linear(pivot: Path, start, goal, i: int, pivot_index: int | None = None) -> Path:
    """Carry the pivot path over to keypoint ``i`` with a linearly blended offset."""
    s = keypoints_of(start)
    g = keypoints_of(goal)
    if not 0 <= i < len(s):
        raise IndexError(f"keypoint {i} out of range")
    p = pivot_index_for(len(s)) if pivot_index is None else pivot_index
    ds = s[i] - s[p]
    dg = g[i] - g[p]
    sg = pivot.sigma
    wp = pivot.waypoints + ds[None] + sg[:, None] * (dg - ds)[None]
    return Path(wp, sg)


def scale_shape(s, pivot, gamma: float):
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    k = keypoints_of(s)
    c = np.asarray(pivot, dtype=np.float64)
    out = c[None] + gamma * (k - c[None])
    return DLOShape(out) if isinstance(s, DLOShape) else out


def _crossings(path: Path, a, b):
    """(sigma, point) for every crossing of the polyline with segment ab."""
    out = []
    wp, sg = path.waypoints, path.sigma
    for k in range(len(wp) - 1):
        r = geom2d.segment_intersection(wp[k], wp[k + 1], a, b)
        if r is not None:
            t = r[0]
            out.append((sg[k] + t * (sg[k + 1] - sg[k]), wp[k] + t * (wp[k + 1] - wp[k])))
    return out


def passage_intersections(paths, passage: Passage, near_sigma: float | None = None):
    """Intersection of every path with the passage segment.

    With several crossings the one whose path parameter is closest to
    ``near_sigma`` is used (the first one when ``near_sigma`` is None).
    """
    seq = paths.paths if isinstance(paths, PathSet) else paths
    pts = []
    for i, p in enumerate(seq):
        hits = _crossings(p, passage.endpoint_a, passage.endpoint_b)
        if not hits:
            raise MissedPassageError(i)
        if near_sigma is None:
            pts.append(min(hits, key=lambda h: h[0])[1])
        else:
            pts.append(min(hits, key=lambda h: abs(h[0] - near_sigma))[1])
    return np.array(pts)


def spread_bound(passage: Passage, alpha: float, cable_len: float) -> float:
    return min(passage.width, alpha * cable_len)


def redistribute(points, passage: Passage, alpha: float, cable_len: float, edge_margin: float = 0.0):
    """Centre the crossings on the passage and stretch them to the allowed spread.

    The extreme crossings end up ``min(width, alpha * cable_len)`` apart,
    further limited to ``width - 2 * edge_margin``.
    """
    pts = np.asarray(points, dtype=np.float64)
    a = passage.endpoint_a
    d = passage.direction
    u = (pts - a[None]) @ d
    lo, hi = u.min(), u.max()
    center = 0.5 * passage.width
    target = min(spread_bound(passage, alpha, cable_len), max(passage.width - 2.0 * edge_margin, 0.0))
    if hi - lo <= GEO_EPS:
        new_u = np.full_like(u, center)
    else:
        new_u = center + (u - 0.5 * (lo + hi)) * (target / (hi - lo))
    return a[None] + new_u[:, None] * d[None]


def _sub_path(pivot: Path, s0: float, s1: float) -> np.ndarray:
    inner = pivot.waypoints[(pivot.sigma > s0 + 1e-12) & (pivot.sigma < s1 - 1e-12)]
    return np.vstack([pivot.point_at(s0), inner, pivot.point_at(s1)])


def _resample(points: np.ndarray, count: int) -> np.ndarray:
    """``count`` points evenly spaced by arc length (endpoints kept)."""
    seg = np.hypot(*np.diff(points, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] <= 0:
        return np.repeat(points[:1], count, axis=0)
    t = np.linspace(0.0, cum[-1], count)
    out = np.stack([np.interp(t, cum, points[:, 0]), np.interp(t, cum, points[:, 1])], axis=1)
    out[0], out[-1] = points[0], points[-1]
    return out


def _leg_counts(pivot: Path, cuts, total_intervals: int):
    lens = np.diff(cuts)
    n_leg = len(lens)
    base = np.full(n_leg, 1)
    rest = total_intervals - n_leg
    if rest < 0:
        raise PathSetError("resample_count too small for the number of traversed passages")
    share = lens / lens.sum() * rest
    extra = np.floor(share).astype(int)
    left = rest - extra.sum()
    order = np.argsort(-(share - extra), kind="stable")
    extra[order[:left]] += 1
    return base + extra


def reconnect(pivot: Path, start, goal, crossing_sigmas, anchors, resample_count: int):
    """Chain linear transfers between successive anchor sets and resample by arc length.

    ``anchors`` is a list (one per crossing) of (n, 2) anchor arrays.
    """
    s = keypoints_of(start)
    g = keypoints_of(goal)
    n = len(s)
    p = pivot_index_for(n)
    cuts = [0.0] + list(crossing_sigmas) + [1.0]
    sets = [s] + list(anchors) + [g]
    counts = _leg_counts(pivot, np.array(cuts), resample_count - 1)
    out = [[] for _ in range(n)]
    for leg in range(len(cuts) - 1):
        s0, s1 = cuts[leg], cuts[leg + 1]
        sub = _sub_path(pivot, s0, s1)
        seg = np.hypot(*np.diff(sub, axis=0).T)
        tot = seg.sum()
        loc = np.concatenate([[0.0], np.cumsum(seg) / tot]) if tot > 0 else np.linspace(0, 1, len(sub))
        base0, base1 = sub[0], sub[-1]
        for i in range(n):
            d0 = sets[leg][i] - base0
            d1 = sets[leg + 1][i] - base1
            pts = sub + d0[None] + loc[:, None] * (d1 - d0)[None]
            pts[0] = sets[leg][i]
            pts[-1] = sets[leg + 1][i]
            rs = _resample(pts, counts[leg] + 1)
            out[i].append(rs if leg == 0 else rs[1:])
    paths = tuple(Path.from_waypoints(np.vstack(chunks)) for chunks in out)
    return PathSet(paths, p)


def _triangles_hit(tri, obstacles) -> bool:
    lo = tri.min(axis=0)
    hi = tri.max(axis=0)
    for o in obstacles:
        v = o.vertices
        if np.any(v.max(axis=0) < lo - GEO_EPS) or np.any(v.min(axis=0) > hi + GEO_EPS):
            continue
        if geom2d.polygons_intersect(tri, v):
            return True
    return False


def validate_path_set(ps: PathSet, w: Workspace, margin: float = 0.0, crossings=None) -> ValidationReport:
    """Collision check per path and the swept-quad homotopy proxy between neighbours."""
    rep = ValidationReport()
    for p in ps.paths:
        c = geom2d.polyline_clearance(p.waypoints, w)
        rep.min_clearance.append(c)
        rep.collision_free.append(bool(c >= margin - GEO_EPS))
    obstacles = all_obstacles(w)
    for i in range(len(ps.paths) - 1):
        a = ps.paths[i].waypoints
        b = ps.paths[i + 1].waypoints
        if len(a) != len(b):
            rep.homotopy_failures.append((i, -1))
            continue
        for j in range(len(a) - 1):
            t1 = np.array([a[j], b[j], b[j + 1]])
            t2 = np.array([a[j], b[j + 1], a[j + 1]])
            if _triangles_hit(t1, obstacles) or _triangles_hit(t2, obstacles):
                rep.homotopy_failures.append((i, j))
                break
    for cr in crossings or []:
        u = (cr.anchors - cr.passage.endpoint_a[None]) @ cr.passage.direction
        if u.max() - u.min() > cr.bound + 1e-9:
            rep.spacing_ok = False
        if cr.reversed:
            rep.reversals.append(cr.passage_id)
    return rep


def generate_path_set(pivot: Path, start, goal, passages: PassageSet, w: Workspace, params: PathSetParams,
                      cable_len: float | None = None, margin: float = 0.0) -> PathSetResult:
    """Build the keypoint path set, backing off ``gamma`` on failure."""
    s = keypoints_of(start)
    g = keypoints_of(goal)
    n = len(s)
    p = pivot_index_for(n)
    if cable_len is None:
        cable_len = float(np.hypot(*np.diff(s, axis=0).T).sum())
    trav = traversed_passages(pivot, passages)
    gamma = params.gamma
    last_err = None
    for attempt in range(params.max_retries + 1):
        try:
            ss = scale_shape(s, s[p], gamma)
            gs = scale_shape(g, g[p], gamma)
            raw = [transfer_linear(pivot, ss, gs, i, p) for i in range(n)]
            crossings = []
            anchors = []
            for pid, sig in trav:
                psg = passages[pid]
                try:
                    hits = passage_intersections(raw, psg, sig)
                except MissedPassageError as exc:
                    raise MissedPassageError(exc.keypoint, pid) from None
                u = (hits - psg.endpoint_a[None]) @ psg.direction
                order = np.argsort(u, kind="stable")
                increasing = np.array_equal(order, np.arange(n))
                decreasing = np.array_equal(order, np.arange(n)[::-1])
                shrink = 0.5 ** attempt
                edge = params.edge_margin_frac * psg.width
                red = redistribute(hits, psg, params.alpha * shrink, cable_len, max(edge, margin))
                anchors.append(red)
                crossings.append(CrossingRecord(pid, sig, psg, spread_bound(psg, params.alpha, cable_len), red,
                                                not (increasing or decreasing)))
            ps = reconnect(pivot, s, g, [c.sigma for c in crossings], anchors, params.resample_count)
            rep = validate_path_set(ps, w, margin, crossings)
            if rep.ok:
                return PathSetResult(ps, crossings, gamma, attempt + 1, rep)
            last_err = PathSetError(
                f"path set invalid (collision-free={rep.collision_free}, homotopy failures={rep.homotopy_failures[:5]})")
        except MissedPassageError as exc:
            last_err = exc
        log.info("path set attempt %d with gamma=%.4f failed: %s", attempt + 1, gamma, last_err)
        gamma *= 0.5
    raise PathSetError(f"path set generation failed after {params.max_retries + 1} attempts: {last_err}")

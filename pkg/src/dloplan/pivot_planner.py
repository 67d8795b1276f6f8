"""Clearance-aware RRT* for the pivot keypoint."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from dloplan import geom2d
from dloplan.geom2d import Workspace

log = logging.getLogger(__name__)

CLEARANCE_FLOOR = 1e-3


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Path:
    """Polyline with one path parameter per waypoint (0 at start, 1 at goal)."""

    waypoints: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        wp = np.array(self.waypoints, dtype=np.float64)
        sg = np.array(self.sigma, dtype=np.float64)
        if wp.ndim != 2 or wp.shape[1] != 2 or len(wp) < 2:
            raise ValueError("a path needs at least two 2D waypoints")
        if sg.shape != (len(wp),):
            raise ValueError("one sigma value per waypoint is required")
        if sg[0] != 0.0 or sg[-1] != 1.0 or np.any(np.diff(sg) <= 0):
            raise ValueError("sigma must increase strictly from 0 to 1")
        wp.setflags(write=False)
        sg.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "sigma", sg)

    @classmethod
    def from_waypoints(cls, waypoints):
        """Assign sigma by normalised cumulative arc length."""
        wp = np.asarray(waypoints, dtype=np.float64)
        seg = np.hypot(*np.diff(wp, axis=0).T)
        total = seg.sum()
        if total <= 0:
            sg = np.linspace(0.0, 1.0, len(wp))
        else:
            sg = np.concatenate([[0.0], np.cumsum(seg) / total])
            sg[-1] = 1.0
            # zero-length segments would break monotonicity
            if np.any(np.diff(sg) <= 0):
                keep = np.concatenate([[True], np.diff(sg) > 0])
                keep[-1] = True
                wp, sg = wp[keep], sg[keep]
                if np.any(np.diff(sg) <= 0):
                    wp = np.delete(wp, -2, axis=0)
                    sg = np.delete(sg, -2)
        return cls(wp, sg)

    @property
    def length(self) -> float:
        return float(np.hypot(*np.diff(self.waypoints, axis=0).T).sum())

    def point_at(self, s: float) -> np.ndarray:
        """Piecewise-linear point at parameter ``s``."""
        return np.array([np.interp(s, self.sigma, self.waypoints[:, 0]),
                         np.interp(s, self.sigma, self.waypoints[:, 1])])

    def __eq__(self, other):
        return (isinstance(other, Path) and np.array_equal(self.waypoints, other.waypoints)
                and np.array_equal(self.sigma, other.sigma))


@dataclass(frozen=True)
class PivotCostWeights:
    k_len: float = 1.0
    k_clear: float = 1.0

    def __post_init__(self):
        if self.k_len < 0 or self.k_clear < 0 or (self.k_len == 0 and self.k_clear == 0):
            raise ValueError("cost weights must be non-negative and not both zero")


@dataclass(frozen=True)
class PlannerConfig:
    max_iterations: int = 3000
    step_size: float = 0.04
    goal_bias: float = 0.1
    rewire_radius: float = 0.1
    rng_seed: int = 0
    collision_margin: float = 0.01

    def __post_init__(self):
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")


def edge_cost(a, b, w: Workspace, weights: PivotCostWeights, spacing: float | None = None) -> float:
    """Length plus inverse-clearance line integral (trapezoidal) along segment ab.

    ``spacing`` is the target sample spacing; by default 1/10 of the edge
    length is used so that at least ten intervals are integrated.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    length = float(np.hypot(*(b - a)))
    cost = weights.k_len * length
    if weights.k_clear == 0.0 or length == 0.0:
        return cost
    if spacing is None:
        spacing = length / 10.0
    n_int = max(1, int(np.ceil(length / spacing - 1e-12)))
    t = np.linspace(0.0, 1.0, n_int + 1)
    pts = a[None] + t[:, None] * (b - a)[None]
    clr, _ = geom2d.clearance_many(pts, w)
    if np.any(clr <= 0.0):
        return np.inf
    inv = 1.0 / np.maximum(clr, CLEARANCE_FLOOR)
    h = length / n_int
    return cost + weights.k_clear * h * (inv.sum() - 0.5 * (inv[0] + inv[-1]))


def path_cost(p: Path, w: Workspace, weights: PivotCostWeights, spacing: float | None = None) -> float:
    wp = p.waypoints
    return float(sum(edge_cost(wp[i], wp[i + 1], w, weights, spacing) for i in range(len(wp) - 1)))


@dataclass
class PlanResult:
    path: Path | None
    cost: float
    iterations: int
    cost_trace: list

    @property
    def success(self) -> bool:
        return self.path is not None


def plan_pivot(start, goal, w: Workspace, weights: PivotCostWeights, cfg: PlannerConfig) -> PlanResult:
    """RRT* from start to goal minimising :func:`edge_cost`.

    Raises ``PlanningError`` if start or goal violate the collision margin.
    A search that never reaches the goal returns a result with ``path=None``.
    """
    start = geom2d.as_point(start)
    goal = geom2d.as_point(goal)
    margin = cfg.collision_margin
    for name, p in (("start", start), ("goal", goal)):
        if geom2d.min_clearance(p, w) < margin:
            raise PlanningError(f"{name} {p.tolist()} is within the collision margin of an obstacle")

    spacing = cfg.step_size / 10.0
    rng = np.random.default_rng(cfg.rng_seed)
    cap = cfg.max_iterations + 2
    nodes = np.zeros((cap, 2))
    parent = np.full(cap, -1, dtype=np.int64)
    cost = np.zeros(cap)
    nodes[0] = start
    count = 1
    children: dict[int, list] = {0: []}
    goal_idx = -1
    trace = []
    best = np.inf

    def free(a, b):
        return not geom2d.segment_collides(a, b, w, margin)

    def ecost(a, b):
        return edge_cost(a, b, w, weights, spacing)

    def propagate(i, delta):
        stack = list(children.get(i, []))
        while stack:
            j = stack.pop()
            cost[j] += delta
            stack.extend(children.get(j, []))

    lo = np.array([margin, margin])
    hi = np.array([w.width - margin, w.height - margin])
    gamma = cfg.rewire_radius
    for it in range(cfg.max_iterations):
        if rng.random() < cfg.goal_bias:
            sample = goal.copy()
        else:
            sample = lo + rng.random(2) * (hi - lo)
        d2 = ((nodes[:count] - sample) ** 2).sum(axis=1)
        near_i = int(np.argmin(d2))
        dist = np.sqrt(d2[near_i])
        if dist < 1e-12:
            trace.append(best)
            continue
        new = nodes[near_i] + (sample - nodes[near_i]) * min(1.0, cfg.step_size / dist)
        if geom2d.min_clearance(new, w) < margin or not free(nodes[near_i], new):
            trace.append(best)
            continue
        radius = min(gamma * np.sqrt(np.log(count + 1) / (count + 1)) * 4.0, gamma)
        radius = max(radius, cfg.step_size * 1.01)
        dn = np.sqrt(((nodes[:count] - new) ** 2).sum(axis=1))
        near = np.flatnonzero(dn <= radius)
        # choose parent
        best_parent, best_cost = near_i, cost[near_i] + ecost(nodes[near_i], new)
        edge_cache = {}
        for j in near:
            if j == near_i:
                continue
            c_edge = ecost(nodes[j], new)
            edge_cache[j] = c_edge
            c = cost[j] + c_edge
            if c < best_cost and free(nodes[j], new):
                best_parent, best_cost = j, c
        if not np.isfinite(best_cost):
            trace.append(best)
            continue
        k = count
        nodes[k] = new
        parent[k] = best_parent
        cost[k] = best_cost
        children.setdefault(best_parent, []).append(k)
        children[k] = []
        count += 1
        # rewire
        for j in near:
            if j == best_parent:
                continue
            c_edge = edge_cache.get(j)
            if c_edge is None:
                c_edge = ecost(new, nodes[j])
            c = best_cost + c_edge
            if c < cost[j] - 1e-12 and free(new, nodes[j]):
                # never rewire an ancestor of the new node under it
                anc = k
                cyclic = False
                while anc != -1:
                    if anc == j:
                        cyclic = True
                        break
                    anc = parent[anc]
                if cyclic:
                    continue
                children[parent[j]].remove(j)
                parent[j] = k
                children[k].append(j)
                delta = c - cost[j]
                cost[j] = c
                propagate(j, delta)
        # goal connection
        if np.hypot(*(new - goal)) <= cfg.step_size and free(new, goal):
            c = cost[k] + ecost(new, goal)
            if goal_idx < 0:
                goal_idx = count
                nodes[goal_idx] = goal
                parent[goal_idx] = k
                cost[goal_idx] = c
                children.setdefault(k, []).append(goal_idx)
                children[goal_idx] = []
                count += 1
            elif c < cost[goal_idx]:
                children[parent[goal_idx]].remove(goal_idx)
                parent[goal_idx] = k
                children[k].append(goal_idx)
                cost[goal_idx] = c
        if goal_idx >= 0:
            best = min(best, cost[goal_idx])
        trace.append(best)

    if goal_idx < 0:
        log.info("pivot planning failed after %d iterations", cfg.max_iterations)
        return PlanResult(None, np.inf, cfg.max_iterations, trace)

    chain = []
    i = goal_idx
    while i != -1:
        chain.append(nodes[i])
        i = parent[i]
    wps = np.array(chain[::-1])
    wps = shortcut(wps, w, weights, margin, spacing)
    path = Path.from_waypoints(wps)
    return PlanResult(path, path_cost(path, w, weights, spacing), cfg.max_iterations, trace)


def shortcut(wps, w: Workspace, weights: PivotCostWeights, margin: float, spacing: float):
    """Greedy shortcutting that only accepts cost-reducing replacements."""
    wps = [np.asarray(p) for p in wps]
    i = 0
    while i < len(wps) - 2:
        replaced = False
        for j in range(len(wps) - 1, i + 1, -1):
            if geom2d.segment_collides(wps[i], wps[j], w, margin):
                continue
            old = sum(edge_cost(wps[k], wps[k + 1], w, weights, spacing) for k in range(i, j))
            new = edge_cost(wps[i], wps[j], w, weights, spacing)
            if new <= old:
                del wps[i + 1:j]
                replaced = True
                break
        if not replaced:
            i += 1
    return np.array(wps)

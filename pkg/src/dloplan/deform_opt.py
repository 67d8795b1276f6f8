"""Path-set-guided deformation sequencing.

The decision variable is the per-keypoint progress schedule ``sigma[t, i]``
along each keypoint path.  It is optimised through its increments
``delta[t, i] = sigma[t + 1, i] - sigma[t, i]``, each column of which lives in
``{lb <= delta <= ub, sum(delta) = 1}``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from dloplan import kernels
from dloplan.path_param import DEFAULT_SHARPNESS
from dloplan.pathset import PathSet, keypoints_of

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MSModelParams:
    k1: float
    k2: float
    rest_adjacent: np.ndarray
    rest_skip: np.ndarray

    def __post_init__(self):
        ra = np.asarray(self.rest_adjacent, dtype=np.float64)
        rs = np.asarray(self.rest_skip, dtype=np.float64)
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("spring stiffness must be non-negative")
        if len(rs) != len(ra) - 1:
            raise ValueError("need n-1 adjacent and n-2 skip rest lengths")
        if np.any(ra <= 0) or np.any(rs <= 0):
            raise ValueError("rest lengths must be positive")
        object.__setattr__(self, "rest_adjacent", ra)
        object.__setattr__(self, "rest_skip", rs)

    @classmethod
    def from_shape(cls, shape, k1=2.0, k2=1.0):
        """Rest state taken from a shape: its segment lengths and their pairwise sums."""
        k = keypoints_of(shape)
        adj = np.hypot(*np.diff(k, axis=0).T)
        return cls(k1, k2, adj, adj[:-1] + adj[1:])


@dataclass(frozen=True)
class DeformOptConfig:
    T: int = 50
    lb: float = 0.01
    ub: float = 0.1
    max_iterations: int = 500
    tolerance: float = 1e-9
    sharpness: float = DEFAULT_SHARPNESS

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if not 0 <= self.lb <= self.ub:
            raise ValueError("need 0 <= lb <= ub")
        if self.T * self.lb > 1 + 1e-12 or self.T * self.ub < 1 - 1e-12:
            raise ValueError(f"infeasible bounds: T*lb={self.T * self.lb} and T*ub={self.T * self.ub} must bracket 1")


@dataclass
class DeformationSequence:
    shapes: np.ndarray          # (T+1, n, 2)
    sigmas: np.ndarray          # (T+1, n)
    energy: float
    baseline_energy: float
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.sigmas) - 1


def _lb_ub(cfg: DeformOptConfig, n: int):
    lb = np.broadcast_to(np.asarray(cfg.lb, dtype=np.float64), (n,))
    ub = np.broadcast_to(np.asarray(cfg.ub, dtype=np.float64), (n,))
    return lb, ub


def map_shape(ps: PathSet, sig, sharpness: float = DEFAULT_SHARPNESS, with_grad: bool = False):
    """Keypoint i placed at parameter sig[i] of its smoothed path."""
    sig = np.asarray(sig, dtype=np.float64)
    pts = np.empty((len(sig), 2))
    der = np.empty((len(sig), 2))
    for i, p in enumerate(ps.paths):
        v, d = kernels.sigmoid_interp(p.waypoints, p.sigma, sharpness, sig[i:i + 1])
        pts[i], der[i] = v[0], d[0]
        if sig[i] == 0.0:
            pts[i] = p.waypoints[0]
        elif sig[i] == 1.0:
            pts[i] = p.waypoints[-1]
    return (pts, der) if with_grad else pts


def map_shapes(ps: PathSet, sigmas, sharpness: float = DEFAULT_SHARPNESS):
    """Vectorised ``map_shape`` over a (T+1, n) schedule; returns points and d/dsigma."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    tn, n = sigmas.shape
    pts = np.empty((tn, n, 2))
    der = np.empty((tn, n, 2))
    for i, p in enumerate(ps.paths):
        v, d = kernels.sigmoid_interp(p.waypoints, p.sigma, sharpness, sigmas[:, i])
        v[sigmas[:, i] == 0.0] = p.waypoints[0]
        v[sigmas[:, i] == 1.0] = p.waypoints[-1]
        pts[:, i], der[:, i] = v, d
    return pts, der


def ms_energy(s, ms: MSModelParams) -> float:
    x = keypoints_of(s)
    e, _ = ms_energy_grad(x[None], ms)
    return float(e[0])


def ms_energy_grad(x, ms: MSModelParams):
    """Energies and d/dx for a batch of shapes shaped (..., n, 2)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    energy = np.zeros(x.shape[:-2])
    for step, k, rest in ((1, ms.k1, ms.rest_adjacent), (2, ms.k2, ms.rest_skip)):
        d = x[..., step:, :] - x[..., :-step, :]
        ln = np.sqrt((d ** 2).sum(axis=-1))
        ext = ln - rest
        energy = energy + 0.5 * k * (ext ** 2).sum(axis=-1)
        unit = d / np.where(ln > 0, ln, 1.0)[..., None]
        f = (k * ext)[..., None] * unit
        grad[..., step:, :] += f
        grad[..., :-step, :] -= f
    return energy, grad


def objective(z, ps: PathSet, ms: MSModelParams, sharpness: float = DEFAULT_SHARPNESS):
    """Accumulated spring energy over the schedule ``z`` (T+1, n) and its gradient."""
    pts, der = map_shapes(ps, z, sharpness)
    e, g = ms_energy_grad(pts, ms)
    dz = (g * der).sum(axis=-1)
    return float(e.sum()), dz


def uniform_baseline(cfg: DeformOptConfig, n: int) -> np.ndarray:
    return np.repeat((np.arange(cfg.T + 1) / cfg.T)[:, None], n, axis=1)


def project_increments(v, lb, ub, total: float = 1.0):
    """Euclidean projection of each column of ``v`` onto {lb <= x <= ub, sum x = total}.

    Bisection on the scalar shift of each column.
    """
    v = np.asarray(v, dtype=np.float64)
    lo = (v - ub[None]).min(axis=0) - 1.0
    hi = (v - lb[None]).max(axis=0) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = np.clip(v - mid[None], lb[None], ub[None]).sum(axis=0)
        too_big = s > total
        lo = np.where(too_big, mid, lo)
        hi = np.where(too_big, hi, mid)
        if np.all(hi - lo < 1e-15):
            break
    x = np.clip(v - 0.5 * (lo + hi)[None], lb[None], ub[None])
    # absorb the residual of the bisection into free coordinates
    resid = total - x.sum(axis=0)
    for i in np.flatnonzero(np.abs(resid) > 0):
        free = np.flatnonzero((x[:, i] > lb[i] + 1e-12) & (x[:, i] < ub[i] - 1e-12))
        if len(free):
            x[free, i] += resid[i] / len(free)
    return x


def _sched(delta):
    z = np.zeros((delta.shape[0] + 1, delta.shape[1]))
    z[1:] = np.cumsum(delta, axis=0)
    z[-1] = 1.0
    return z


def optimize_deformation(ps: PathSet, ms: MSModelParams, cfg: DeformOptConfig) -> DeformationSequence:
    """Projected gradient descent with Barzilai-Borwein steps and Armijo backtracking."""
    n = len(ps.paths)
    lb, ub = _lb_ub(cfg, n)
    z0 = uniform_baseline(cfg, n)
    base_e, _ = objective(z0, ps, ms, cfg.sharpness)
    delta = project_increments(np.diff(z0, axis=0), lb, ub)

    def f_and_g(d):
        e, gz = objective(_sched(d), ps, ms, cfg.sharpness)
        # sigma[t] = sum_{t' < t} delta[t']; row T is pinned to 1
        gz = gz.copy()
        gz[-1] = 0.0
        gd = np.cumsum(gz[::-1], axis=0)[::-1][1:]
        return e, gd

    e, g = f_and_g(delta)
    trace = [e]
    step = 1.0 / max(np.abs(g).max(), 1e-12) * 1e-2
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        pg = project_increments(delta - g, lb, ub) - delta
        if np.abs(pg).max() < cfg.tolerance:
            converged = True
            break
        accepted = False
        t = step
        for _ in range(40):
            cand = project_increments(delta - t * g, lb, ub)
            e_c, g_c = f_and_g(cand)
            if e_c <= e + 1e-4 * float((g * (cand - delta)).sum()):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True
            break
        s_vec = cand - delta
        y_vec = g_c - g
        sy = float((s_vec * y_vec).sum())
        delta, e, g = cand, e_c, g_c
        trace.append(e)
        step = float((s_vec ** 2).sum()) / sy if sy > 1e-30 else t * 2.0
        step = min(max(step, 1e-12), 1e6)
    z = _sched(delta)
    if e > base_e:
        # never return worse than the feasible starting point
        z, e = z0, base_e
    pts, _ = map_shapes(ps, z, cfg.sharpness)
    if not converged:
        log.warning("deformation optimisation stopped at the iteration cap (%d)", cfg.max_iterations)
    return DeformationSequence(pts, z, e, base_e, converged, it, trace)

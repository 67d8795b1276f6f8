"""Receding-horizon tracking of a deformation sequence with the learned model.

Actions are optimised by projected gradient descent on the box
``a_min <= a <= a_max`` using exact reverse-mode gradients through the
model rollout.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from dloplan import dlo_sim, neural_dm
from dloplan.autodiff import Tensor, custom, no_grad
from dloplan.geom2d import Workspace, clearance_many, polyline_clearance

log = logging.getLogger(__name__)

PENETRATION_EPS = 1e-4
METRICS_FIELDS = ("step", "time_s", "shape_error_m", "min_clearance_m", "ref_index", "solve_iterations",
                  "solve_time_ms")


class TrackingError(RuntimeError):
    pass


def _default_bounds(sign):
    return sign * np.array([[0.01, 0.01, 0.05], [0.01, 0.01, 0.05]])


@dataclass
class MPCConfig:
    horizon: int = 5
    max_iterations: int = 15
    lambda1: float = 150.0
    lambda2: float = 0.01
    lambda3: float = 1.0
    d: float = 0.005
    Q: np.ndarray = None            # (n, n); identity when None
    R: np.ndarray = None            # (6, 6); identity when None
    a_min: np.ndarray = field(default_factory=lambda: _default_bounds(-1.0))
    a_max: np.ndarray = field(default_factory=lambda: _default_bounds(1.0))
    step_size: float = 1.0          # initial step in bound-normalised action units
    advance_threshold: float = 0.01
    stall_steps: int = 8            # advance anyway after this many steps without progress
    progress_advance: bool = True   # also advance once the shape is nearer the next reference
    rel_tolerance: float = 1e-4     # stop when an accepted step lowers the cost by less than this fraction
    goal_tolerance: float = 0.01
    max_steps: int = 500

    def __post_init__(self):
        self.a_min = np.broadcast_to(np.asarray(self.a_min, dtype=np.float64), (2, 3)).copy()
        self.a_max = np.broadcast_to(np.asarray(self.a_max, dtype=np.float64), (2, 3)).copy()
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("cost weights must be non-negative")
        if self.d <= 0:
            raise ValueError("obstacle activation distance must be positive")
        if np.any(self.a_min >= self.a_max):
            raise ValueError("need a_min < a_max componentwise")
        for name in ("Q", "R"):
            m = getattr(self, name)
            if m is None:
                continue
            m = np.asarray(m, dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T):
                raise ValueError(f"{name} must be a symmetric matrix")
            if np.linalg.eigvalsh(m).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
            setattr(self, name, m)
        if self.R is not None and self.R.shape != (6, 6):
            raise ValueError("R must be 6x6")

    def q_matrix(self, n):
        if self.Q is None:
            return np.eye(n)
        if self.Q.shape != (n, n):
            raise ValueError(f"Q must be {n}x{n}")
        return self.Q

    def r_matrix(self):
        return np.eye(6) if self.R is None else self.R


@dataclass
class ReferenceSchedule:
    sequence: np.ndarray          # (T+1, n, 2)
    current_index: int = 0
    advance_threshold: float = 0.01
    stall_steps: int = 0          # 0 disables stall-based advancing
    progress_advance: bool = False
    _stalled: int = 0
    _best: float = np.inf

    def __post_init__(self):
        self.sequence = np.asarray(self.sequence, dtype=np.float64)
        if not 0 <= self.current_index <= self.T:
            raise ValueError("current_index outside the sequence")

    @property
    def T(self) -> int:
        return len(self.sequence) - 1


def schedule_reference(schedule: ReferenceSchedule, s_curr, horizon: int) -> np.ndarray:
    """Advance the reference index past shapes already reached and return H+1 references.

    A reference counts as reached when every keypoint coordinate is within
    ``advance_threshold``.  With ``stall_steps`` > 0 the index also moves on
    when the distance to the current reference has not improved for that many
    calls.  With ``progress_advance`` it moves on while the shape is at least
    as close (mean keypoint distance) to the next reference as to the current one.
    """
    s = np.asarray(s_curr, dtype=np.float64)
    seq = schedule.sequence
    moved = False
    while schedule.current_index < schedule.T:
        cur = seq[schedule.current_index]
        reached = np.abs(s - cur).max() < schedule.advance_threshold
        if not reached and schedule.progress_advance:
            nxt = seq[schedule.current_index + 1]
            reached = shape_error(s, nxt) <= shape_error(s, cur)
        if not reached:
            break
        schedule.current_index += 1
        moved = True
    if schedule.stall_steps and schedule.current_index < schedule.T:
        dist = float(np.abs(s - seq[schedule.current_index]).max())
        if moved or dist < schedule._best - 1e-4:
            schedule._best = dist
            schedule._stalled = 0
        else:
            schedule._stalled += 1
            if schedule._stalled >= schedule.stall_steps:
                schedule.current_index += 1
                schedule._stalled = 0
                schedule._best = np.inf
        if moved:
            schedule._best = float(np.abs(s - seq[schedule.current_index]).max())
    idx = np.minimum(schedule.current_index + np.arange(horizon + 1), schedule.T)
    return seq[idx]


# --------------------------------------------------------------------------
# costs
# --------------------------------------------------------------------------

def cost_track(s, s_ref, Q=None):
    """Half the Q-weighted squared deviation; Q acts on keypoint indices for both coordinates."""
    if isinstance(s, Tensor):
        e = s - s_ref
        if Q is None:
            return (e * e).sum() * 0.5
        return (e * (Tensor(Q) @ e)).sum() * 0.5
    e = np.asarray(s, dtype=np.float64) - np.asarray(s_ref, dtype=np.float64)
    Q = np.eye(len(e)) if Q is None else Q
    return float(0.5 * (e * (Q @ e)).sum())


def _barrier(phi, d):
    """Per-point obstacle term and its derivative with respect to clearance."""
    val = np.zeros_like(phi)
    der = np.zeros_like(phi)
    inside = phi <= 0
    act = (phi > 0) & (phi <= d)
    val[act] = 1.0 / phi[act] ** 2
    der[act] = -2.0 / phi[act] ** 3
    val[inside] = 1.0 / PENETRATION_EPS ** 2
    return val, der


def cost_obstacle(s, y, w: Workspace, d: float = 0.005):
    """Inverse-square clearance barrier over keypoints and both grippers, active within ``d``.

    Each point is charged against its closest obstacle or wall.  Accepts
    arrays (returns a float) or Tensors (returns a differentiable scalar).
    """
    tensor_mode = isinstance(s, Tensor) or isinstance(y, Tensor)
    s_t = s if isinstance(s, Tensor) else Tensor(s)
    y_t = y if isinstance(y, Tensor) else Tensor(y)
    pts = np.concatenate([s_t.data.reshape(-1, 2), y_t.data[:, :2]])
    phi, grad = clearance_many(pts, w)
    val, der = _barrier(phi, d)
    total = float(val.sum())
    if not tensor_mode:
        return total
    n = s_t.data.shape[0]

    def vjp(g):
        gp = g * der[:, None] * grad
        gy = np.zeros((2, 3))
        gy[:, :2] = gp[n:]
        return gp[:n], gy

    return custom(np.array(total), (s_t, y_t), vjp)


def penetrating(s, y, w: Workspace) -> bool:
    pts = np.concatenate([np.asarray(s).reshape(-1, 2), np.asarray(y)[:, :2]])
    return bool(clearance_many(pts, w)[0].min() <= 0)


def cost_control(a, R=None):
    if isinstance(a, Tensor):
        v = a.reshape(6)
        return (v * (v if R is None else Tensor(R) @ v)).sum() * 0.5
    v = np.asarray(a, dtype=np.float64).ravel()
    R = np.eye(6) if R is None else R
    return float(0.5 * v @ R @ v)


# --------------------------------------------------------------------------
# rollout and solver
# --------------------------------------------------------------------------

def rollout(params, s0, y0, actions):
    """Predicted shapes and robot poses for H actions (arrays or Tensors); returns lists of length H+1."""
    s = s0 if isinstance(s0, Tensor) else Tensor(s0)
    y = y0 if isinstance(y0, Tensor) else Tensor(y0)
    shapes, robots = [s], [y]
    H = actions.shape[0]
    for k in range(H):
        a = actions[k]
        s = s + neural_dm.forward(params, s, y, a)
        y = y + a
        shapes.append(s)
        robots.append(y)
    return shapes, robots


def total_cost(shapes, robots, refs, actions, w: Workspace, cfg: MPCConfig):
    """Stage costs for k < H plus a terminal tracking and obstacle cost at k = H."""
    n = shapes[0].shape[0]
    Q = None if cfg.Q is None else cfg.q_matrix(n)
    R = cfg.R
    H = len(shapes) - 1
    c = Tensor(0.0)
    for k in range(H + 1):
        c = c + cost_track(shapes[k], refs[k], Q) * cfg.lambda1
        if cfg.lambda2:
            c = c + cost_obstacle(shapes[k], robots[k], w, cfg.d) * cfg.lambda2
        if k < H and cfg.lambda3:
            c = c + cost_control(actions[k], R) * cfg.lambda3
    return c


def plan_cost(params, s0, y0, acts, refs, w, cfg, grad=False):
    """Cost of an action plan, optionally with its gradient."""
    if not grad:
        with no_grad():
            shapes, robots = rollout(params, s0, y0, Tensor(acts))
            return float(total_cost(shapes, robots, refs, Tensor(acts), w, cfg).data)
    A = Tensor(acts, requires_grad=True)
    shapes, robots = rollout(params, s0, y0, A)
    c = total_cost(shapes, robots, refs, A, w, cfg)
    c.backward()
    g = A.grad if A.grad is not None else np.zeros_like(acts)
    return float(c.data), g


@dataclass
class MPCResult:
    action: np.ndarray
    plan: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    solve_time_ms: float


def project(acts, cfg: MPCConfig):
    return np.clip(acts, cfg.a_min, cfg.a_max)


def solve_mpc(s_curr, y_curr, refs, params, w: Workspace, cfg: MPCConfig, warm_start=None) -> MPCResult:
    """Projected gradient descent with Armijo backtracking, in bound-normalised coordinates."""
    t0 = time.perf_counter()
    H = cfg.horizon
    if H == 0:
        return MPCResult(np.zeros((2, 3)), np.zeros((0, 2, 3)), 0.0, 0.0, 0, 0.0)
    scale = 0.5 * (cfg.a_max - cfg.a_min)
    acts = np.zeros((H, 2, 3)) if warm_start is None else project(np.asarray(warm_start, float), cfg)
    cost, g = plan_cost(params, s_curr, y_curr, acts, refs, w, cfg, grad=True)
    init_cost = cost
    step = cfg.step_size
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        gs = g * scale                    # gradient in normalised units
        accepted = False
        t = step
        for _ in range(12):
            cand = project(acts - t * gs * scale, cfg)
            diff = cand - acts
            if not np.any(diff):
                break
            c_new = plan_cost(params, s_curr, y_curr, cand, refs, w, cfg)
            if c_new <= cost + 1e-4 * float((g * diff).sum()):
                accepted = True
                break
            t *= 0.3
        if not accepted:
            it -= 1
            break
        acts = cand
        prev = cost
        cost, g = plan_cost(params, s_curr, y_curr, acts, refs, w, cfg, grad=True)
        step = min(t * 2.0, 1e3)
        if prev - cost <= cfg.rel_tolerance * abs(prev):
            break
    return MPCResult(acts[0].copy(), acts, cost, init_cost, max(it, 0), (time.perf_counter() - t0) * 1e3)


# --------------------------------------------------------------------------
# closed loop
# --------------------------------------------------------------------------

def shape_error(s, s_goal) -> float:
    """Mean keypoint distance."""
    return float(np.linalg.norm(np.asarray(s) - np.asarray(s_goal), axis=-1).mean())


def cable_clearance(shape, robot, w: Workspace) -> float:
    """Smallest clearance of the cable polyline and grippers; negative when a keypoint penetrates."""
    pts = np.concatenate([shape, robot[:, :2]])
    point_c = float(clearance_many(pts, w)[0].min())
    return min(point_c, polyline_clearance(shape, w))


@dataclass
class TrackResult:
    shapes: np.ndarray           # executed shapes including the start, (steps+1, n, 2)
    robots: np.ndarray
    ref_indices: np.ndarray
    references: np.ndarray       # the reference shape in force at each step
    metrics: list                # one dict per executed step
    final_error: float
    min_clearance: float
    success: bool
    reason: str

    @property
    def steps(self) -> int:
        return len(self.metrics)


def track(start_state: dlo_sim.SimState, sequence, params, w: Workspace, cable: dlo_sim.CableParams,
          cfg: MPCConfig = None, success_tolerance: float = 0.02) -> TrackResult:
    """Closed loop: reference scheduling, MPC solve, first action applied to the simulator."""
    cfg = cfg or MPCConfig()
    seq = np.asarray(sequence, dtype=np.float64)
    goal = seq[-1]
    sched = ReferenceSchedule(seq, 0, cfg.advance_threshold, cfg.stall_steps, cfg.progress_advance)
    state = start_state
    shapes, robots, idxs, refs_used, metrics = [state.shape], [state.robot], [0], [seq[0]], []
    plan = None
    min_clear = cable_clearance(state.shape, state.robot, w)
    reason = "step cap"
    t_start = time.perf_counter()
    # the CSV must not depend on wall-clock time, so logged times are the simulated control period
    for step_i in range(1, cfg.max_steps + 1):
        err = shape_error(state.shape, goal)
        refs = schedule_reference(sched, state.shape, cfg.horizon)
        if sched.current_index == sched.T and err < cfg.goal_tolerance:
            reason = "goal reached"
            break
        warm = None
        if plan is not None and len(plan):
            warm = np.concatenate([plan[1:], plan[-1:]])
        res = solve_mpc(state.shape, state.robot, refs, params, w, cfg, warm)
        plan = res.plan
        try:
            state = dlo_sim.step(state, res.action, cable)
        except dlo_sim.SimError as exc:
            reason = f"simulator rejected action: {exc}"
            break
        clear = cable_clearance(state.shape, state.robot, w)
        min_clear = min(min_clear, clear)
        shapes.append(state.shape)
        robots.append(state.robot)
        idxs.append(sched.current_index)
        refs_used.append(refs[0])
        metrics.append({"step": step_i, "time_s": step_i * 0.1, "shape_error_m": shape_error(state.shape, goal),
                        "min_clearance_m": clear, "ref_index": sched.current_index,
                        "solve_iterations": res.iterations, "solve_time_ms": res.solve_time_ms})
        log.debug("step %d err %.4f clear %.4f idx %d its %d", step_i, metrics[-1]["shape_error_m"], clear,
                  sched.current_index, res.iterations)
        if clear <= 0:
            reason = "collision"
            break
    else:
        if sched.current_index == sched.T and shape_error(state.shape, goal) < cfg.goal_tolerance:
            reason = "goal reached"
    final = shape_error(state.shape, goal)
    log.info("tracking finished after %d steps (%s): error %.4f m, clearance %.4f m, %.1f s", len(metrics),
             reason, final, min_clear, time.perf_counter() - t_start)
    ok = final < success_tolerance and min_clear > 0 and reason != "collision"
    return TrackResult(np.array(shapes), np.array(robots), np.array(idxs), np.array(refs_used), metrics,
                       final, min_clear, ok, reason)


def write_metrics_csv(metrics, path, deterministic: bool = True):
    """Write per-step metrics; with ``deterministic`` the solve time column is zeroed for reproducible bytes."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(METRICS_FIELDS)
        for m in metrics:
            row = []
            for k in METRICS_FIELDS:
                v = m[k]
                if k == "solve_time_ms" and deterministic:
                    v = 0.0
                row.append(v if isinstance(v, (int, np.integer)) else f"{float(v):.9g}")
            wr.writerow(row)

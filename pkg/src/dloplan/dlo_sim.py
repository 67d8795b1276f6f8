"""Quasi-static planar cable: rigid links, elastic hinges, both ends welded to grippers."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from dloplan import kernels


class SimError(RuntimeError):
    pass


# equilibrium accepted below this projected-gradient norm; the solver aims lower
RESIDUAL_TOL = 1e-8
SOLVER_TOL = 1e-12


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class CableParams:
    length: float = 0.3
    num_keypoints: int = 13
    joint_stiffness: float = 0.02
    joint_damping: float = 0.03
    radius: float = 0.02

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("cable length must be positive")
        if self.num_keypoints < 3:
            raise ValueError("need at least three keypoints")

    @property
    def link_length(self) -> float:
        return self.length / (self.num_keypoints - 1)


# Robot configurations and actions are (2, 3) arrays: rows left/right, columns x, y, theta.

def robot_config(left, right) -> np.ndarray:
    y = np.array([left, right], dtype=np.float64).reshape(2, 3)
    y[:, 2] = wrap_angle(y[:, 2])
    return y


@dataclass(frozen=True, eq=False)
class SimState:
    shape: np.ndarray        # (n, 2)
    robot: np.ndarray        # (2, 3)
    link_angles: np.ndarray  # (n - 1,), unwrapped
    converged: bool = True
    residual: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        for name in ("shape", "robot", "link_angles"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def chain_points(origin, phi, link):
    steps = link * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    return np.vstack([origin, origin + np.cumsum(steps, axis=0)])


def bending_energy(phi, stiffness) -> float:
    return float(0.5 * stiffness * (np.diff(phi) ** 2).sum())


def _nearest_equiv(angle, ref):
    return ref + wrap_angle(angle - ref)


def _check_reach(cable: CableParams, robot):
    sep = float(np.hypot(*(robot[1, :2] - robot[0, :2])))
    if sep > cable.length + 1e-12:
        raise SimError(f"grasp separation {sep:.4f} m exceeds cable length {cable.length} m")
    l = cable.link_length
    p1 = robot[0, :2] + l * np.array([math.cos(robot[0, 2]), math.sin(robot[0, 2])])
    pn = robot[1, :2] - l * np.array([math.cos(robot[1, 2]), math.sin(robot[1, 2])])
    inner = float(np.hypot(*(pn - p1)))
    if inner > (cable.num_keypoints - 3) * l + 1e-12:
        raise SimError("grasp poses overstretch the cable between the welded end links")


def _solve(cable: CableParams, robot, phi_guess, tol, max_iter) -> SimState:
    phi = np.array(phi_guess, dtype=np.float64)
    phi[0] = _nearest_equiv(robot[0, 2], phi[0])
    phi[-1] = _nearest_equiv(robot[1, 2], phi[-1])
    target = robot[1, :2] - robot[0, :2]
    phi, its, resid, gap, _ = kernels.chain_relax(phi, cable.link_length, target, cable.joint_stiffness,
                                                  cable.joint_damping, tol, max_iter)
    if gap > 1e-9:
        raise SimError(f"could not satisfy the grasp constraints (gap {gap:.2e} m)")
    pts = chain_points(robot[0, :2], phi, cable.link_length)
    return SimState(pts, robot, phi, bool(resid < RESIDUAL_TOL), float(resid), int(its))


def _initial_guess(cable: CableParams, robot, seed):
    n_links = cable.num_keypoints - 1
    t0 = robot[0, 2]
    t1 = _nearest_equiv(robot[1, 2], t0)
    phi = np.linspace(t0, t1, n_links)
    rng = np.random.default_rng(seed)
    # a small deterministic bump breaks the symmetry of a straight compressed chain
    bump = np.sin(np.pi * np.arange(n_links) / (n_links - 1)) * (0.05 * (1 if rng.random() < 0.5 else -1))
    return phi + bump


def init_sim(cable: CableParams, robot, seed: int = 0, guess=None, tol=SOLVER_TOL, max_iter=200) -> SimState:
    """Minimum-bending equilibrium for the given grasp poses.

    ``guess`` may be link angles or a keypoint array whose link directions
    seed the solver (which selects the buckling branch).
    """
    robot = robot_config(robot[0], robot[1])
    _check_reach(cable, robot)
    if guess is None:
        phi = _initial_guess(cable, robot, seed)
    else:
        g = np.asarray(guess, dtype=np.float64)
        if g.ndim == 2:
            d = np.diff(g, axis=0)
            g = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
        phi = g
    if len(phi) != cable.num_keypoints - 1:
        raise SimError("initial guess has the wrong number of links")
    straight_sep = np.hypot(*(robot[1, :2] - robot[0, :2]))
    state = _solve(cable, robot, phi, tol, max_iter)
    if not state.converged and straight_sep < cable.length:
        # retry from the generic arc guess
        state = _solve(cable, robot, _initial_guess(cable, robot, seed), tol, max_iter)
    return state


def robot_from_shape(shape) -> np.ndarray:
    k = np.asarray(shape, dtype=np.float64)
    d0 = k[1] - k[0]
    d1 = k[-1] - k[-2]
    return robot_config([k[0, 0], k[0, 1], math.atan2(d0[1], d0[0])],
                        [k[-1, 0], k[-1, 1], math.atan2(d1[1], d1[0])])


def sim_from_shape(cable: CableParams, shape, seed: int = 0) -> SimState:
    """Equilibrium whose grasps match the end links of ``shape``, seeded by its angles."""
    return init_sim(cable, robot_from_shape(shape), seed, guess=shape)


def relax(state: SimState, cable: CableParams, tol=SOLVER_TOL, max_iter=200) -> SimState:
    return _solve(cable, state.robot, state.link_angles, tol, max_iter)


def apply_action(robot, action) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(2, 3)
    y = np.asarray(robot, dtype=np.float64) + a
    y[:, 2] = wrap_angle(y[:, 2])
    return y


def step(state: SimState, action, cable: CableParams, tol=SOLVER_TOL, max_iter=200) -> SimState:
    """Move the grippers by ``action`` and re-relax to equilibrium."""
    robot = apply_action(state.robot, action)
    _check_reach(cable, robot)
    new = _solve(cable, robot, state.link_angles, tol, max_iter)
    return new


def equilibrium_residual(state: SimState, cable: CableParams) -> float:
    """Largest component of the constraint-projected energy gradient."""
    phi = state.link_angles
    l = cable.link_length
    k = cable.joint_stiffness
    inner = phi[1:-1]
    grad = k * (2 * inner - phi[:-2] - phi[2:])
    jac = np.stack([-l * np.sin(inner), l * np.cos(inner)])
    _, _, vt = np.linalg.svd(jac)
    z = vt[2:].T
    return float(np.abs(z.T @ grad).max())


def with_robot(state: SimState, robot) -> SimState:
    return replace(state, robot=np.asarray(robot, dtype=np.float64))

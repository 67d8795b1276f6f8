"""Smooth parametrisation of a polyline by sigmoid-weighted segment blending."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dloplan import kernels
from dloplan.pivot_planner import Path

DEFAULT_SHARPNESS = 50.0


@dataclass(frozen=True)
class ParametrizedPath:
    path: Path
    sharpness: float = DEFAULT_SHARPNESS

    def __post_init__(self):
        if not self.sharpness > 0:
            raise ValueError("sharpness must be positive")
        if np.any(np.diff(self.path.sigma) <= 0):
            raise ValueError("zero-length parameter interval")

    @property
    def num_segments(self) -> int:
        return len(self.path.waypoints) - 1


def segment_point(pp: ParametrizedPath, k: int, s: float) -> np.ndarray:
    """Linear extension of segment ``k`` evaluated at ``s`` (no clamping)."""
    if not 0 <= k < pp.num_segments:
        raise IndexError(f"segment index {k} out of range")
    x, sg = pp.path.waypoints, pp.path.sigma
    return x[k] + (x[k + 1] - x[k]) * (s - sg[k]) / (sg[k + 1] - sg[k])


def _pin(pp: ParametrizedPath, s, val):
    s = np.asarray(s)
    wp = pp.path.waypoints
    val = np.where((s == 0.0)[..., None], wp[0], val)
    return np.where((s == 1.0)[..., None], wp[-1], val)


def interpolate(pp: ParametrizedPath, s, pin: bool = True):
    """Blend of all segment extensions at ``s`` (scalar or array).

    With ``pin`` the exact end waypoints are returned at s == 0 and s == 1.
    """
    val, _ = interpolate_grad(pp, s, pin)
    return val


def interpolate_grad(pp: ParametrizedPath, s, pin: bool = True):
    """Value and exact derivative with respect to ``s``."""
    scalar = np.ndim(s) == 0
    q = np.atleast_1d(np.asarray(s, dtype=np.float64))
    val, der = kernels.sigmoid_interp(pp.path.waypoints, pp.path.sigma, pp.sharpness, q)
    if pin:
        val = _pin(pp, q, val)
    if scalar:
        return val[0], der[0]
    return val, der

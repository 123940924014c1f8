"""Simulation of the delay state equation with history and positivity checks.

The state equation is integrated in integral form by Heun's method on a fine
time grid ``dt = dxi / k``.  The history is interpolated linearly onto the
fine grid so that the rolling window of the delay integral always lands on
fine nodes, and the delay integral uses the same coarse trapezoid rule as
:func:`delayhjb.model.eval_drift`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .model import Kernel, ModelParams, Nonlinearity, eval_drift

__all__ = [
    "POS_EPS",
    "HState",
    "ControlPath",
    "Trajectory",
    "Verdict",
    "fine_factor",
    "integrate",
    "check_admissible",
    "domain_membership",
    "comparison_check",
    "comparison_gap",
    "hpp_lower_bound",
    "grid_tol",
    "write_trajectory_csv",
]

POS_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class HState:
    """A point ``(eta0, eta1)`` of ``R x L^2(-T, 0)`` with ``eta1`` sampled on a uniform grid."""

    eta0: float
    eta1: np.ndarray
    dxi: float

    def __post_init__(self):
        object.__setattr__(self, "eta0", float(self.eta0))
        arr = np.array(self.eta1, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "eta1", arr)
        if arr.ndim != 1 or len(arr) < 2:
            raise ValueError("eta1 must be a 1-d array with at least two samples")
        if not self.dxi > 0:
            raise ValueError("dxi must be positive")

    @classmethod
    def from_function(cls, eta0: float, func: Callable, N: int, T: float) -> "HState":
        xi = np.linspace(-T, 0.0, N + 1)
        return cls(eta0, np.broadcast_to(np.asarray(func(xi), dtype=float), xi.shape), T / N)

    @classmethod
    def constant(cls, eta0: float, value: float, N: int, T: float) -> "HState":
        return cls(eta0, np.full(N + 1, float(value)), T / N)

    @property
    def N(self) -> int:
        return len(self.eta1) - 1

    @property
    def T(self) -> float:
        return self.N * self.dxi

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(-self.T, 0.0, self.N + 1)

    @property
    def in_H_plus(self) -> bool:
        return self.eta0 > 0

    @property
    def in_H_plusplus(self) -> bool:
        return self.eta0 > 0 and float(np.min(self.eta1)) >= 0

    def with_eta0(self, eta0: float) -> "HState":
        return HState(eta0, self.eta1, self.dxi)

    def __add__(self, other: "HState") -> "HState":
        return HState(self.eta0 + other.eta0, self.eta1 + other.eta1, self.dxi)

    def __sub__(self, other: "HState") -> "HState":
        return HState(self.eta0 - other.eta0, self.eta1 - other.eta1, self.dxi)

    def __mul__(self, lam: float) -> "HState":
        return HState(lam * self.eta0, lam * self.eta1, self.dxi)

    __rmul__ = __mul__

    def resample(self, N: int) -> "HState":
        """Linear interpolation of the past onto a grid with ``N`` cells."""
        new = np.linspace(-self.T, 0.0, N + 1)
        return HState(self.eta0, np.interp(new, self.grid, self.eta1), self.T / N)


@dataclass(frozen=True, eq=False)
class ControlPath:
    """Piecewise-constant consumption: ``values[i]`` on ``[i dt, (i+1) dt)``, zero afterwards."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite and nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if not self.dt > 0:
            raise ValueError("segment length must be positive")

    @classmethod
    def constant(cls, value: float, horizon: float, segments: int = 1) -> "ControlPath":
        return cls(horizon / segments, np.full(segments, float(value)))

    @classmethod
    def zero(cls, horizon: float = 1.0) -> "ControlPath":
        return cls(horizon, np.zeros(1))

    @property
    def horizon(self) -> float:
        return self.dt * len(self.values)

    @property
    def M(self) -> int:
        return len(self.values)

    def value_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.floor(t / self.dt).astype(int)
        inside = (idx >= 0) & (idx < self.M)
        out = np.where(inside, self.values[np.clip(idx, 0, self.M - 1)], 0.0)
        return float(out) if out.ndim == 0 else out

    def zero_from(self) -> float:
        """Earliest time after which the control vanishes identically."""
        nz = np.nonzero(self.values > 0)[0]
        return 0.0 if len(nz) == 0 else float((nz[-1] + 1) * self.dt)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fine-grid state record, history segment included.

    ``times[i] = -T + i dt``; ``x[i]`` is the state; ``c[i]`` is the
    consumption on the step starting at ``times[i]`` (zero on the history).
    """

    times: np.ndarray
    x: np.ndarray
    c: np.ndarray
    dt: float
    k: int
    T: float
    admissible_until: float
    violated: bool
    J_partial: float = math.nan

    @property
    def n_hist(self) -> int:
        """Index of time 0."""
        return int(round(self.T / self.dt))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def forward_times(self) -> np.ndarray:
        return self.times[self.n_hist:]

    @property
    def forward_x(self) -> np.ndarray:
        return self.x[self.n_hist:]

    def segment(self, t: float) -> np.ndarray:
        """Coarse samples of ``x(t + xi)``, ``xi in [-T, 0]``, for grid-aligned ``t``."""
        n = int(round(t / self.dt))
        if abs(n * self.dt - t) > 1e-9 * max(1.0, t) or n < 0 or self.n_hist + n >= len(self.x):
            raise ValueError(f"time {t} is not a node of this trajectory")
        return self.x[n:n + self.n_hist + 1:self.k].copy()

    def state_at(self, t: float) -> HState:
        seg = self.segment(t)
        return HState(seg[-1], seg, self.dt * self.k)


@dataclass(frozen=True)
class Verdict:
    admissible_until: float
    certified_forever: bool
    violated: bool
    min_x: float

    @property
    def admissible(self) -> bool:
        return not self.violated


def grid_tol(dt: float, dxi: float, scale: float = 1.0) -> float:
    """Tolerance for trajectory comparisons: ``10 (dt + dxi) max(1, scale)``."""
    return 10.0 * (dt + dxi) * max(1.0, scale)


def fine_factor(dxi: float, dt: float) -> int:
    """The integer ``k`` with ``dt = dxi / k``; raises if none exists."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k = int(round(dxi / dt))
    if k < 1 or abs(k * dt - dxi) > 1e-9 * dxi:
        raise ValueError(f"dt = {dt} must divide the history spacing dxi = {dxi}")
    return k


def _steps(length: float, dt: float, what: str) -> int:
    n = int(round(length / dt))
    if n < 1 or abs(n * dt - length) > 1e-9 * max(1.0, length):
        raise ValueError(f"{what} = {length} is not a multiple of dt = {dt}")
    return n


def initial_path(eta: HState, k: int, n_steps: int) -> np.ndarray:
    """Fine path buffer holding the interpolated history and room for ``n_steps``."""
    N = eta.N
    fine_hist = np.interp(np.arange(k * N) / k, np.arange(N + 1), eta.eta1)
    path = np.empty(k * N + 1 + n_steps)
    path[:k * N] = fine_hist
    path[k * N] = eta.eta0
    return path


def step_controls(control: ControlPath, n_steps: int, dt: float) -> np.ndarray:
    seg = int(round(control.dt / dt))
    if abs(seg * dt - control.dt) > 1e-9 * max(1.0, control.dt):
        raise ValueError(f"dt = {dt} does not divide the control segment length {control.dt}")
    cvals = np.zeros(n_steps)
    reps = np.repeat(control.values, seg)
    m = min(n_steps, len(reps))
    cvals[:m] = reps[:m]
    return cvals


def run_path(params: ModelParams, nl: Nonlinearity, kernel: Kernel, eta: HState,
             cvals: np.ndarray, dt: float, compiled: bool = True) -> np.ndarray:
    """Raw fine path for step controls ``cvals`` (no validation beyond grids)."""
    k = fine_factor(kernel.dxi, dt)
    path = initial_path(eta, k, len(cvals))
    q0 = kernel.pair(eta.eta1)
    if nl.kind == "affine_saturating":
        return _kernels.heun_affine(path, kernel.weights, k, params.r, nl.params, cvals, dt, q0,
                                    compiled=compiled)
    return _kernels.heun_generic(path, kernel.weights, k, params.r, nl, cvals, dt, q0)


def _check_grid(kernel: Kernel, eta: HState):
    if eta.N != kernel.N or abs(eta.dxi - kernel.dxi) > 1e-12 * max(1.0, kernel.dxi):
        raise ValueError(f"state grid (N={eta.N}) does not match kernel grid (N={kernel.N})")


def integrate(params: ModelParams, nl: Nonlinearity, kernel: Kernel, eta: HState,
              control: ControlPath, horizon: float, dt: float, *,
              compiled: bool = True) -> Trajectory:
    """Integrate the delay equation from history ``eta`` under ``control``.

    Parameters
    ----------
    horizon : float
        Final time; must be a multiple of ``dt``.
    dt : float
        Time step; must equal ``dxi / k`` for an integer ``k`` and divide the
        control segment length.
    compiled : bool
        Use the compiled loop for the affine-saturating nonlinearity.

    Returns
    -------
    Trajectory
        Fine-grid record on ``[-T, horizon]``.  ``admissible_until`` is the
        first node with ``x <= POS_EPS`` (``inf`` if none and the tail is
        certified, ``horizon`` if none but uncertified).
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not eta.in_H_plus:
        raise ValueError(f"initial state must have eta0 > 0 (got {eta.eta0})")
    _check_grid(kernel, eta)
    k = fine_factor(kernel.dxi, dt)
    n_steps = _steps(horizon, dt, "horizon")
    cvals = step_controls(control, n_steps, dt)
    path = run_path(params, nl, kernel, eta, cvals, dt, compiled=compiled)
    n0 = k * eta.N
    times = -eta.T + dt * np.arange(len(path))
    times[n0:] = dt * np.arange(n_steps + 1)
    c = np.zeros(len(path))
    c[n0:-1] = cvals

    fwd = path[n0:]
    bad = np.nonzero(fwd <= POS_EPS)[0]
    violated = len(bad) > 0
    if violated:
        until = float(times[n0 + bad[0]])
    elif _tail_certified(path, n0, k * eta.N, control, dt, horizon):
        until = math.inf
    else:
        until = float(horizon)
    return Trajectory(times=times, x=path, c=c, dt=dt, k=k, T=eta.T,
                      admissible_until=until, violated=violated)


def _tail_certified(path, n0, nT, control, dt, horizon) -> bool:
    """Null control from ``t*`` on, with ``x >= 0`` on ``[t* - T, t*]`` and ``x(t*) > 0``.

    Then ``x(t) >= x(t*) exp(-C_f0 (t - t*))`` for all later times, so the
    trajectory stays positive forever.
    """
    t_star = control.zero_from()
    if t_star > horizon + 1e-12:
        return False
    m = n0 + int(round(t_star / dt))
    window = path[m - nT:m + 1]
    return bool(np.min(window) >= 0.0 and path[m] > POS_EPS)


def check_admissible(params, nl, kernel, eta: HState, control: ControlPath, horizon: float,
                     dt: float) -> Verdict:
    """Positivity verdict for ``control`` on ``[0, horizon]`` plus a tail certificate."""
    traj = integrate(params, nl, kernel, eta, control, horizon, dt)
    return Verdict(admissible_until=traj.admissible_until,
                   certified_forever=math.isinf(traj.admissible_until),
                   violated=traj.violated, min_x=float(np.min(traj.forward_x)))


def domain_membership(params, nl, kernel, eta: HState, dt: float | None = None) -> bool:
    """Whether the null control is admissible from ``eta``.

    Checks ``x > POS_EPS`` on ``[0, T]`` under ``c = 0``; the exponential
    lower bound then keeps the trajectory positive forever.
    """
    if not eta.in_H_plus:
        return False
    if dt is None:
        dt = kernel.dxi
    traj = integrate(params, nl, kernel, eta, ControlPath.zero(eta.T), eta.T, dt)
    return not traj.violated and float(np.min(traj.forward_x)) > POS_EPS


def comparison_gap(sub_traj: Trajectory, ref: Trajectory) -> float:
    """``max(sub - ref)`` over the common fine grid (positive means the order fails)."""
    if len(sub_traj.x) != len(ref.x) or abs(sub_traj.dt - ref.dt) > 1e-15:
        raise ValueError("trajectories live on different grids")
    return float(np.max(sub_traj.x - ref.x))


def comparison_check(params, nl, kernel, sub_traj: Trajectory, eta: HState,
                     control: ControlPath, tol: float | None = None) -> bool:
    """True iff ``sub_traj <= x(.; eta, control)`` pointwise within ``grid_tol``."""
    ref = integrate(params, nl, kernel, eta, control, sub_traj.horizon, sub_traj.dt)
    if tol is None:
        scale = float(max(np.max(np.abs(ref.x)), np.max(np.abs(sub_traj.x))))
        tol = grid_tol(sub_traj.dt, kernel.dxi, scale)
    return comparison_gap(sub_traj, ref) <= tol


def hpp_lower_bound(params: ModelParams, eta: HState, t):
    """``eta0 exp(-C_f0 t)``, the null-control lower bound for ``eta`` with nonnegative past."""
    if not eta.in_H_plusplus:
        raise ValueError("lower bound requires eta0 > 0 and a nonnegative past")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    out = eta.eta0 * np.exp(-params.c_f0 * t)
    return float(out) if out.ndim == 0 else out


def write_trajectory_csv(path, traj: Trajectory):
    """CSV with columns ``time, x, c, admissible`` in time order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "x", "c", "admissible"])
        for t, x, c in zip(traj.times, traj.x, traj.c):
            ok = 0 if traj.violated and t >= traj.admissible_until else 1
            w.writerow([repr(float(t)), repr(float(x)), repr(float(c)), ok])

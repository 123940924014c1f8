"""The Hilbert-space picture of the delay equation.

States live in ``H = R x L^2(-T, 0)`` (a present value and a past segment).
The generator is ``A(eta0, eta1) = (r eta0, eta1')`` on
``{eta1 in W^{1,2}, eta1(0) = eta0}``; it generates the shift-and-grow
semigroup ``S(t)``.  This module evaluates ``A``, ``A^{-1}``, ``A*``,
``S(t)``, ``S*(t)``, the weak norm ``||eta||_{-1} = ||A^{-1} eta||``, the
mild (variation-of-constants) solution, and the Lipschitz and stability
constants of the lifted drift in that norm.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dde import HState, ControlPath, POS_EPS, fine_factor, step_controls, _steps
from .model import Kernel, ModelParams, Nonlinearity, HypothesisError, trapezoid_weights

__all__ = [
    "LiftedState",
    "LiftedTrajectory",
    "dom_tol",
    "h_norm",
    "inner",
    "apply_A",
    "apply_Ainv",
    "norm_minus1",
    "apply_Astar",
    "apply_semigroup",
    "apply_adjoint_semigroup",
    "semigroup_bound",
    "integrate_mild",
    "equivalence_gap",
    "lipA_constant",
    "pairing_ratio",
    "counterexample_sequence",
    "gronwall_constant",
    "GronwallResult",
    "gronwall_stability",
    "SmoothSampler",
    "OperatorCheck",
    "write_operator_csv",
]


def _trapz(y, dxi):
    return float(trapezoid_weights(len(y), dxi) @ y)


def dom_tol(dxi: float, scale: float = 1.0) -> float:
    """Tolerance for domain conditions: ``10 dxi max(1, scale)``."""
    return 10.0 * dxi * max(1.0, scale)


@dataclass(frozen=True, eq=False)
class LiftedState(HState):
    """An ``HState`` with domain flags for ``A`` and ``A*``.

    ``W^{1,2}`` membership of the past is proxied by the absence of cell
    jumps larger than ``10 dom_tol``; a single grid cannot tell a steep
    smooth profile from a jump, so the flag is a heuristic.
    """

    @classmethod
    def of(cls, eta: HState) -> "LiftedState":
        if isinstance(eta, LiftedState):
            return eta
        return cls(eta.eta0, eta.eta1, eta.dxi)

    @property
    def scale(self) -> float:
        return max(1.0, abs(self.eta0), float(np.max(np.abs(self.eta1))))

    @property
    def tol(self) -> float:
        return dom_tol(self.dxi, self.scale)

    @property
    def sobolev_proxy(self) -> bool:
        return bool(np.max(np.abs(np.diff(self.eta1))) <= 10.0 * self.tol)

    @property
    def in_domain_A(self) -> bool:
        return self.sobolev_proxy and abs(self.eta1[-1] - self.eta0) <= self.tol

    @property
    def in_domain_Astar(self) -> bool:
        return self.sobolev_proxy and abs(self.eta1[0]) <= self.tol


def h_norm(eta: HState) -> float:
    """``sqrt(eta0^2 + int eta1^2)`` with trapezoid quadrature."""
    return math.sqrt(eta.eta0 ** 2 + _trapz(np.asarray(eta.eta1) ** 2, eta.dxi))


def inner(zeta: HState, eta: HState) -> float:
    if len(zeta.eta1) != len(eta.eta1):
        raise ValueError("grid mismatch")
    return zeta.eta0 * eta.eta0 + _trapz(zeta.eta1 * eta.eta1, eta.dxi)


def _deriv(y, dxi):
    # centred differences inside, second-order one-sided stencils at the ends
    return np.gradient(y, dxi, edge_order=2)


def apply_A(eta: HState, r: float, check: bool = True) -> LiftedState:
    """``(r eta0, eta1')``; requires ``eta1(0) = eta0`` within ``dom_tol``."""
    ls = LiftedState.of(eta)
    if check and abs(ls.eta1[-1] - ls.eta0) > ls.tol:
        raise ValueError(f"state is not in D(A): eta1(0) - eta0 = {ls.eta1[-1] - ls.eta0:g}")
    return LiftedState(r * ls.eta0, _deriv(ls.eta1, ls.dxi), ls.dxi)


def _cumulative_from_right(y, dxi):
    """``int_s^0 y`` at every grid node by trapezoid."""
    cells = 0.5 * dxi * (y[1:] + y[:-1])
    out = np.zeros_like(y)
    out[:-1] = np.cumsum(cells[::-1])[::-1]
    return out


def apply_Ainv(eta: HState, r: float) -> LiftedState:
    """``(eta0 / r, s -> eta0 / r - int_s^0 eta1)``."""
    if not r > 0:
        raise ValueError("A is invertible only for r > 0")
    p = eta.eta0 / r
    return LiftedState(p, p - _cumulative_from_right(np.asarray(eta.eta1), eta.dxi), eta.dxi)


def norm_minus1(eta: HState, r: float) -> float:
    return h_norm(apply_Ainv(eta, r))


def apply_Astar(eta: HState, r: float) -> LiftedState:
    """``(r eta0 + eta1(0), -eta1')``; requires ``eta1(-T) = 0`` within ``dom_tol``."""
    ls = LiftedState.of(eta)
    if abs(ls.eta1[0]) > ls.tol:
        raise ValueError(f"state is not in D(A*): eta1(-T) = {ls.eta1[0]:g} != 0")
    return LiftedState(r * ls.eta0 + ls.eta1[-1], -_deriv(ls.eta1, ls.dxi), ls.dxi)


def apply_semigroup(t: float, eta: HState, r: float) -> LiftedState:
    """``S(t) eta``: present ``eta0 e^{rt}``; past ``eta1(t + zeta)`` while ``t + zeta <= 0``,
    else ``eta0 e^{r (t + zeta)}``.  Off-grid shifts interpolate linearly.

    The node where ``t + zeta = 0`` keeps the history value ``eta1(0)``, so
    ``S(0)`` is the identity on samples as well as in ``L2``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    grid = eta.grid
    s = t + grid
    hist = s <= 1e-12 * max(1.0, eta.T)
    past = np.where(hist, np.interp(s, grid, eta.eta1), eta.eta0 * np.exp(r * np.maximum(s, 0.0)))
    return LiftedState(eta.eta0 * math.exp(r * t), past, eta.dxi)


def apply_adjoint_semigroup(t: float, eta: HState, r: float) -> LiftedState:
    """``S*(t) eta`` for ``0 <= t <= T``.

    Present ``e^{rt} (eta0 + int_{-t}^0 eta1(xi) e^{r xi} dxi)``; past
    ``eta1(zeta - t)`` for ``zeta - t >= -T`` and zero otherwise.
    """
    if t < 0 or t > eta.T * (1 + 1e-12):
        raise ValueError(f"adjoint semigroup formula holds for 0 <= t <= T (got t = {t})")
    grid = eta.grid
    eta1 = np.asarray(eta.eta1)
    if t > 0:
        inside = grid > -t
        pts = np.concatenate([[-t], grid[inside]])
        vals = np.interp(pts, grid, eta1) * np.exp(r * pts)
        integral = float(np.sum(0.5 * np.diff(pts) * (vals[1:] + vals[:-1])))
    else:
        integral = 0.0
    s = grid - t
    past = np.where(s >= -eta.T * (1 + 1e-12), np.interp(s, grid, eta1), 0.0)
    return LiftedState(math.exp(r * t) * (eta.eta0 + integral), past, eta.dxi)


def semigroup_bound(t: float, T: float, r: float) -> float:
    """``(3 + 2T) e^{2rt}``, the bound on ``||S(t)||^2``."""
    return (3.0 + 2.0 * T) * math.exp(2.0 * r * t)


# ---------------------------------------------------------------------------
# Mild solutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LiftedTrajectory:
    """Mild solution sampled at every fine step.

    ``present[n]`` is ``X_0(n dt)`` and ``pasts[n]`` the coarse samples of
    ``X_1(n dt)``.
    """

    times: np.ndarray
    present: np.ndarray
    pasts: np.ndarray
    dxi: float
    admissible_until: float
    violated: bool

    def state(self, n: int) -> LiftedState:
        return LiftedState(self.present[n], self.pasts[n], self.dxi)


def _drift_fn(nl: Nonlinearity):
    if nl.kind == "affine_saturating":
        a1, a2, K, b = nl.params
        return lambda x, q: a1 * min(max(x, 0.0), K) + a2 * min(q, K) + b
    return lambda x, q: float(nl(x, q))


def integrate_mild(params: ModelParams, nl: Nonlinearity, kernel: Kernel, eta: HState,
                   control: ControlPath, horizon: float, dt: float) -> LiftedTrajectory:
    """Variation-of-constants stepping ``X(t + dt) = S(dt) X(t) + int_0^dt S(dt - tau) [F - c n]``.

    ``S(dt)`` is an exact shift on the fine buffer.  The forcing ``F - c n``
    only feeds the present (and the ``zeta = 0`` node), where the integral
    is a trapezoid rule with exponential weights and one predictor pass.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not eta.in_H_plus:
        raise ValueError(f"initial state must have eta0 > 0 (got {eta.eta0})")
    if eta.N != kernel.N:
        raise ValueError("state grid does not match kernel grid")
    k = fine_factor(kernel.dxi, dt)
    n_steps = _steps(horizon, dt, "horizon")
    cvals = step_controls(control, n_steps, dt)
    N = eta.N
    r = params.r
    w = kernel.weights
    f = _drift_fn(nl)
    er = math.exp(r * dt)
    cfac = (er - 1.0) / r if r > 0 else dt

    buf = np.empty(k * N + 1)
    buf[:k * N] = np.interp(np.arange(k * N) / k, np.arange(N + 1), eta.eta1)
    buf[k * N] = eta.eta1[-1]
    p = eta.eta0
    present = np.empty(n_steps + 1)
    pasts = np.empty((n_steps + 1, N + 1))
    present[0] = p
    pasts[0] = eta.eta1
    for n in range(n_steps):
        c = cvals[n]
        fn = f(p, float(w @ buf[::k]))
        # S(dt): shift the past, the present enters at zeta = -dt
        buf[:-1] = buf[1:]
        buf[-2] = p
        pred = er * p + dt * er * fn - c * cfac
        buf[-1] = pred
        fp = f(pred, float(w @ buf[::k]))
        p = er * p + 0.5 * dt * (er * fn + fp) - c * cfac
        buf[-1] = p
        present[n + 1] = p
        pasts[n + 1] = buf[::k]
    times = dt * np.arange(n_steps + 1)
    bad = np.nonzero(present <= POS_EPS)[0]
    violated = len(bad) > 0
    until = float(times[bad[0]]) if violated else float(horizon)
    return LiftedTrajectory(times, present, pasts, kernel.dxi, until, violated)


def equivalence_gap(lifted: LiftedTrajectory, traj) -> np.ndarray:
    """H-distance between ``X(t)`` and ``(x(t), x(t + .))`` at every fine step."""
    n0 = traj.n_hist
    k = traj.k
    n_steps = len(lifted.present) - 1
    out = np.empty(n_steps + 1)
    w = trapezoid_weights(lifted.pasts.shape[1], lifted.dxi)
    for n in range(n_steps + 1):
        seg = traj.x[n:n + n0 + 1:k].copy()
        if n == 0:
            seg[-1] = lifted.pasts[0][-1]  # the state eta keeps its own eta1(0)
        d0 = lifted.present[n] - traj.x[n0 + n]
        d1 = lifted.pasts[n] - seg
        out[n] = math.sqrt(d0 * d0 + float(w @ (d1 * d1)))
    return out


# ---------------------------------------------------------------------------
# Lipschitz property of the delay pairing in the weak norm
# ---------------------------------------------------------------------------

def lipA_constant(params: ModelParams, kernel: Kernel) -> float:
    """``C_a = r + ||A*(0, a)||``, the constant in
    ``|eta0| + |int a eta1| <= C_a ||eta||_{-1}``.

    Raises :class:`HypothesisError` when ``a(-T) != 0``: then ``(0, a)`` is
    outside the domain of ``A*`` and no such constant exists.
    """
    a = LiftedState(0.0, kernel.samples, kernel.dxi)
    if kernel.samples[0] != 0.0:
        raise HypothesisError(
            f"a(-T) = {kernel.samples[0]:g} != 0: (0, a) is not in D(A*), the pairing "
            "is not Lipschitz in the weak norm")
    return params.r + h_norm(apply_Astar(a, params.r))


def pairing_ratio(eta: HState, kernel: Kernel, r: float) -> float:
    """``(|eta0| + |int a eta1|) / ||eta||_{-1}``."""
    return (abs(eta.eta0) + abs(kernel.pair(eta.eta1))) / norm_minus1(eta, r)


def counterexample_sequence(n: int, T: float = 1.0, N: int = 200, r: float = 1.0,
                            kernel: Kernel | None = None) -> tuple[float, float]:
    """Pairing and weak norm of ``eta^n = (0, n 1_{[-T, -T + 1/n]})``.

    With ``kernel=None`` the weight is ``a = 1``, so the pairing is exactly 1
    while ``||eta^n||_{-1} = 1 / sqrt(3n) -> 0``.  All integrals are exact for
    piecewise-linear data: the antiderivative of the indicator is piecewise
    linear on the grid refined by the breakpoint ``-T + 1/n``.

    Returns
    -------
    (mass, nm1) : tuple of float
        ``int a eta1^n`` and ``||eta^n||_{-1}``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if kernel is not None:
        N, T = kernel.N, kernel.T
    dxi = T / N
    width = 1.0 / n
    if width < dxi * (1 - 1e-12):
        raise ValueError(f"width 1/n = {width:g} is below the grid spacing {dxi:g}")
    if width > T:
        raise ValueError("support 1/n exceeds the delay interval")
    grid = np.linspace(-T, 0.0, N + 1)
    brk = -T + width
    pts = np.union1d(grid, [brk])
    # F(s) = int_s^0 eta1 = n * max(brk - s, 0): exact, piecewise linear
    F = n * np.maximum(brk - pts, 0.0)
    g = -F  # second component of A^{-1} eta^n (first component is 0)
    h = np.diff(pts)
    sq = float(np.sum(h * (g[:-1] ** 2 + g[:-1] * g[1:] + g[1:] ** 2) / 3.0))
    nm1 = math.sqrt(sq)
    if kernel is None:
        mass = n * width
    else:
        av = np.interp(pts, grid, kernel.samples)
        sel = pts <= brk + 1e-15
        ps, vs = pts[sel], av[sel]
        mass = float(n * np.sum(0.5 * np.diff(ps) * (vs[1:] + vs[:-1])))
    return mass, nm1


# ---------------------------------------------------------------------------
# Stability in the weak norm
# ---------------------------------------------------------------------------

def gronwall_constant(params: ModelParams, kernel: Kernel) -> tuple[float, float]:
    """``(K, K e^{K T})`` for ``||X(t) - Xbar(t)||_{-1} <= K e^{K t} ||eta - etabar||_{-1}``.

    ``K = max(M, M L)`` with ``M = sqrt(3 + 2T) e^{rT}`` bounding ``S(t)`` on
    ``[0, T]`` (also in the weak norm, since ``S`` commutes with ``A^{-1}``)
    and ``L = C_f0 C_a sqrt(1 + T) / r`` the weak-norm Lipschitz constant of
    ``F(eta) = (f(eta), 0)``.
    """
    T, r = params.T, params.r
    M = math.sqrt(3.0 + 2.0 * T) * math.exp(r * T)
    L = 0.0 if params.c_f0 == 0 else params.c_f0 * lipA_constant(params, kernel) * math.sqrt(1.0 + T) / r
    K = max(M, M * L)
    return K, K * math.exp(K * T)


@dataclass(frozen=True)
class GronwallResult:
    ratio: float
    present_ratio: float
    bound: float
    semigroup_const: float

    @property
    def passed(self) -> bool:
        return self.ratio <= self.bound and self.present_ratio <= self.bound


def gronwall_stability(params: ModelParams, nl: Nonlinearity, kernel: Kernel, eta: HState,
                       eta_bar: HState, dt: float | None = None) -> GronwallResult:
    """Worst weak-norm amplification of ``eta - eta_bar`` over ``[0, T]`` under null control.

    ``present_ratio`` is ``max_t |X_0 - Xbar_0| / (r ||eta - eta_bar||_{-1})``;
    both ratios should stay below ``K e^{K T}``.
    """
    d = eta - eta_bar
    den = norm_minus1(d, params.r)
    if den == 0.0:
        raise ValueError("coincident initial states: the ratio is undefined")
    if dt is None:
        dt = kernel.dxi
    zero = ControlPath.zero(params.T)
    X = integrate_mild(params, nl, kernel, eta, zero, params.T, dt)
    Y = integrate_mild(params, nl, kernel, eta_bar, zero, params.T, dt)
    ratio = 0.0
    pres = 0.0
    for n in range(len(X.times)):
        diff = LiftedState(X.present[n] - Y.present[n], X.pasts[n] - Y.pasts[n], kernel.dxi)
        ratio = max(ratio, norm_minus1(diff, params.r) / den)
        pres = max(pres, abs(diff.eta0) / (params.r * den))
    _, bound = gronwall_constant(params, kernel)
    M = math.sqrt(3.0 + 2.0 * params.T) * math.exp(params.r * params.T)
    return GronwallResult(ratio, pres, bound, M)


# ---------------------------------------------------------------------------
# Random smooth states and operator-check records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothSampler:
    """A random trigonometric profile that can be sampled on any grid.

    ``domain`` ``"A"`` forces ``eta1(0) = eta0``; ``"Astar"`` forces
    ``eta1(-T) = 0`` (by multiplying with ``(xi + T) / T``).
    """

    eta0: float
    coeffs: np.ndarray
    T: float
    domain: str | None = None

    @classmethod
    def draw(cls, rng: np.random.Generator, T: float, domain: str | None = None,
             modes: int = 4, amp: float = 1.0) -> "SmoothSampler":
        coeffs = rng.normal(0.0, amp, size=(2 * modes + 1,)) / np.concatenate(
            [[1.0], np.repeat(np.arange(1, modes + 1), 2)])
        return cls(float(rng.normal(0.0, amp)), coeffs, T, domain)

    def past(self, xi):
        modes = (len(self.coeffs) - 1) // 2
        y = np.full_like(xi, self.coeffs[0], dtype=float)
        for m in range(1, modes + 1):
            arg = math.pi * m * xi / self.T
            y = y + self.coeffs[2 * m - 1] * np.cos(arg) + self.coeffs[2 * m] * np.sin(arg)
        if self.domain == "Astar":
            y = y * (xi + self.T) / self.T
        return y

    def sample(self, N: int) -> LiftedState:
        xi = np.linspace(-self.T, 0.0, N + 1)
        eta1 = self.past(xi)
        eta0 = float(eta1[-1]) if self.domain == "A" else self.eta0
        return LiftedState(eta0, eta1, self.T / N)


@dataclass(frozen=True)
class OperatorCheck:
    check_name: str
    sample_id: int
    lhs: float
    rhs: float
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)


def write_operator_csv(path, checks):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check_name", "sample_id", "lhs", "rhs", "error", "tolerance", "pass"])
        for c in checks:
            w.writerow([c.check_name, c.sample_id, repr(float(c.lhs)), repr(float(c.rhs)),
                        repr(float(c.error)), repr(float(c.tolerance)), int(c.passed)])

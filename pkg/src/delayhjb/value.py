"""Discounted payoff, value-function approximation and the Hamiltonian.

``V(eta)`` is approximated from below by maximising the payoff over
piecewise-constant consumption on a finite horizon.  The payoff is concave
in the control and the admissible set is convex, so a local maximiser is
global; the result carries a bracket ``[v_lo, v_hi]`` accounting for the
discounted tail beyond the horizon and the optimiser gap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate as _integrate
from scipy import optimize as _optimize

from . import _kernels
from .dde import POS_EPS, ControlPath, HState, domain_membership, fine_factor, initial_path
from .model import Kernel, ModelParams, Nonlinearity, UtilityPair, u2_integrability

__all__ = [
    "ControlProblem",
    "JEstimate",
    "ValueEstimate",
    "GradientEstimate",
    "evaluate_J",
    "approximate_V",
    "hamiltonian",
    "feedback_c",
    "partial_V_eta0",
    "value_upper_bound",
    "default_horizon",
    "write_value_csv",
    "format_float",
]


def default_horizon(params: ModelParams) -> float:
    return max(5.0 / params.rho, 3.0 * params.T)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Everything needed to evaluate payoffs: data, kernel, utilities and the time step."""

    params: ModelParams
    nl: Nonlinearity
    kernel: Kernel
    utilities: UtilityPair
    dt: float

    def __post_init__(self):
        fine_factor(self.kernel.dxi, self.dt)


@dataclass(frozen=True)
class JEstimate:
    """Finite-horizon payoff and the bracket for the discarded tail.

    The infinite-horizon payoff of the control (continued by zero) lies in
    ``[estimate + tail_lo, estimate + tail_hi]`` up to integration error.
    """

    estimate: float
    tail_lo: float
    tail_hi: float

    def __iter__(self):
        return iter((self.estimate, self.tail_lo, self.tail_hi))

    @property
    def admissible(self) -> bool:
        return self.estimate > -math.inf


@dataclass(frozen=True, eq=False)
class ValueEstimate:
    v_lo: float
    v_hi: float
    control: ControlPath | None
    horizon: float
    gap: float = 0.0
    iterations: int = 0

    @property
    def in_domain(self) -> bool:
        return self.v_lo > -math.inf


@dataclass(frozen=True)
class GradientEstimate:
    v_eta0: float
    h_used: float
    stability: float


# ---------------------------------------------------------------------------
# Payoff evaluation
# ---------------------------------------------------------------------------

class _Evaluator:
    """Payoff of step controls from a fixed initial state on a fixed horizon.

    Caches discount weights; ``run(values)`` maps segment values to
    ``(estimate, path)`` with ``-inf`` for positivity violations.
    """

    def __init__(self, prob: ControlProblem, eta: HState, horizon: float, seg_len: float):
        self.prob = prob
        self.eta = eta
        dt = prob.dt
        self.n_steps = int(round(horizon / dt))
        if abs(self.n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
            raise ValueError(f"horizon {horizon} is not a multiple of dt = {dt}")
        self.seg_steps = int(round(seg_len / dt))
        if self.seg_steps < 1 or abs(self.seg_steps * dt - seg_len) > 1e-9 * max(1.0, seg_len):
            raise ValueError(f"dt = {dt} does not divide the segment length {seg_len}")
        self.horizon = horizon
        self.seg_len = seg_len
        rho = prob.params.rho
        t = dt * np.arange(self.n_steps + 1)
        disc = np.exp(-rho * t)
        self.step_disc = (disc[:-1] - disc[1:]) / rho
        # exact integral of e^{-rho t} times the linear interpolant of U2(x)
        if rho * dt > 1e-6:
            e = math.exp(-rho * dt)
            alpha = (1.0 - (1.0 - e) / (rho * dt)) / rho
            beta = ((1.0 - e) / (rho * dt) - e) / rho
        else:
            alpha = beta = 0.5 * dt
        w2 = np.zeros(self.n_steps + 1)
        w2[:-1] += alpha * disc[:-1]
        w2[1:] += beta * disc[:-1]
        self.u2_weights = w2
        self.k = fine_factor(prob.kernel.dxi, dt)
        self.n0 = prob.kernel.N * self.k
        self.u1_zero = float(prob.utilities.u1(0.0))
        self.weights = prob.kernel.weights
        self._init = initial_path(eta, self.k, self.n_steps)
        self.q0 = prob.kernel.pair(eta.eta1)
        self.has_tangent = prob.nl.kind == "affine_saturating"

    def step_controls(self, values) -> np.ndarray:
        c = np.zeros(self.n_steps)
        reps = np.repeat(np.asarray(values, dtype=float), self.seg_steps)[:self.n_steps]
        c[:len(reps)] = reps
        return c

    def u1_part(self, values) -> float:
        values = np.asarray(values, dtype=float)
        seg_disc = self.step_disc[:len(values) * self.seg_steps]
        m = len(seg_disc) // self.seg_steps
        per_seg = seg_disc.reshape(m, self.seg_steps).sum(axis=1)
        u = np.asarray(self.prob.utilities.u1(values[:m]))
        rest = self.step_disc[m * self.seg_steps:].sum()
        return float(u @ per_seg) + self.u1_zero * float(rest)

    def path(self, values) -> np.ndarray:
        p = self.prob
        cvals = self.step_controls(values)
        if self.has_tangent:
            return _kernels.heun_affine(self._init.copy(), self.weights, self.k, p.params.r,
                                        p.nl.params, cvals, p.dt, self.q0)
        return _kernels.heun_generic(self._init.copy(), self.weights, self.k, p.params.r, p.nl,
                                     cvals, p.dt, self.q0)

    def payoff(self, values, path, terminal: bool = True) -> float:
        """Finite-horizon payoff, plus the lower tail of the zero continuation if ``terminal``."""
        fwd = path[self.n0:]
        if np.min(fwd) <= POS_EPS or not np.all(np.isfinite(fwd)):
            return -math.inf
        val = self.u1_part(values)
        u2 = self.prob.utilities.u2
        if not u2.is_zero:
            val += float(self.u2_weights @ np.asarray(u2(fwd)))
        if terminal:
            val += self.tails(path)[0]
        return val

    def run(self, values):
        path = self.path(values)
        return self.payoff(values, path), path

    def run_tangent(self, values):
        """Payoff, path, payoff gradient and forward-path sensitivities in the segment values."""
        p = self.prob
        values = np.asarray(values, dtype=float)
        M = len(values)
        path, D = _kernels.heun_affine_tangent(self._init.copy(), self.weights, self.k, p.params.r,
                                               p.nl.params, self.step_controls(values), p.dt,
                                               self.q0, self.seg_steps, M)
        val = self.payoff(values, path)
        m = min(M, self.n_steps // self.seg_steps)
        per_seg = self.step_disc[:m * self.seg_steps].reshape(m, self.seg_steps).sum(axis=1)
        g = np.zeros(M)
        with np.errstate(divide="ignore", invalid="ignore"):
            g[:m] = np.asarray(p.utilities.u1.deriv(values[:m])) * per_seg
        g[~np.isfinite(g)] = 1e12  # U1'(0+) = +inf
        Df = D[self.n0:]
        u2 = p.utilities.u2
        if not u2.is_zero and val > -math.inf:
            g += (self.u2_weights * np.asarray(u2.deriv(path[self.n0:]))) @ Df
            prm = p.params
            slope = math.exp(-prm.rho * self.horizon) * _state_tail_deriv(u2, float(path[-1]),
                                                                         prm.rho, prm.c_f0)
            g += slope * Df[-1]
        return val, path, g, Df

    def segment_minima(self, path, n_values) -> np.ndarray:
        fwd = path[self.n0 + 1:]
        m = n_values * self.seg_steps
        mins = fwd[:m].reshape(n_values, self.seg_steps).min(axis=1)
        if m < len(fwd):
            mins = np.append(mins, fwd[m:].min())
        return mins

    def tails(self, path) -> tuple[float, float]:
        """``(tail_lo, tail_hi)`` for the zero continuation beyond the horizon."""
        prob = self.prob
        prm = prob.params
        H = self.horizon
        tail_hi = math.exp(-prm.rho * H) * (prm.u1_sup + prm.u2_sup) / prm.rho
        xi = float(path[-1])
        tail_lo = math.exp(-prm.rho * H) * self.u1_zero / prm.rho
        u2 = prob.utilities.u2
        if not u2.is_zero:
            tail_lo += math.exp(-prm.rho * H) * _state_tail(u2, xi, prm.rho, prm.c_f0)
        return tail_lo, tail_hi

    def tail_certified(self, path) -> bool:
        """Zero consumption after the horizon keeps ``x`` positive forever."""
        window = path[-(self.n0 + 1):]
        return bool(np.min(window) >= 0.0 and path[-1] > POS_EPS)


def _state_tail(u2, xi: float, rho: float, C: float) -> float:
    """``int_0^inf e^{-rho s} U2(xi e^{-C s}) ds``: the state payoff of the lower bound
    ``x(H + s) >= x(H) e^{-C s}`` under zero consumption."""
    if u2.kind in ("zero", "inverse_power", "log"):
        return u2_integrability(u2, rho, C, xi)
    val, _ = _integrate.quad(lambda s: math.exp(-rho * s) * float(u2(xi * math.exp(-C * s))),
                             0.0, 60.0 / rho, limit=200)
    return val


def _state_tail_deriv(u2, xi: float, rho: float, C: float) -> float:
    """Derivative of :func:`_state_tail` in ``xi``."""
    if u2.kind == "inverse_power":
        beta, p = u2._p(0, 0.1), u2._p(1, 1.0)
        if rho <= p * C:
            return 0.0
        return beta * p * xi ** (-p - 1.0) / (rho - p * C)
    if u2.kind == "log":
        return 1.0 / (rho * xi)
    h = 1e-6 * max(1.0, xi)
    return (_state_tail(u2, xi + h, rho, C) - _state_tail(u2, xi - h, rho, C)) / (2 * h)


def evaluate_J(params: ModelParams, nl: Nonlinearity, kernel: Kernel, utilities: UtilityPair,
               eta: HState, control: ControlPath, horizon: float, dt: float) -> JEstimate:
    """Discounted payoff of ``control`` on ``[0, horizon]`` with tail bracket.

    The consumption term is integrated exactly on each step, the state term
    by a trapezoid rule with exact exponential weights.  Returns an
    estimate of ``-inf`` when the control violates positivity on the
    horizon or the zero continuation cannot be certified.
    """
    if control.horizon > horizon + 1e-9 * horizon:
        raise ValueError("control extends beyond the evaluation horizon")
    prob = ControlProblem(params, nl, kernel, utilities, dt)
    ev = _Evaluator(prob, eta, horizon, control.dt)
    path = ev.path(control.values)
    val = ev.payoff(control.values, path, terminal=False)
    if val == -math.inf or not ev.tail_certified(path):
        return JEstimate(-math.inf, 0.0, 0.0)
    lo, hi = ev.tails(path)
    return JEstimate(val, lo, hi)


def value_upper_bound(params: ModelParams) -> float:
    """``(sup U1 + sup U2) / rho``."""
    return (params.u1_sup + params.u2_sup) / params.rho


# ---------------------------------------------------------------------------
# Maximisation over piecewise-constant controls
# ---------------------------------------------------------------------------

def _golden_max(f, lo, hi, tol, max_iter=200):
    """Golden-section maximisation of a quasi-concave ``f`` that is ``-inf`` past a cut-off."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > tol and it < max_iter:
        # ties (both infeasible) move towards the feasible low end
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
        it += 1
    return (c, fc) if fc >= fd else (d, fd)


def _max_feasible_constant(ev: _Evaluator, n_seg: int, hi0: float = 1.0) -> float:
    def feasible(k):
        return ev.run(np.full(n_seg, k))[0] > -math.inf

    hi = hi0
    while feasible(hi):
        hi *= 2.0
        if hi > 1e8:
            return hi
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10 * max(1.0, hi):
            break
    return lo


def approximate_V(params: ModelParams, nl: Nonlinearity, kernel: Kernel, utilities: UtilityPair,
                  eta: HState, *, dt: float, horizon: float | None = None, segments: int = 20,
                  tol: float = 1e-9, warm_start: ControlPath | None = None,
                  polish_sweeps: int = 1, check_domain: bool = True) -> ValueEstimate:
    """Approximate ``V(eta)`` by maximising the payoff over ``segments`` constant pieces.

    The payoff is concave in the control and the admissible set is convex.
    A sequential quadratic programme (bounds ``c >= 0`` and per-segment
    positivity constraints) finds the maximiser; golden-section coordinate
    sweeps then polish it.  ``v_lo`` is the payoff found plus the certified
    lower tail; ``v_hi`` adds the tail width and the optimiser gap.

    Returns ``v_lo = v_hi = -inf`` when ``eta`` is outside the domain of ``V``.
    """
    if horizon is None:
        horizon = default_horizon(params)
    if check_domain and not domain_membership(params, nl, kernel, eta, dt=dt):
        return ValueEstimate(-math.inf, -math.inf, None, horizon)
    prob = ControlProblem(params, nl, kernel, utilities, dt)
    seg_len = horizon / segments
    ev = _Evaluator(prob, eta, horizon, seg_len)
    M = segments
    cache: dict[bytes, tuple[float, np.ndarray]] = {}

    def run(c):
        key = np.asarray(c, dtype=float).tobytes()
        if key not in cache:
            cache[key] = ev.run(c)
        return cache[key]

    # starting point: warm start if admissible, else half the best constant
    x0 = None
    if warm_start is not None and warm_start.M == M:
        if run(warm_start.values)[0] > -math.inf:
            x0 = np.array(warm_start.values, dtype=float)
    if x0 is None:
        kmax = _max_feasible_constant(ev, M)
        x0 = np.full(M, 0.5 * kmax if kmax > 0 else 0.0)
        if run(x0)[0] == -math.inf:
            x0 = np.zeros(M)
    f_start = run(x0)[0]
    if f_start == -math.inf:
        return ValueEstimate(-math.inf, -math.inf, None, horizon)

    scale = max(1.0, abs(f_start))
    feas_eps = 1e-9 * max(1.0, eta.eta0)
    h_fd = 1e-7

    def fd_grad(c):
        if ev.has_tangent:
            _, path, gJ, Df = ev.run_tangent(c)
            fwd = path[ev.n0 + 1:]
            m = M * ev.seg_steps
            idx = np.arange(M) * ev.seg_steps + np.argmin(fwd[:m].reshape(M, ev.seg_steps), axis=1)
            if m < len(fwd):
                idx = np.append(idx, m + int(np.argmin(fwd[m:])))
            return gJ, Df[1:][idx]
        base_val, base_path = run(c)
        base_min = ev.segment_minima(base_path, M)
        gJ = np.empty(M)
        gC = np.empty((len(base_min), M))
        for i in range(M):
            step = h_fd * max(1.0, abs(c[i]))
            cp = c.copy()
            cp[i] += step
            v, pth = ev.run(cp)
            gJ[i] = (v - base_val) / step if v > -math.inf else -1e6
            gC[:, i] = (ev.segment_minima(pth, M) - base_min) / step
        return gJ, gC

    grad_cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def grads(c):
        key = c.tobytes()
        if key not in grad_cache:
            grad_cache[key] = fd_grad(c)
        return grad_cache[key]

    def obj(c):
        v = run(c)[0]
        return -v / scale if v > -math.inf else 1e6

    def obj_grad(c):
        return -grads(np.asarray(c, dtype=float))[0] / scale

    def cons(c):
        return ev.segment_minima(run(c)[1], M) - feas_eps

    def cons_jac(c):
        return grads(np.asarray(c, dtype=float))[1]

    res = _optimize.minimize(obj, x0, jac=obj_grad, method="SLSQP",
                             bounds=[(0.0, None)] * M,
                             constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
                             options={"ftol": tol * 1e-3, "maxiter": 500})
    x = np.maximum(np.asarray(res.x, dtype=float), 0.0)
    fx = run(x)[0]
    if not fx > -math.inf or fx < f_start:
        # step back towards the admissible start
        lo, hi = 0.0, 1.0
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if run(x0 + mid * (x - x0))[0] > -math.inf:
                lo = mid
            else:
                hi = mid
        x = x0 + lo * (x - x0)
        fx = run(x)[0]
        if fx < f_start:
            x, fx = x0, f_start
    f_opt = fx

    # coordinate polish
    for _ in range(polish_sweeps):
        before = fx
        for i in range(M):
            def fi(v, i=i):
                y = x.copy()
                y[i] = v
                return run(y)[0]
            # payoff loss is quadratic in the control error, so sqrt(tol) suffices
            width = 0.5 * x[i] + 1e-3 * max(1.0, float(np.max(x)))
            v, fv = _golden_max(fi, max(0.0, x[i] - width), x[i] + width,
                                math.sqrt(tol) * max(1.0, x[i]))
            if fv > fx:
                x[i] = v
                fx = fv
        if fx - before <= tol * scale:
            break
    gap = tol * scale + (fx - f_opt)

    val, path = run(x)
    if not ev.tail_certified(path):
        return ValueEstimate(-math.inf, -math.inf, None, horizon)
    lo, hi = ev.tails(path)
    ctrl = ControlPath(seg_len, x)
    return ValueEstimate(val, val - lo + hi + gap, ctrl, horizon, gap=gap, iterations=int(res.nit))


# ---------------------------------------------------------------------------
# Hamiltonian and feedback
# ---------------------------------------------------------------------------

def feedback_c(utilities: UtilityPair, zeta0: float) -> float:
    """The maximiser of ``U1(c) - zeta0 c`` over ``c >= 0``: the root of ``U1'(c) = zeta0``."""
    if not zeta0 > 0:
        raise ValueError(f"the Hamiltonian is defined for zeta0 > 0 (got {zeta0})")
    u1 = utilities.u1
    return u1.inverse_deriv(zeta0)


def hamiltonian(utilities: UtilityPair, zeta0: float) -> float:
    """``sup_{c >= 0} U1(c) - zeta0 c``."""
    c = feedback_c(utilities, zeta0)
    return float(utilities.u1(c)) - zeta0 * c


# ---------------------------------------------------------------------------
# Directional derivative in the present
# ---------------------------------------------------------------------------

def partial_V_eta0(params, nl, kernel, utilities, eta: HState, h: float | None = None, *,
                   dt: float, horizon: float | None = None, segments: int = 20,
                   tol: float = 1e-9, base: ValueEstimate | None = None) -> GradientEstimate:
    """Central difference of ``V`` in the present direction with widths ``h`` and ``h / 2``.

    Shifted problems are warm-started from the base maximiser.  Returns the
    width-``h/2`` estimate; ``stability`` is the relative gap between both.
    """
    if h is None:
        h = 1e-3 * max(1.0, eta.eta0)
    if not h > 0:
        raise ValueError("h must be positive")
    if eta.eta0 - h <= 0:
        raise ValueError("the shifted point eta0 - h leaves the positive half-space")
    kw = dict(dt=dt, horizon=horizon, segments=segments, tol=tol)
    if base is None:
        base = approximate_V(params, nl, kernel, utilities, eta, **kw)
    if not base.in_domain:
        raise ValueError("base point is outside the domain of V")

    def v(e0):
        est = approximate_V(params, nl, kernel, utilities, eta.with_eta0(e0),
                            warm_start=base.control, **kw)
        if not est.in_domain:
            raise ValueError(f"shifted point eta0 = {e0} is outside the domain of V")
        return est.v_lo

    d1 = (v(eta.eta0 + h) - v(eta.eta0 - h)) / (2 * h)
    d2 = (v(eta.eta0 + h / 2) - v(eta.eta0 - h / 2)) / h
    stab = abs(d1 - d2) / max(abs(d2), 1e-300)
    return GradientEstimate(d2, h / 2, stab)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def format_float(v: float) -> str:
    """Locale-free round-trip formatting; ``-inf`` marks an empty admissible set."""
    v = float(v)
    if v == -math.inf:
        return "-inf"
    if v == math.inf:
        return "inf"
    if math.isnan(v):
        return "nan"
    return repr(v)


def write_value_csv(path, rows):
    """Rows of ``(eta0, eta1_tag, v_lo, v_hi, v_eta0, feedback_c)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta0", "eta1_tag", "v_lo", "v_hi", "v_eta0", "feedback_c"])
        for e0, tag, lo, hi, d, c in rows:
            w.writerow([format_float(e0), tag, format_float(lo), format_float(hi),
                        format_float(d), format_float(c)])

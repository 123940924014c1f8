"""Numerical checks of dynamic programming, the HJB equation and the shape of ``V``.

Each probe returns a :class:`ProbeReport`; every tolerance it uses comes
from a single :class:`ProbeTolerances` block.  Probes that take a
``value_fn`` can be fed a deliberately wrong value function to check that
they fail (negative controls).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dde import ControlPath, HState, integrate
from .lift import LiftedState, apply_Astar, inner
from .model import eval_drift, trapezoid_weights
from .value import (ControlProblem, ValueEstimate, _Evaluator, _golden_max, approximate_V,
                    evaluate_J, format_float, hamiltonian, partial_V_eta0, value_upper_bound)

__all__ = [
    "ProbeTolerances",
    "ProbeReport",
    "ValueSetup",
    "HJBTerms",
    "hjb_balance",
    "dpp_residual",
    "hjb_residual",
    "past_gradient",
    "concavity_probe",
    "monotonicity_probe",
    "ceiling_probe",
    "regularity_probe",
    "write_probe_csv",
]


@dataclass(frozen=True)
class ProbeTolerances:
    """All probe tolerances in one place.

    ``hjb_tol`` and ``cont_tol`` are calibration choices, not constants of
    the underlying theory.
    """

    adjoint: float = 1e-3          # adjoint pairing error, relative to the pairing scale
    shrink: float = 1.8            # required error reduction when the grid is refined 2x
    semigroup_slack: float = 1e-9
    pairing_rel: float = 1e-6
    counterexample_growth: float = 2.0
    equivalence: float = 5e-3
    hamiltonian: float = 1e-6
    foc_rel: float = 1e-8
    ceiling_slack: float = 1e-6    # added to the optimiser gap for the ceiling check
    large_eta0_rel: float = 0.05
    brute_force: float = 1e-3
    hjb_tol: float = 0.1
    hjb_trend: float = 1.5
    cont_tol: float = 5e-2
    stab_tol: float = 5e-2


@dataclass
class ProbeReport:
    """Outcome of one probe: ``passed`` iff ``max_violation <= tolerance``.

    ``witnesses`` holds ``(sample_id, input, lhs, rhs, violation)`` for every
    sample; diagnostic probes are reported but never fail a suite.
    """

    probe_name: str
    tolerance: float
    witnesses: list = field(default_factory=list)
    diagnostic: bool = False
    note: str = ""

    def add(self, sample_id: int, inp: str, lhs: float, rhs: float, violation: float):
        self.witnesses.append((sample_id, inp, float(lhs), float(rhs), float(violation)))

    @property
    def samples(self) -> int:
        return len(self.witnesses)

    @property
    def max_violation(self) -> float:
        if not self.witnesses:
            return -math.inf
        return max(w[4] for w in self.witnesses)

    @property
    def passed(self) -> bool:
        v = self.max_violation
        return bool(v <= self.tolerance) and not math.isnan(v)

    def failures(self):
        return [w for w in self.witnesses if not w[4] <= self.tolerance]

    def summary(self) -> str:
        status = "PASS" if self.passed else ("NOTE" if self.diagnostic else "FAIL")
        line = (f"{status} {self.probe_name}: samples={self.samples} "
                f"max_violation={self.max_violation:.3e} tolerance={self.tolerance:.3e}")
        return line + (f" ({self.note})" if self.note else "")


def write_probe_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["probe_name", "sample_id", "input", "lhs", "rhs", "violation", "tolerance",
                    "pass"])
        for rep in reports:
            for sid, inp, lhs, rhs, viol in rep.witnesses:
                w.writerow([rep.probe_name, sid, inp, format_float(lhs), format_float(rhs),
                            format_float(viol), format_float(rep.tolerance),
                            int(viol <= rep.tolerance)])


# ---------------------------------------------------------------------------
# Shared setup
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ValueSetup:
    """Model plus value-layer numerics (grid, step, horizon, control segments)."""

    params: object
    nl: object
    kernel: object
    utilities: object
    dt: float
    horizon: float
    segments: int
    tol: float = 1e-10

    @property
    def args(self):
        return self.params, self.nl, self.kernel, self.utilities

    @property
    def seg_len(self) -> float:
        return self.horizon / self.segments

    def V(self, eta: HState, warm_start: ControlPath | None = None, **kw) -> ValueEstimate:
        opts = dict(dt=self.dt, horizon=self.horizon, segments=self.segments, tol=self.tol)
        opts.update(kw)
        return approximate_V(*self.args, eta, warm_start=warm_start, **opts)

    def evaluator(self, eta: HState, horizon: float | None = None,
                  seg_len: float | None = None) -> _Evaluator:
        prob = ControlProblem(*self.args, self.dt)
        return _Evaluator(prob, eta, horizon or self.horizon, seg_len or self.seg_len)

    def payoff(self, eta: HState, control: ControlPath) -> float:
        """Objective maximised by :meth:`V` (finite-horizon payoff plus lower tail)."""
        return self.evaluator(eta, seg_len=control.dt).run(control.values)[0]


# ---------------------------------------------------------------------------
# Dynamic programming
# ---------------------------------------------------------------------------

def dpp_residual(setup: ValueSetup, eta: HState, s: float, *, base: ValueEstimate | None = None,
                 c_tol: float = 1e-6) -> tuple[float, float]:
    """``|V(eta) - sup_c [int_0^s e^{-rho t} (U1 + U2) dt + e^{-rho s} V(X(s))]|``.

    The control on ``[0, s]`` is a constant found by golden-section search;
    the continuation value comes from :func:`approximate_V` warm-started with
    the base maximiser shifted by ``s``.

    Returns
    -------
    (residual, bracket) : tuple of float
        The DPP gap and the combined width of the value brackets involved.
    """
    if not 0 < s < setup.horizon:
        raise ValueError(f"split time s = {s} must lie in (0, horizon)")
    params = setup.params
    if base is None:
        base = setup.V(eta)
    if not base.in_domain:
        raise ValueError("eta is outside the domain of V")
    rho = params.rho
    shift = int(round(s / base.control.dt))
    tail_vals = np.asarray(base.control.values[shift:])
    warm = None
    if len(tail_vals) == setup.segments:
        warm = ControlPath(base.control.dt, tail_vals)
    elif 0 < len(tail_vals) < setup.segments:
        pad = np.full(setup.segments - len(tail_vals), tail_vals[-1])
        warm = ControlPath(base.control.dt, np.concatenate([tail_vals, pad]))

    cache = {}

    def rhs(c):
        if c in cache:
            return cache[c][0]
        ctrl = ControlPath(s, np.array([c]))
        J = evaluate_J(*setup.args, eta, ctrl, s, setup.dt)
        if not J.admissible:
            cache[c] = (-math.inf, None)
            return -math.inf
        traj = integrate(*setup.args[:3], eta, ctrl, s, setup.dt)
        cont = setup.V(traj.state_at(s), warm_start=warm)
        if not cont.in_domain:
            cache[c] = (-math.inf, None)
            return -math.inf
        val = J.estimate + math.exp(-rho * s) * cont.v_lo
        cache[c] = (val, cont)
        return val

    c0 = float(base.control.values[0])
    c_hi = max(2.0 * c0, 1e-3)
    while rhs(c_hi) > -math.inf and rhs(c_hi) > rhs(0.5 * c_hi) and c_hi < 1e6:
        c_hi *= 2.0
    c_star, best = _golden_max(rhs, 0.0, c_hi, c_tol * max(1.0, c0))
    cont = cache[c_star][1]
    bracket = (base.v_hi - base.v_lo) + math.exp(-rho * s) * (cont.v_hi - cont.v_lo)
    return abs(base.v_lo - best), bracket


# ---------------------------------------------------------------------------
# HJB residual
# ---------------------------------------------------------------------------

def hjb_balance(rho_v: float, pairing: float, drift: float, u2: float, ham: float) -> float:
    """``rho v - <eta, A* grad v> - f(eta) v_eta0 - U2(eta0) - H(v_eta0)``."""
    return rho_v - pairing - drift - u2 - ham


@dataclass(frozen=True)
class HJBTerms:
    rho_v: float
    pairing: float
    drift: float
    u2: float
    ham: float
    v_eta0: float
    stability: float
    projection_distance: float

    @property
    def balance(self) -> float:
        return hjb_balance(self.rho_v, self.pairing, self.drift, self.u2, self.ham)

    @property
    def residual(self) -> float:
        return abs(self.balance) / max(1.0, abs(self.rho_v))


def past_gradient(setup: ValueSetup, eta: HState, control: ControlPath,
                  h: float = 1e-4) -> tuple[np.ndarray, float]:
    """L2 density of the gradient of ``V`` in the past, projected so that it vanishes at ``-T``.

    Each grid value of the past is bumped by ``+-h`` with the maximiser held
    fixed (at an interior maximum the value and the payoff share their
    first variation); the difference quotient is divided by the trapezoid
    weight of the node.  The node at ``xi = 0`` is replaced by quadratic
    extrapolation: its discrete influence is cut short by the present value
    stored at the same time.  Returns the projected density and the size of
    the removed value at ``-T`` relative to ``max |density|``.
    """
    N = eta.N
    w = trapezoid_weights(N + 1, eta.dxi)
    dens = np.empty(N + 1)
    hb = h * max(1.0, float(np.max(np.abs(eta.eta1))))
    for j in range(N + 1):
        b = np.zeros(N + 1)
        b[j] = hb
        up = setup.payoff(HState(eta.eta0, eta.eta1 + b, eta.dxi), control)
        dn = setup.payoff(HState(eta.eta0, eta.eta1 - b, eta.dxi), control)
        dens[j] = (up - dn) / (2.0 * hb * w[j])
    dens[-1] = 3.0 * dens[-2] - 3.0 * dens[-3] + dens[-4]
    xi = eta.grid
    dist = abs(dens[0]) / max(float(np.max(np.abs(dens))), 1e-300)
    dens = dens - dens[0] * (-xi / eta.T)
    return dens, dist


def hjb_residual(setup: ValueSetup, eta: HState, *, h: float | None = None,
                 base: ValueEstimate | None = None) -> HJBTerms:
    """Terms of the HJB equation at ``eta`` from the numerical value function.

    ``v_eta0`` is a central difference of the value; the past gradient comes
    from :func:`past_gradient`.  The residual is relative to ``max(1, |rho V|)``.
    """
    params, nl, kernel, utilities = setup.args
    if base is None:
        base = setup.V(eta)
    if not base.in_domain:
        raise ValueError("eta is outside the domain of V")
    g = partial_V_eta0(*setup.args, eta, h, dt=setup.dt, horizon=setup.horizon,
                       segments=setup.segments, tol=setup.tol, base=base)
    v0 = g.v_eta0
    if not v0 > 0:
        raise ValueError(f"nonpositive derivative estimate {v0} at eta0 = {eta.eta0}")
    dens, dist = past_gradient(setup, eta, base.control)
    grad = LiftedState(v0, dens, eta.dxi)
    pairing = inner(eta, apply_Astar(grad, params.r))
    drift = eval_drift(nl, kernel, eta) * v0
    u2 = float(utilities.u2(eta.eta0))
    ham = hamiltonian(utilities, v0)
    return HJBTerms(params.rho * base.v_lo, pairing, drift, u2, ham, v0, g.stability, dist)


# ---------------------------------------------------------------------------
# Shape probes
# ---------------------------------------------------------------------------

ValueFn = Callable[[HState, "ControlPath | None"], ValueEstimate]


def _default_value_fn(setup: ValueSetup) -> ValueFn:
    return lambda eta, warm=None: setup.V(eta, warm_start=warm)


def _blend_control(lam, a: ControlPath, b: ControlPath) -> ControlPath:
    return ControlPath(a.dt, lam * a.values + (1.0 - lam) * b.values)


def concavity_probe(setup: ValueSetup, pairs, *, value_fn: ValueFn | None = None,
                    name: str = "concavity") -> ProbeReport:
    """``V(lam eta + (1 - lam) etabar) >= lam V(eta) + (1 - lam) V(etabar)`` on given triples.

    The blend is warm-started with the blended maximisers, which are
    admissible for the blended state; the tolerance is the sum of the three
    optimiser gaps.
    """
    vf = value_fn or _default_value_fn(setup)
    rep = ProbeReport(name, 0.0)
    worst_gap = 0.0
    for i, (eta, eta_bar, lam) in enumerate(pairs):
        a = vf(eta, None)
        b = vf(eta_bar, None)
        warm = None
        if a.control is not None and b.control is not None:
            warm = _blend_control(lam, a.control, b.control)
        m = vf(lam * eta + (1.0 - lam) * eta_bar, warm)
        rhs = lam * a.v_lo + (1.0 - lam) * b.v_lo
        gap = a.gap + b.gap + m.gap
        worst_gap = max(worst_gap, gap)
        # report the violation net of the optimiser gap
        rep.add(i, f"lam={lam!r}", m.v_lo, rhs, rhs - m.v_lo - gap)
    rep.note = f"optimiser gaps up to {worst_gap:.2e} absorbed"
    return rep


def monotonicity_probe(setup: ValueSetup, pairs, *, value_fn: ValueFn | None = None,
                       name: str = "monotonicity") -> ProbeReport:
    """``v_lo(eta) <= v_hi(eta + bump)`` for nonnegative bumps."""
    vf = value_fn or _default_value_fn(setup)
    rep = ProbeReport(name, 0.0)
    for i, (eta, bump) in enumerate(pairs):
        if bump.eta0 < 0 or np.min(bump.eta1) < 0:
            raise ValueError("bumps must be nonnegative")
        a = vf(eta, None)
        b = vf(eta + bump, a.control)
        rep.add(i, f"bump0={bump.eta0!r}", a.v_lo, b.v_hi, a.v_lo - b.v_hi)
    return rep


def ceiling_probe(setup: ValueSetup, estimates, slack: float, name: str = "ceiling") -> ProbeReport:
    """``v_hi <= (sup U1 + sup U2) / rho`` up to the optimiser gap plus ``slack``."""
    bound = value_upper_bound(setup.params)
    rep = ProbeReport(name, 0.0)
    for i, est in enumerate(estimates):
        if est.in_domain:
            rep.add(i, "", est.v_hi, bound, est.v_hi - bound - est.gap - slack)
    return rep


def regularity_probe(setup: ValueSetup, sequence, *, cont_tol: float = 5e-2,
                     name: str = "regularity", value_fn=None) -> ProbeReport:
    """Relative gaps between successive ``v_eta0`` estimates along a convergent sequence.

    ``value_fn``, if given, replaces the derivative estimator (for negative
    controls); it maps a state to a number.
    """
    rep = ProbeReport(name, cont_tol)
    prev = None
    for i, eta in enumerate(sequence):
        if value_fn is not None:
            d = float(value_fn(eta))
        else:
            base = setup.V(eta)
            if not base.in_domain:
                raise ValueError(f"sequence point {i} is outside the domain of V")
            d = partial_V_eta0(*setup.args, eta, dt=setup.dt, horizon=setup.horizon,
                               segments=setup.segments, tol=setup.tol, base=base).v_eta0
        if prev is not None:
            gap = abs(d - prev) / max(abs(d), 1e-300)
            rep.add(i, f"eta0={eta.eta0!r}", d, prev, gap)
        prev = d
    return rep

"""Problem data for the delay consumption problem.

The state equation is

    x'(t) = r x(t) + f0(x(t), int_{-T}^0 a(xi) x(t + xi) dxi) - c(t),

with history ``eta = (eta0, eta1)``, the constraint ``x > 0`` and the payoff
``int_0^inf exp(-rho t) [U1(c) + U2(x)] dt``.  This module holds the scalar
data, the delay kernel ``a``, the nonlinearity ``f0`` and the utilities, plus
sampling-based checks of the standing hypotheses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as _integrate

__all__ = [
    "HypothesisError",
    "ModelParams",
    "Kernel",
    "make_kernel",
    "Nonlinearity",
    "eval_f0",
    "eval_drift",
    "Utility",
    "UtilityPair",
    "HypothesisCheck",
    "Report",
    "validate_hypotheses",
    "trapezoid_weights",
]


class HypothesisError(ValueError):
    """Raised when problem data violate a standing hypothesis."""


def trapezoid_weights(n_points: int, h: float) -> np.ndarray:
    """Composite trapezoid weights for ``n_points`` equispaced nodes."""
    w = np.full(n_points, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True)
class ModelParams:
    """Scalar data of the control problem.

    ``u1_sup`` and ``u2_sup`` are the suprema of the configured utilities;
    use :meth:`from_components` to fill them in consistently.
    """

    r: float
    T: float
    rho: float
    c_f0: float
    u1_sup: float = 1.0
    u2_sup: float = 0.0
    test_mode: bool = False

    def __post_init__(self):
        # test mode admits r = 0 for analytic oracles; r < 0 is never supported
        ok = self.r >= 0 if self.test_mode else self.r > 0
        if not ok:
            raise HypothesisError(f"r must be > 0 (got {self.r}); the r <= 0 shift is not supported")
        if not self.T > 0:
            raise HypothesisError(f"T must be > 0 (got {self.T})")
        if not self.rho > 0:
            raise HypothesisError(f"rho must be > 0 (got {self.rho})")
        if self.c_f0 < 0:
            raise HypothesisError(f"c_f0 must be >= 0 (got {self.c_f0})")

    @classmethod
    def from_components(cls, r, T, rho, nl: "Nonlinearity", utilities: "UtilityPair") -> "ModelParams":
        return cls(r=r, T=T, rho=rho, c_f0=nl.lipschitz,
                   u1_sup=utilities.u1.sup, u2_sup=utilities.u2.sup)

    @property
    def value_ceiling(self) -> float:
        return (self.u1_sup + self.u2_sup) / self.rho


# ---------------------------------------------------------------------------
# Kernel a(.)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Kernel:
    """Delay weight ``a`` sampled on the uniform grid ``-T = xi_0 < ... < xi_N = 0``."""

    samples: np.ndarray
    deriv_samples: np.ndarray
    dxi: float
    family: str = "table"
    params: tuple = ()

    @property
    def N(self) -> int:
        return len(self.samples) - 1

    @property
    def T(self) -> float:
        return self.N * self.dxi

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(-self.T, 0.0, self.N + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights times kernel values, so ``Q = weights @ eta1``."""
        return trapezoid_weights(self.N + 1, self.dxi) * self.samples

    def pair(self, eta1: np.ndarray) -> float:
        """Trapezoid quadrature of ``int a(xi) eta1(xi) dxi``."""
        return float(self.weights @ eta1)

    def resample(self, N: int) -> "Kernel":
        """Same family and parameters on a grid with ``N`` cells."""
        if self.family == "table":
            raise ValueError("a tabulated kernel cannot be resampled")
        return make_kernel(self.family, self.params, N, T=self.T, check=False)

    def derivative_residual(self) -> float:
        """Discrete L2 gap between ``deriv_samples`` and cell finite differences.

        Kernels in ``W^{1,2}`` may have kinks; a kink contributes ``O(sqrt(dxi))``
        here, while a wrong derivative contributes ``O(1)``.
        """
        fd = np.diff(self.samples) / self.dxi
        mid = 0.5 * (self.deriv_samples[1:] + self.deriv_samples[:-1])
        return math.sqrt(float(np.sum((fd - mid) ** 2)) * self.dxi) if len(fd) else 0.0


def _hat(xi, T, height, center):
    left = height * (xi + T) / (center + T)
    right = height * (-xi) / (-center) if center < 0 else np.full_like(xi, height)
    val = np.where(xi <= center, left, right)
    d = np.where(xi < center, height / (center + T), -height / (-center) if center < 0 else 0.0)
    d = np.where(np.isclose(xi, center), 0.0, d)
    return val, d


def make_kernel(family: str, params: Sequence[float], N: int, T: float = 1.0,
                check: bool = True) -> Kernel:
    """Build a delay kernel on ``[-T, 0]`` with ``N`` cells.

    Families
    --------
    ``linear_ramp``  params ``(slope,)``: ``a(xi) = slope * (xi + T)``.
    ``hat``          params ``(height[, center])``: piecewise linear, zero at
                     both ends, peak ``height`` at ``center`` (default ``-T/2``).
    ``poly``         params ``(p0, p1, ...)``: ``a(xi) = sum_k p_k (xi + T)**k``.

    With ``check=True`` kernels with ``a(-T) != 0`` or negative values are
    rejected; ``check=False`` lets counterexamples such as ``a = 1`` through.
    """
    if N < 8:
        raise ValueError(f"N must be >= 8 (got {N})")
    if not T > 0:
        raise ValueError("T must be positive")
    params = tuple(float(p) for p in params)
    xi = np.linspace(-T, 0.0, N + 1)
    s = xi + T
    if family == "linear_ramp":
        slope = params[0] if params else 1.0
        a = slope * s
        da = np.full_like(xi, slope)
    elif family == "hat":
        height = params[0] if params else 1.0
        center = params[1] if len(params) > 1 else -T / 2
        if not -T < center <= 0:
            raise HypothesisError("hat center must lie in (-T, 0]")
        a, da = _hat(xi, T, height, center)
    elif family == "poly":
        coeffs = params or (0.0, 1.0)
        a = np.polynomial.polynomial.polyval(s, coeffs)
        da = np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(coeffs))
    else:
        raise ValueError(f"unknown kernel family {family!r}")
    a = np.asarray(a, dtype=float)
    da = np.asarray(da, dtype=float)
    if check:
        if a[0] != 0.0:
            raise HypothesisError(f"kernel violates a(-T) = 0 (a(-T) = {a[0]:g})")
        if np.min(a) < 0:
            j = int(np.argmin(a))
            raise HypothesisError(f"kernel is negative at xi = {xi[j]:g} (a = {a[j]:g})")
    return Kernel(samples=a, deriv_samples=da, dxi=T / N, family=family, params=params)


# ---------------------------------------------------------------------------
# Nonlinearity f0
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """The drift nonlinearity ``f0(x, y)``.

    ``affine_saturating`` with params ``(a1, a2, K, b)`` is
    ``a1 * min(x, K) + a2 * min(y, K) + b``; ``custom`` wraps a vectorised
    callable together with its Lipschitz constant.  ``test_mode`` marks
    instances that deliberately violate the hypotheses (e.g. ``f0 = 0``).
    """

    kind: str
    params: tuple = ()
    func: Callable | None = field(default=None, repr=False)
    lipschitz_const: float | None = None
    test_mode: bool = False

    @classmethod
    def affine_saturating(cls, a1=0.1, a2=0.5, K=10.0, b=0.05, test_mode=False) -> "Nonlinearity":
        return cls("affine_saturating", (float(a1), float(a2), float(K), float(b)), test_mode=test_mode)

    @classmethod
    def zero(cls) -> "Nonlinearity":
        return cls.affine_saturating(0.0, 0.0, math.inf, 0.0, test_mode=True)

    @classmethod
    def custom(cls, func, lipschitz: float, test_mode=False) -> "Nonlinearity":
        return cls("custom", (), func=func, lipschitz_const=float(lipschitz), test_mode=test_mode)

    @property
    def lipschitz(self) -> float:
        if self.kind == "affine_saturating":
            a1, a2, _, _ = self.params
            return max(abs(a1), abs(a2))
        return float(self.lipschitz_const)

    def __call__(self, x, y):
        x = np.maximum(x, 0.0)  # f0(x, y) := f0(0, y) for x < 0
        if self.kind == "affine_saturating":
            a1, a2, K, b = self.params
            return a1 * np.minimum(x, K) + a2 * np.minimum(y, K) + b
        if self.kind == "custom":
            return self.func(x, y)
        raise ValueError(f"unknown nonlinearity kind {self.kind!r}")


def eval_f0(nl: Nonlinearity, x, y):
    """``f0(x, y)`` with the constant extension to ``x < 0``."""
    out = nl(x, y)
    return float(out) if np.ndim(out) == 0 else out


def eval_drift(nl: Nonlinearity, kernel: Kernel, eta) -> float:
    """``f0(eta0, int a eta1)`` with the delay integral by trapezoid quadrature.

    ``eta`` is any object with ``eta0``, ``eta1`` and ``dxi`` attributes.
    """
    eta1 = np.asarray(eta.eta1)
    if len(eta1) != kernel.N + 1 or abs(eta.dxi - kernel.dxi) > 1e-12 * max(1.0, kernel.dxi):
        raise ValueError(
            f"state grid (N={len(eta1) - 1}, dxi={eta.dxi}) does not match kernel grid "
            f"(N={kernel.N}, dxi={kernel.dxi})")
    return float(nl(eta.eta0, kernel.pair(eta1)))


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------

_U1_KINDS = ("saturating_power", "exponential")
_U2_KINDS = ("zero", "log", "inverse_power", "exp_saturating")


@dataclass(frozen=True)
class Utility:
    """A one-dimensional utility with closed-form first and second derivatives.

    Consumption utilities (``U1``):
      * ``saturating_power`` ``(gamma,)``: ``(c / (1 + c))**gamma``
      * ``exponential`` ``(beta,)``: ``1 - exp(-beta c)`` (finite slope at 0,
        kept as a hypothesis-violating example)

    State utilities (``U2``):
      * ``zero``
      * ``log``: ``log x`` (unbounded above)
      * ``inverse_power`` ``(beta, p)``: ``-beta * x**(-p)``
      * ``exp_saturating`` ``(beta,)``: ``beta * (1 - exp(-x))``
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _U1_KINDS + _U2_KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def _p(self, i, default):
        return self.params[i] if len(self.params) > i else default

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        with np.errstate(divide="ignore", invalid="ignore"):
            if k == "saturating_power":
                g = self._p(0, 0.5)
                out = (np.maximum(x, 0.0) / (1.0 + np.maximum(x, 0.0))) ** g
            elif k == "exponential":
                out = 1.0 - np.exp(-self._p(0, 1.0) * x)
            elif k == "zero":
                out = np.zeros_like(x)
            elif k == "log":
                out = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)
            elif k == "inverse_power":
                beta, p = self._p(0, 0.1), self._p(1, 1.0)
                out = np.where(x > 0, -beta * np.where(x > 0, x, 1.0) ** (-p), -np.inf)
            else:  # exp_saturating
                out = self._p(0, 1.0) * (1.0 - np.exp(-x))
        return float(out) if out.ndim == 0 else out

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if k == "saturating_power":
                g = self._p(0, 0.5)
                out = g * x ** (g - 1.0) * (1.0 + x) ** (-g - 1.0)
            elif k == "exponential":
                b = self._p(0, 1.0)
                out = b * np.exp(-b * x)
            elif k == "zero":
                out = np.zeros_like(x)
            elif k == "log":
                out = 1.0 / x
            elif k == "inverse_power":
                beta, p = self._p(0, 0.1), self._p(1, 1.0)
                out = beta * p * x ** (-p - 1.0)
            else:
                out = self._p(0, 1.0) * np.exp(-x)
        return float(out) if out.ndim == 0 else out

    def deriv2(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if k == "saturating_power":
                g = self._p(0, 0.5)
                out = g * x ** (g - 2.0) * (1.0 + x) ** (-g - 2.0) * ((g - 1.0) - 2.0 * x)
            elif k == "exponential":
                b = self._p(0, 1.0)
                out = -b * b * np.exp(-b * x)
            elif k == "zero":
                out = np.zeros_like(x)
            elif k == "log":
                out = -1.0 / x ** 2
            elif k == "inverse_power":
                beta, p = self._p(0, 0.1), self._p(1, 1.0)
                out = -beta * p * (p + 1.0) * x ** (-p - 2.0)
            else:
                out = -self._p(0, 1.0) * np.exp(-x)
        return float(out) if out.ndim == 0 else out

    @property
    def sup(self) -> float:
        k = self.kind
        if k in ("saturating_power",):
            return 1.0
        if k == "exponential":
            return 1.0
        if k in ("zero", "inverse_power"):
            return 0.0
        if k == "log":
            return math.inf
        return self._p(0, 1.0)

    def inverse_deriv(self, slope: float, rtol: float = 1e-13) -> float:
        """The unique ``c > 0`` with ``U'(c) = slope`` (bisection in log scale).

        Requires ``U'`` strictly decreasing from ``+inf`` towards 0.
        """
        if not slope > 0:
            raise ValueError("slope must be positive")
        lo, hi = 1e-300, 1.0
        while self.deriv(hi) > slope:
            lo, hi = hi, hi * 2.0
            if hi > 1e300:
                raise ArithmeticError("no root of U'(c) = slope below 1e300")
        while self.deriv(lo) < slope:
            lo *= 1e-3
            if lo < 1e-300:
                return 0.0
        # geometric bisection handles the wide dynamic range near c = 0
        for _ in range(400):
            mid = math.sqrt(lo * hi) if lo > 0 and hi / lo > 4.0 else 0.5 * (lo + hi)
            if self.deriv(mid) > slope:
                lo = mid
            else:
                hi = mid
            if hi - lo <= rtol * hi:
                break
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class UtilityPair:
    u1: Utility = field(default_factory=lambda: Utility("saturating_power", (0.5,)))
    u2: Utility = field(default_factory=lambda: Utility("zero"))


# ---------------------------------------------------------------------------
# Hypothesis validation
# ---------------------------------------------------------------------------

@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    detail: str = ""
    witness: tuple | None = None


@dataclass
class Report:
    checks: list[HypothesisCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[HypothesisCheck]:
        return [c for c in self.checks if not c.passed]

    def get(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def add(self, name, passed, detail="", witness=None):
        self.checks.append(HypothesisCheck(name, bool(passed), detail, witness))

    def summary(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.detail}" for c in self.checks]
        return "\n".join(lines)


def _worst(values, pairs):
    i = int(np.argmax(values))
    return float(values[i]), tuple(float(v) for v in pairs[i])


def validate_hypotheses(params: ModelParams, nl: Nonlinearity, kernel: Kernel,
                        utilities: UtilityPair, *, n_samples: int = 1000, seed: int = 0,
                        box: float = 20.0, tol: float = 1e-9) -> Report:
    """Sample-based check of the standing hypotheses on ``a``, ``f0``, ``U1``, ``U2``.

    Every failure is recorded with a witnessing sample; nothing is raised.
    """
    rng = np.random.default_rng(seed)
    rep = Report()

    rep.add("model.r_positive", params.r > 0, f"r = {params.r}")
    rep.add("model.T_positive", params.T > 0, f"T = {params.T}")
    rep.add("model.rho_positive", params.rho > 0, f"rho = {params.rho}")

    # kernel
    rep.add("kernel.grid_matches_T", abs(kernel.T - params.T) <= 1e-12 * max(1.0, params.T),
            f"N * dxi = {kernel.T}, T = {params.T}")
    a0 = float(kernel.samples[0])
    rep.add("kernel.vanishes_at_minus_T", a0 == 0.0, f"a(-T) = {a0:g}",
            None if a0 == 0.0 else (-kernel.T, a0))
    amin = float(np.min(kernel.samples))
    j = int(np.argmin(kernel.samples))
    rep.add("kernel.nonnegative", amin >= 0.0, f"min a = {amin:g}",
            None if amin >= 0 else (float(kernel.grid[j]), amin))
    resid = kernel.derivative_residual()
    dtol = math.sqrt(kernel.dxi) * max(1.0, float(np.max(np.abs(kernel.deriv_samples))))
    rep.add("kernel.derivative_consistent", resid <= dtol, f"residual {resid:.3g} <= {dtol:.3g}")
    h1 = math.sqrt(float(trapezoid_weights(kernel.N + 1, kernel.dxi) @ kernel.deriv_samples ** 2))
    rep.add("kernel.W12", math.isfinite(h1), f"||a'||_L2 = {h1:.4g}")

    # f0 (skipped as hypothesis-exempt in test mode, but still evaluated)
    x1 = rng.uniform(0.0, box, n_samples)
    x2 = rng.uniform(0.0, box, n_samples)
    y1 = rng.uniform(-box, box, n_samples)
    y2 = rng.uniform(-box, box, n_samples)
    lam = rng.uniform(0.0, 1.0, n_samples)
    fm = nl(lam * x1 + (1 - lam) * x2, lam * y1 + (1 - lam) * y2)
    fb = lam * nl(x1, y1) + (1 - lam) * nl(x2, y2)
    viol = np.broadcast_to(fb - fm, (n_samples,))
    scale = np.maximum(1.0, np.abs(fb))
    v, w = _worst(viol / scale, np.column_stack([x1, y1, x2, y2, lam]))
    rep.add("f0.jointly_concave", v <= tol, f"max midpoint violation {max(v, 0):.3g}",
            None if v <= tol else w)

    dy = rng.uniform(0.0, box, n_samples)
    inc = np.broadcast_to(nl(x1, y1) - nl(x1, y1 + dy), (n_samples,))
    v, w = _worst(inc, np.column_stack([x1, y1, dy]))
    rep.add("f0.nondecreasing_in_y", v <= tol, f"max decrease {max(v, 0):.3g}", None if v <= tol else w)

    num = np.abs(np.broadcast_to(nl(x1, y1) - nl(x2, y2), (n_samples,)))
    den = np.abs(x1 - x2) + np.abs(y1 - y2)
    ratio = num - nl.lipschitz * den
    v, w = _worst(ratio, np.column_stack([x1, y1, x2, y2]))
    rep.add("f0.lipschitz", v <= tol * np.max(scale), f"C_f0 = {nl.lipschitz:g}, excess {max(v, 0):.3g}",
            None if v <= tol * np.max(scale) else w)
    rep.add("model.c_f0_matches", params.c_f0 + 1e-12 >= nl.lipschitz,
            f"params.c_f0 = {params.c_f0:g}, f0 Lipschitz = {nl.lipschitz:g}")

    ypos = np.concatenate([np.geomspace(1e-8, box, 64), rng.uniform(0.0, box, 64)])
    ypos = ypos[ypos > 0]
    f0y = np.broadcast_to(nl(0.0, ypos), ypos.shape)
    i = int(np.argmin(f0y))
    rep.add("f0.positive_at_zero_x", f0y[i] > 0, f"min f0(0, y>0) = {f0y[i]:.3g}",
            None if f0y[i] > 0 else (0.0, float(ypos[i])))

    # U1
    u1 = utilities.u1
    c = np.concatenate([np.geomspace(1e-8, 1e4, 200)])
    d1 = np.asarray(u1.deriv(c))
    d2 = np.asarray(u1.deriv2(c))
    rep.add("u1.increasing", bool(np.all(d1 > 0)), f"min U1' = {d1.min():.3g}")
    rep.add("u1.strictly_concave", bool(np.all(d2 < 0)), f"max U1'' = {d2.max():.3g}")
    slopes = np.asarray(u1.deriv(np.array([1e-4, 1e-8, 1e-12])))
    inada = bool(slopes[2] > 1e4 and slopes[2] > 10 * slopes[0])
    rep.add("u1.infinite_slope_at_zero", inada, f"U1'(1e-12) = {slopes[2]:.3g}")
    vals = np.asarray(u1(np.concatenate([[0.0], c])))
    bounded = math.isfinite(u1.sup) and bool(np.all(vals <= u1.sup + 1e-12))
    rep.add("u1.bounded", bounded and math.isfinite(float(u1(0.0))), f"sup U1 = {u1.sup:g}")
    rep.add("model.u1_sup_matches", abs(params.u1_sup - u1.sup) <= 1e-12 or params.u1_sup == u1.sup,
            f"params.u1_sup = {params.u1_sup:g}")

    # U2
    u2 = utilities.u2
    if u2.is_zero:
        rep.add("u2.increasing_concave", True, "U2 = 0")
        rep.add("u2.bounded_above", True, "U2 = 0")
        rep.add("u2.integrability", True, "U2 = 0")
    else:
        xs = np.geomspace(1e-6, 1e4, 200)
        d1 = np.asarray(u2.deriv(xs))
        d2 = np.asarray(u2.deriv2(xs))
        ok = bool(np.all(d1 > 0) and np.all(d2 <= 0))
        rep.add("u2.increasing_concave", ok, f"min U2' = {d1.min():.3g}, max U2'' = {d2.max():.3g}")
        rep.add("u2.bounded_above", math.isfinite(u2.sup), f"sup U2 = {u2.sup:g}")
        val = u2_integrability(u2, params.rho, params.c_f0)
        rep.add("u2.integrability", math.isfinite(val), f"int e^(-rho t) U2(e^(-C t)) dt = {val:.4g}")
    rep.add("model.u2_sup_matches", params.u2_sup == u2.sup or abs(params.u2_sup - u2.sup) <= 1e-12,
            f"params.u2_sup = {params.u2_sup:g}")
    return rep


def u2_integrability(u2: Utility, rho: float, c_f0: float, xi: float = 1.0) -> float:
    """``int_0^inf exp(-rho t) U2(xi exp(-C t)) dt``, or ``-inf`` if it diverges."""
    if u2.is_zero:
        return 0.0
    if u2.kind == "inverse_power":
        beta, p = u2._p(0, 0.1), u2._p(1, 1.0)
        if rho <= p * c_f0:
            return -math.inf
        return -beta * xi ** (-p) / (rho - p * c_f0)
    if u2.kind == "log":
        return math.log(xi) / rho - c_f0 / rho ** 2

    def integrand(t):
        return math.exp(-rho * t) * float(u2(xi * math.exp(-c_f0 * t)))

    # divergence shows up as a growing partial integral
    parts = []
    for L in (20.0 / rho, 40.0 / rho, 80.0 / rho):
        with np.errstate(over="ignore"):
            try:
                val, _ = _integrate.quad(integrand, 0.0, L, limit=400)
            except (OverflowError, ZeroDivisionError):
                return -math.inf
        parts.append(val)
    if not all(math.isfinite(p) for p in parts):
        return -math.inf
    if abs(parts[2] - parts[1]) > 1e-6 * max(1.0, abs(parts[1])) + 1e-8:
        return -math.inf
    return parts[2]

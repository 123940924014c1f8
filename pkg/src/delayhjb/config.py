"""Scenario configuration: model data, numerics and probe tolerances.

Scenarios are read from INI files::

    [model]
    r = 0.05
    T = 1.0
    rho = 0.5

    [kernel]
    family = linear_ramp
    params = 1.0
    N = 200

    [f0]
    kind = affine_saturating
    params = 0.1, 0.5, 10.0, 0.05

    [utility]
    u1 = saturating_power
    u1_params = 0.5
    u2 = zero
    u2_params =

    [numerics]
    dt = 0.001
    value_N = 20
    value_dt = 0.025
    horizon =
    segments = 20
    tol = 1e-10

    [tolerances]
    hjb_tol = 0.1

    [run]
    seed = 0

Every key is optional; missing keys take the defaults of
:func:`default_scenario`.  Two built-in scenarios can be named instead of a
path: ``default`` and ``calibration``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace

from .dde import fine_factor
from .hjb import ProbeTolerances, ValueSetup
from .model import (HypothesisError, Kernel, ModelParams, Nonlinearity, Report, Utility,
                    UtilityPair, make_kernel, validate_hypotheses)
from .value import default_horizon

__all__ = ["ConfigError", "Numerics", "ScenarioConfig", "default_scenario",
           "calibration_scenario", "load_config"]


class ConfigError(ValueError):
    """Invalid scenario file; the message names the offending section and key."""


@dataclass(frozen=True)
class Numerics:
    """Discretisation settings.

    ``N`` and ``dt`` drive trajectory and operator checks; the value layer
    (optimisation over controls) runs on the coarser ``value_N``/``value_dt``
    grid so that probe suites stay within minutes.
    """

    N: int = 200
    dt: float = 1e-3
    value_N: int = 20
    value_dt: float = 0.025
    horizon: float | None = None
    segments: int = 20
    tol: float = 1e-10


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    r: float
    T: float
    rho: float
    kernel_family: str
    kernel_params: tuple
    f0_kind: str
    f0_params: tuple
    u1: Utility
    u2: Utility
    numerics: Numerics = field(default_factory=Numerics)
    tolerances: ProbeTolerances = field(default_factory=ProbeTolerances)
    seed: int = 0

    # model objects ------------------------------------------------------

    @property
    def utilities(self) -> UtilityPair:
        return UtilityPair(self.u1, self.u2)

    @property
    def nl(self) -> Nonlinearity:
        if self.f0_kind != "affine_saturating":
            raise ConfigError(f"[f0] kind: unsupported nonlinearity {self.f0_kind!r}")
        return Nonlinearity.affine_saturating(*self.f0_params)

    def kernel(self, N: int | None = None, check: bool = False) -> Kernel:
        return make_kernel(self.kernel_family, self.kernel_params, N or self.numerics.N, self.T,
                           check=check)

    @property
    def params(self) -> ModelParams:
        return ModelParams.from_components(self.r, self.T, self.rho, self.nl, self.utilities)

    @property
    def horizon(self) -> float:
        return self.numerics.horizon or default_horizon(self.params)

    def value_setup(self) -> ValueSetup:
        n = self.numerics
        return ValueSetup(self.params, self.nl, self.kernel(n.value_N), self.utilities,
                          n.value_dt, self.horizon, n.segments, n.tol)

    def hypotheses(self) -> Report:
        return validate_hypotheses(self.params, self.nl, self.kernel(), self.utilities,
                                   seed=self.seed)

    def refined(self, factor: int) -> "ScenarioConfig":
        """Value-layer numerics refined ``factor`` times.

        Grid spacing, time step and segment length shrink by ``factor``; the
        horizon grows by ``log(factor) / rho`` (so the discarded tail shrinks
        by ``factor``), rounded up to whole segments.
        """
        n = self.numerics
        seg_len = self.horizon / n.segments / factor
        H = self.horizon + math.log(factor) / self.rho
        segs = int(math.ceil(H / seg_len - 1e-9))
        return replace(self, numerics=replace(
            n, value_N=n.value_N * factor, value_dt=n.value_dt / factor,
            horizon=segs * seg_len, segments=segs, tol=n.tol / factor))

    def validate(self):
        """Raise :class:`ConfigError` on inconsistent numerics or failed hypotheses."""
        n = self.numerics
        try:
            self.params
            fine_factor(self.T / n.N, n.dt)
            fine_factor(self.T / n.value_N, n.value_dt)
            steps = (self.horizon / n.segments) / n.value_dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ConfigError(
                    f"[numerics] value_dt = {n.value_dt} must divide the segment length "
                    f"{self.horizon / n.segments}")
        except HypothesisError as exc:
            raise ConfigError(f"[model] {exc}") from exc
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[numerics] {exc}") from exc
        rep = self.hypotheses()
        if not rep.passed:
            bad = "; ".join(f"{c.name}: {c.detail}" for c in rep.failures())
            raise ConfigError(f"hypothesis check failed: {bad}")


def default_scenario() -> ScenarioConfig:
    """Default model: saturating affine drift, ramp kernel, ``U1 = (c/(1+c))^0.5``, ``U2 = 0``."""
    return ScenarioConfig(
        name="default", r=0.05, T=1.0, rho=0.5,
        kernel_family="linear_ramp", kernel_params=(1.0,),
        f0_kind="affine_saturating", f0_params=(0.1, 0.5, 10.0, 0.05),
        u1=Utility("saturating_power", (0.5,)), u2=Utility("zero"))


def calibration_scenario() -> ScenarioConfig:
    """Scenario used for the DPP, HJB and regularity probes.

    The state utility ``-0.1 / x`` keeps optimal wealth away from zero, so
    the positivity constraint is slack and value derivatives are clean.
    """
    return replace(default_scenario(), name="calibration",
                   f0_params=(0.05, 0.2, 10.0, 0.05),
                   u2=Utility("inverse_power", (0.1, 1.0)),
                   numerics=Numerics(horizon=10.0))


_BUILTIN = {"default": default_scenario, "calibration": calibration_scenario}


def _floats(text: str, where: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"{where}: expected comma-separated numbers, got {text!r}") from None


def _float(sec, key, default, where):
    if key not in sec or not sec[key].strip():
        return default
    try:
        return float(sec[key])
    except ValueError:
        raise ConfigError(f"{where} {key}: expected a number, got {sec[key]!r}") from None


def _int(sec, key, default, where):
    if key not in sec or not sec[key].strip():
        return default
    try:
        return int(sec[key])
    except ValueError:
        raise ConfigError(f"{where} {key}: expected an integer, got {sec[key]!r}") from None


def load_config(source: str | None) -> ScenarioConfig:
    """Read a scenario from an INI file path or a built-in name."""
    if source is None:
        return default_scenario()
    if source in _BUILTIN:
        return _BUILTIN[source]()
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys such as T and N are case-sensitive
    try:
        with open(source) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {source!r}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    known = {"model", "kernel", "f0", "utility", "numerics", "tolerances", "run"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"{source}: unknown section [{s}]")
    base = default_scenario()
    get = lambda s: cp[s] if cp.has_section(s) else {}

    m = get("model")
    r = _float(m, "r", base.r, "[model]")
    T = _float(m, "T", base.T, "[model]")
    rho = _float(m, "rho", base.rho, "[model]")
    if not r > 0:
        raise ConfigError(f"[model] r: must be > 0 (got {r}); r <= 0 is not supported")

    k = get("kernel")
    family = k.get("family", base.kernel_family).strip()
    kparams = _floats(k["params"], "[kernel] params") if "params" in k else base.kernel_params

    f = get("f0")
    f0_kind = f.get("kind", base.f0_kind).strip()
    if f0_kind != "affine_saturating":
        raise ConfigError(f"[f0] kind: unsupported nonlinearity {f0_kind!r}")
    f0_params = _floats(f["params"], "[f0] params") if "params" in f else base.f0_params
    if len(f0_params) != 4:
        raise ConfigError("[f0] params: expected a1, a2, K, b")

    u = get("utility")
    try:
        u1 = Utility(u.get("u1", base.u1.kind).strip(),
                     _floats(u.get("u1_params", "0.5"), "[utility] u1_params"))
        u2 = Utility(u.get("u2", base.u2.kind).strip(),
                     _floats(u.get("u2_params", ""), "[utility] u2_params"))
    except ValueError as exc:
        raise ConfigError(f"[utility] {exc}") from exc

    n = get("numerics")
    dn = Numerics()
    horizon = _float(n, "horizon", None, "[numerics]")
    numerics = Numerics(
        N=_int(k, "N", _int(n, "N", dn.N, "[numerics]"), "[kernel]"),
        dt=_float(n, "dt", dn.dt, "[numerics]"),
        value_N=_int(n, "value_N", dn.value_N, "[numerics]"),
        value_dt=_float(n, "value_dt", dn.value_dt, "[numerics]"),
        horizon=horizon,
        segments=_int(n, "segments", dn.segments, "[numerics]"),
        tol=_float(n, "tol", dn.tol, "[numerics]"))

    t = get("tolerances")
    tol_kw = {}
    for fl in fields(ProbeTolerances):
        if fl.name in t:
            tol_kw[fl.name] = _float(t, fl.name, fl.default, "[tolerances]")
    for key in t:
        if key not in {fl.name for fl in fields(ProbeTolerances)}:
            raise ConfigError(f"[tolerances] unknown key {key!r}")

    seed = _int(get("run"), "seed", 0, "[run]")
    return ScenarioConfig(name=source, r=r, T=T, rho=rho, kernel_family=family,
                          kernel_params=kparams, f0_kind=f0_kind, f0_params=f0_params,
                          u1=u1, u2=u2, numerics=numerics,
                          tolerances=ProbeTolerances(**tol_kw), seed=seed)

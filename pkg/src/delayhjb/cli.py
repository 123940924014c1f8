"""Command-line entry point: ``delayhjb {simulate,value,feedback,verify,hypotheses}``.

Initial histories are given with ``--eta``:

``const:v``
    constant past ``v``
``ramp:v0:v1``
    linear past from ``v0`` at ``-T`` to ``v1`` at ``0``
``bump:center:width:mass``
    triangular bump of the given mass, zero elsewhere
``file:path``
    two-column CSV ``xi,value`` (header optional), interpolated onto the grid

The present ``eta0`` defaults to the value of the past at ``0``; append
``@v`` to set it (``bump:-0.5:0.4:1@0.3``).  Controls are ``zero``,
``constant:k`` or ``piecewise:len:v1,v2,...``.

Trajectory-level numerics come from ``--dt`` and ``--dxi``; the value layer
uses ``--value-dt``, ``--value-dxi``, ``--horizon`` and ``--segments``.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import lift
from .config import ConfigError, ScenarioConfig, load_config
from .dde import ControlPath, HState, check_admissible, integrate, write_trajectory_csv
from .hjb import ProbeReport, write_probe_csv
from .lift import OperatorCheck, write_operator_csv
from .suites import SUITES, run_suite
from .value import (feedback_c, format_float, hamiltonian, partial_V_eta0, write_value_csv)

__all__ = ["main", "parse_eta", "parse_control", "build_parser"]


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Mini-languages
# ---------------------------------------------------------------------------

def _nums(parts, n, spec):
    if len(parts) != n:
        raise UsageError(f"{spec!r}: expected {n} numbers")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"{spec!r}: expected numbers") from None


def _read_profile(path):
    xs, ys = [], []
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    xs.append(float(row[0]))
                    ys.append(float(row[1]))
                except (ValueError, IndexError):
                    if xs:
                        raise UsageError(f"{path}: malformed row {row!r}") from None
    except OSError as exc:
        raise UsageError(f"cannot read history file {path!r}: {exc}") from exc
    if len(xs) < 2:
        raise UsageError(f"{path}: need at least two rows")
    order = np.argsort(xs)
    return np.asarray(xs)[order], np.asarray(ys)[order]


def parse_eta(spec: str, N: int, T: float) -> HState:
    """Build a state on the ``N``-cell grid of ``[-T, 0]`` from a spec string."""
    body, _, present = spec.partition("@")
    kind, _, rest = body.partition(":")
    parts = rest.split(":") if rest else []
    xi = np.linspace(-T, 0.0, N + 1)
    if kind == "const":
        (v,) = _nums(parts, 1, spec)
        past = np.full(N + 1, v)
    elif kind == "ramp":
        v0, v1 = _nums(parts, 2, spec)
        past = v0 + (v1 - v0) * (xi + T) / T
    elif kind == "bump":
        center, width, mass = _nums(parts, 3, spec)
        if not width > 0:
            raise UsageError(f"{spec!r}: width must be positive")
        past = np.maximum(0.0, 1.0 - np.abs(xi - center) / (0.5 * width)) * (2.0 * mass / width)
    elif kind == "file":
        if not rest:
            raise UsageError(f"{spec!r}: missing path")
        fx, fy = _read_profile(rest)
        past = np.interp(xi, fx, fy)
    else:
        raise UsageError(f"unknown history spec {spec!r}")
    eta0 = float(past[-1])
    if present:
        (eta0,) = _nums([present], 1, spec)
    return HState(eta0, past, T / N)


def eta_tag(spec: str) -> str:
    return spec.partition("@")[0]


def parse_control(spec: str, horizon: float) -> ControlPath:
    kind, _, rest = spec.partition(":")
    if kind == "zero":
        return ControlPath.zero(horizon)
    if kind == "constant":
        (k,) = _nums([rest], 1, spec)
        return ControlPath.constant(k, horizon)
    if kind == "piecewise":
        length, _, vals = rest.partition(":")
        (seg,) = _nums([length], 1, spec)
        values = _nums(vals.split(","), len(vals.split(",")), spec)
        return ControlPath(seg, np.asarray(values))
    raise UsageError(f"unknown control spec {spec!r}")


# ---------------------------------------------------------------------------
# Scenario assembly
# ---------------------------------------------------------------------------

def _scenario(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    n = cfg.numerics
    upd = {}
    if getattr(args, "dt", None) is not None:
        upd["dt"] = args.dt
    if getattr(args, "dxi", None) is not None:
        upd["N"] = _cells(cfg.T, args.dxi, "--dxi")
    if getattr(args, "value_dt", None) is not None:
        upd["value_dt"] = args.value_dt
    if getattr(args, "value_dxi", None) is not None:
        upd["value_N"] = _cells(cfg.T, args.value_dxi, "--value-dxi")
    if getattr(args, "horizon", None) is not None:
        upd["horizon"] = args.horizon
    if getattr(args, "segments", None) is not None:
        upd["segments"] = args.segments
    cfg = replace(cfg, numerics=replace(n, **upd))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _cells(T, dxi, flag):
    N = int(round(T / dxi))
    if N < 8 or abs(N * dxi - T) > 1e-9 * T:
        raise UsageError(f"{flag} = {dxi} must divide T = {T} into at least 8 cells")
    return N


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _scenario(args)
    cfg.validate()
    N, dt = cfg.numerics.N, cfg.numerics.dt
    horizon = args.horizon if args.horizon is not None else 3.0 * cfg.T
    eta = parse_eta(args.eta[0], N, cfg.T)
    control = parse_control(args.control, horizon)
    params, nl, kernel = cfg.params, cfg.nl, cfg.kernel()
    traj = integrate(params, nl, kernel, eta, control, horizon, dt)
    verdict = check_admissible(params, nl, kernel, eta, control, horizon, dt)
    write_trajectory_csv(_out(args, "trajectory.csv"), traj)
    with open(_out(args, "verdict.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["admissible_until", "certified_forever", "violated", "min_x"])
        w.writerow([format_float(verdict.admissible_until), int(verdict.certified_forever),
                    int(verdict.violated), format_float(verdict.min_x)])
    print(f"admissible_until={format_float(verdict.admissible_until)} "
          f"violated={int(verdict.violated)} min_x={format_float(verdict.min_x)}")
    if args.lifted:
        mild = lift.integrate_mild(params, nl, kernel, eta, control, horizon, dt)
        gap = lift.equivalence_gap(mild, traj)
        fwd = traj.forward_x
        with open(_out(args, "lifted.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "present", "x", "discrepancy"])
            for t, p, x, g in zip(mild.times, mild.present, fwd, gap):
                w.writerow([format_float(t), format_float(p), format_float(x), format_float(g)])
        print(f"max_discrepancy={format_float(float(np.max(gap)))}")
    return 0


def _value_rows(args, cfg):
    setup = cfg.value_setup()
    Nv = cfg.numerics.value_N
    eta0s = [float(v) for v in args.eta0.split(",")] if args.eta0 else [None]
    rows = []
    for spec in args.eta:
        base = parse_eta(spec, Nv, cfg.T)
        warm = None
        for e0 in eta0s:
            eta = base if e0 is None else base.with_eta0(e0)
            est = setup.V(eta, warm_start=warm) if eta.eta0 > 0 else None
            if est is None or not est.in_domain:
                rows.append((eta.eta0, eta_tag(spec), -math.inf, -math.inf, math.nan, math.nan,
                             math.nan))
                continue
            warm = est.control
            g = partial_V_eta0(*setup.args, eta, dt=setup.dt, horizon=setup.horizon,
                               segments=setup.segments, tol=setup.tol, base=est)
            c = feedback_c(cfg.utilities, g.v_eta0)
            ham = hamiltonian(cfg.utilities, g.v_eta0)
            rows.append((eta.eta0, eta_tag(spec), est.v_lo, est.v_hi, g.v_eta0, c, ham))
    return rows


def cmd_value(args) -> int:
    cfg = _scenario(args)
    cfg.validate()
    rows = _value_rows(args, cfg)
    write_value_csv(_out(args, "value.csv"), [r[:6] for r in rows])
    for r in rows:
        print(f"eta0={format_float(r[0])} {r[1]} v_lo={format_float(r[2])} "
              f"v_hi={format_float(r[3])}")
    return 0


def cmd_feedback(args) -> int:
    cfg = _scenario(args)
    cfg.validate()
    rows = _value_rows(args, cfg)
    with open(_out(args, "feedback.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta0", "eta1_tag", "v_eta0", "feedback_c", "hamiltonian"])
        for e0, tag, _, _, d, c, ham in rows:
            w.writerow([format_float(e0), tag, format_float(d), format_float(c),
                        format_float(ham)])
    for e0, tag, _, _, d, c, _ in rows:
        print(f"eta0={format_float(e0)} {tag} v_eta0={format_float(d)} c={format_float(c)}")
    return 0


def cmd_hypotheses(args) -> int:
    cfg = _scenario(args)
    rep = cfg.hypotheses()
    with open(_out(args, "hypotheses.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "pass", "detail"])
        for c in rep.checks:
            w.writerow([c.name, int(c.passed), c.detail])
    print(rep.summary())
    return 0 if rep.passed else 1


def _hypothesis_probe(cfg) -> ProbeReport:
    rep = ProbeReport("hypotheses", 0.0)
    checks = cfg.hypotheses().checks
    for i, c in enumerate(checks):
        rep.add(i, c.name, float(c.passed), 1.0, 0.0 if c.passed else 1.0)
    bad = [c.name for c in checks if not c.passed]
    if bad:
        rep.note = "failed: " + ", ".join(bad)
    return rep


def cmd_verify(args) -> int:
    cfg = _scenario(args)
    suites = SUITES if args.suite == "all" else (args.suite,)
    failed = False
    lines = []
    hyp = _hypothesis_probe(cfg)
    lines.append(hyp.summary())
    failed |= not hyp.passed
    write_probe_csv(_out(args, "probes_hypotheses.csv"), [hyp])
    for name in suites:
        reports = run_suite(cfg, name)
        write_probe_csv(_out(args, f"probes_{name}.csv"), reports)
        if name == "operators":
            checks = [OperatorCheck(r.probe_name, sid, lhs, rhs, viol, r.tolerance)
                      for r in reports for sid, _, lhs, rhs, viol in r.witnesses]
            write_operator_csv(_out(args, "operators.csv"), checks)
        for r in reports:
            lines.append(r.summary())
            failed |= not (r.passed or r.diagnostic)
    lines.append("FAIL" if failed else "PASS")
    with open(_out(args, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delayhjb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None,
                        help="INI scenario file, or 'default' / 'calibration'")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--dt", type=float, default=None, help="trajectory time step")
        sp.add_argument("--dxi", type=float, default=None, help="trajectory delay-grid spacing")
        sp.add_argument("--horizon", type=float, default=None)
        sp.add_argument("--segments", type=int, default=None)
        sp.add_argument("--value-dt", dest="value_dt", type=float, default=None)
        sp.add_argument("--value-dxi", dest="value_dxi", type=float, default=None)

    sp = sub.add_parser("simulate", help="integrate the delay equation")
    common(sp)
    sp.add_argument("--eta", action="append", default=None, help="initial history spec")
    sp.add_argument("--control", default="zero")
    sp.add_argument("--lifted", action="store_true", help="also integrate the lifted equation")
    sp.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("value", cmd_value, "approximate the value function"),
                                 ("feedback", cmd_feedback, "feedback consumption")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--eta", action="append", default=None, help="initial history spec")
        sp.add_argument("--eta0", default=None,
                        help="comma-separated present values applied to every --eta")
        sp.set_defaults(func=func)

    sp = sub.add_parser("verify", help="run verification suites")
    common(sp)
    sp.add_argument("--suite", default="all", choices=list(SUITES) + ["all"])
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("hypotheses", help="check the standing assumptions")
    common(sp)
    sp.set_defaults(func=cmd_hypotheses)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "eta", "unset") is None:
        args.eta = ["const:1"]
    try:
        return args.func(args)
    except ValueError as exc:  # ConfigError, UsageError and invalid numerics
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

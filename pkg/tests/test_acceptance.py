"""Acceptance gate: one test and one printed PASS/FAIL line per criterion.

Criteria 1-10 run the suites on the default scenario; 11-13 use two runs of
``delayhjb verify --suite all`` on the calibration scenario.
"""

import csv
import filecmp
import os

import pytest

from delayhjb.cli import main
from delayhjb.config import default_scenario
from delayhjb.suites import operators_suite, trajectories_suite, value_suite

pytestmark = pytest.mark.slow


def _index(reports):
    return {r.probe_name: r for r in reports}


@pytest.fixture(scope="module")
def ops():
    return _index(operators_suite(default_scenario()))


@pytest.fixture(scope="module")
def traj():
    return _index(trajectories_suite(default_scenario()))


@pytest.fixture(scope="module")
def val():
    return _index(value_suite(default_scenario()))


@pytest.fixture(scope="module")
def verify_runs(tmp_path_factory):
    dirs = []
    codes = []
    for tag in ("a", "b"):
        d = tmp_path_factory.mktemp(f"verify_{tag}")
        codes.append(main(["verify", "--config", "calibration", "--suite", "all",
                           "--out", str(d)]))
        dirs.append(d)
    return dirs, codes


def _csv_probes(path):
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            ok, worst = out.get(row["probe_name"], (True, float("-inf")))
            out[row["probe_name"]] = (ok and row["pass"] == "1",
                                      max(worst, float(row["violation"])))
    return out


def _report(capsys, n, title, checks):
    ok = all(passed for _, passed, _ in checks)
    detail = "; ".join(f"{name} {'ok' if passed else 'FAILED'} ({info})"
                       for name, passed, info in checks)
    with capsys.disabled():
        print(f"\nCRITERION {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, detail


def _probe(rep):
    return rep.probe_name, rep.passed, f"n={rep.samples}, max_violation={rep.max_violation:.3e}"


def test_criterion_01_operator_identities(ops, capsys):
    _report(capsys, 1, "operator identities",
            [_probe(ops[k]) for k in ("A_Ainv_identity", "Ainv_A_identity", "adjoint_pairing",
                                      "adjoint_pairing_shrink")])


def test_criterion_02_semigroup_bound(ops, capsys):
    _report(capsys, 2, "semigroup bound", [_probe(ops["semigroup_bound"])])


def test_criterion_03_weak_norm_lipschitz(ops, capsys):
    a1 = ops["pairing_indicators_constant"]
    r1 = a1.witnesses[0][2]
    r8 = a1.witnesses[-1][2]
    _report(capsys, 3, "pairing Lipschitz in weak norm",
            [_probe(ops["pairing_lipschitz"]), _probe(a1),
             ("a=1 growth n=8 vs n=1", r8 / r1 >= 2.0, f"ratio {r8 / r1:.4f}")])


def test_criterion_04_equivalence(traj, capsys):
    _report(capsys, 4, "delay equation vs lifted equation",
            [_probe(traj["equivalence"]), _probe(traj["equivalence_shrink"])])


def test_criterion_05_comparison(traj, capsys):
    _report(capsys, 5, "comparison",
            [_probe(traj["comparison"]), _probe(traj["comparison_planted"])])


def test_criterion_06_positivity(traj, capsys):
    _report(capsys, 6, "null-control lower bound", [_probe(traj["positivity_lower_bound"])])


def test_criterion_07_gronwall(traj, capsys):
    _report(capsys, 7, "weak-norm stability", [_probe(traj["gronwall"])])


def test_criterion_08_hamiltonian(val, capsys):
    _report(capsys, 8, "Hamiltonian",
            [_probe(val[k]) for k in ("hamiltonian_grid", "hamiltonian_convexity",
                                      "feedback_foc")])


def test_criterion_09_value_structure(val, capsys):
    _report(capsys, 9, "value-function structure",
            [_probe(val[k]) for k in ("concavity", "monotonicity", "ceiling", "large_eta0")])


def test_criterion_10_brute_force(val, capsys):
    _report(capsys, 10, "two-segment brute force", [_probe(val["brute_force_2seg"])])


def test_criterion_11_dpp_hjb(verify_runs, capsys):
    probes = _csv_probes(verify_runs[0][0] / "probes_hjb.csv")
    _report(capsys, 11, "DPP and HJB residuals",
            [(k, probes[k][0], f"max_violation={probes[k][1]:.3e}")
             for k in ("dpp", "hjb_residual", "hjb_refinement")])


def test_criterion_12_regularity(verify_runs, capsys):
    probes = _csv_probes(verify_runs[0][0] / "probes_hjb.csv")
    _report(capsys, 12, "continuity of the present derivative",
            [(k, probes[k][0], f"max_violation={probes[k][1]:.3e}")
             for k in ("regularity_present", "regularity_past")])


def test_criterion_13_determinism(verify_runs, capsys):
    (a, b), codes = verify_runs
    names = sorted(os.listdir(a))
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    csvs = [n for n in names if n.endswith(".csv")]
    _report(capsys, 13, "byte-identical verify outputs",
            [("files", not mismatch and not errors and sorted(os.listdir(b)) == names,
              f"{len(match)} identical, {len(csvs)} csv"),
             ("exit status", codes == [0, 0], f"codes {codes}")])

import csv
import math

import numpy as np
import pytest

from delayhjb.cli import main, parse_control, parse_eta


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestSpecs:
    def test_const_and_ramp(self):
        e = parse_eta("const:2", 10, 1.0)
        assert e.eta0 == 2.0 and np.all(e.eta1 == 2.0)
        r = parse_eta("ramp:0:1@3", 10, 1.0)
        assert r.eta0 == 3.0 and r.eta1[0] == 0.0 and r.eta1[-1] == pytest.approx(1.0)

    def test_bump_mass(self):
        e = parse_eta("bump:-0.5:0.2:1@1", 200, 1.0)
        w = np.full(201, 1.0 / 200)
        w[[0, -1]] *= 0.5
        assert float(w @ e.eta1) == pytest.approx(1.0, rel=1e-6)

    def test_file(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("xi,value\n-1,0\n0,2\n")
        e = parse_eta(f"file:{p}", 4, 1.0)
        np.testing.assert_allclose(e.eta1, [0.0, 0.5, 1.0, 1.5, 2.0])

    def test_bad_specs(self):
        for spec in ("wave:1", "const:a", "ramp:1", "bump:0:0:1"):
            with pytest.raises(ValueError):
                parse_eta(spec, 10, 1.0)
        with pytest.raises(ValueError):
            parse_control("linear:1", 1.0)

    def test_controls(self):
        assert parse_control("zero", 2.0).zero_from() == 0.0
        assert parse_control("constant:0.3", 2.0).values.tolist() == [0.3]
        c = parse_control("piecewise:0.5:0.1,0.2", 2.0)
        assert c.dt == 0.5 and c.values.tolist() == [0.1, 0.2]


class TestSimulate:
    def test_null_control_certified(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--eta", "const:1"]) == 0
        v = rows(tmp_path / "verdict.csv")[0]
        assert v["admissible_until"] == "inf" and v["certified_forever"] == "1"
        traj = rows(tmp_path / "trajectory.csv")
        assert all(r["admissible"] == "1" for r in traj)

    def test_violation(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--eta", "const:0.05",
                     "--control", "constant:1000"]) == 0
        v = rows(tmp_path / "verdict.csv")[0]
        assert v["violated"] == "1" and float(v["admissible_until"]) < 3.0

    def test_lifted(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--eta", "ramp:0.5:1",
                     "--control", "constant:0.1", "--lifted"]) == 0
        lifted = rows(tmp_path / "lifted.csv")
        assert set(lifted[0]) == {"time", "present", "x", "discrepancy"}
        assert max(float(r["discrepancy"]) for r in lifted) < 5e-3

    def test_dxi_flag(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--dxi", "0.01", "--dt", "0.005"]) == 0
        with pytest.raises(SystemExit):
            main(["simulate", "--bogus"])
        assert main(["simulate", "--out", str(tmp_path), "--dxi", "0.3"]) == 2


class TestValue:
    def test_surface(self, tmp_path):
        assert main(["value", "--out", str(tmp_path), "--eta", "const:1",
                     "--eta0", "0.2,0.5,1,2"]) == 0
        r = rows(tmp_path / "value.csv")
        v = [float(x["v_lo"]) for x in r]
        assert all(b >= a for a, b in zip(v, v[1:]))
        assert all(float(x["v_hi"]) <= 2.0 for x in r)  # (sup U1 + sup U2) / rho
        assert all(float(x["v_eta0"]) > 0 and float(x["feedback_c"]) > 0 for x in r)

    def test_outside_domain_marker(self, tmp_path):
        assert main(["value", "--out", str(tmp_path), "--eta", "const:-50@0.001"]) == 0
        r = rows(tmp_path / "value.csv")[0]
        assert r["v_lo"] == "-inf" and r["v_hi"] == "-inf"

    def test_feedback(self, tmp_path):
        assert main(["feedback", "--out", str(tmp_path), "--eta", "const:1",
                     "--eta0", "0.5,2"]) == 0
        r = rows(tmp_path / "feedback.csv")
        assert float(r[0]["feedback_c"]) < float(r[1]["feedback_c"])


class TestVerify:
    def test_hypotheses(self, tmp_path):
        assert main(["hypotheses", "--out", str(tmp_path)]) == 0
        bad = tmp_path / "bad.ini"
        bad.write_text("[kernel]\nfamily = poly\nparams = 1.0\n")
        assert main(["hypotheses", "--config", str(bad), "--out", str(tmp_path)]) == 1

    def test_operators_pass_and_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["verify", "--suite", "operators", "--out", str(a)]) == 0
        assert main(["verify", "--suite", "operators", "--out", str(b)]) == 0
        for name in ("probes_operators.csv", "operators.csv", "summary.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        ops = rows(a / "operators.csv")
        assert set(ops[0]) == {"check_name", "sample_id", "lhs", "rhs", "error", "tolerance",
                               "pass"}

    def test_seed_changes_samples(self, tmp_path):
        main(["verify", "--suite", "operators", "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["verify", "--suite", "operators", "--out", str(tmp_path / "b"), "--seed", "2"])
        assert (tmp_path / "a" / "operators.csv").read_bytes() != \
            (tmp_path / "b" / "operators.csv").read_bytes()

    def test_nonvanishing_kernel_fails(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[kernel]\nfamily = poly\nparams = 1.0\n")
        assert main(["verify", "--config", str(bad), "--suite", "operators",
                     "--out", str(tmp_path / "o")]) == 1
        out = capsys.readouterr().out
        assert "FAIL pairing_indicators_kernel" in out

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[model]\nr = -1\n")
        assert main(["value", "--config", str(bad), "--out", str(tmp_path)]) == 2
        assert "[model] r" in capsys.readouterr().err

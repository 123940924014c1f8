import pytest

from delayhjb.config import ConfigError, calibration_scenario, default_scenario, load_config


def write(tmp_path, text):
    p = tmp_path / "s.ini"
    p.write_text(text)
    return str(p)


def test_builtin_names():
    assert load_config(None).name == "default"
    assert load_config("default") == default_scenario()
    assert load_config("calibration").u2.kind == "inverse_power"


def test_defaults_validate():
    default_scenario().validate()
    calibration_scenario().validate()


def test_full_file(tmp_path):
    cfg = load_config(write(tmp_path, """
[model]
r = 0.1
T = 2.0
rho = 0.4
[kernel]
family = hat
params = 2.0, -1.0
N = 100
[f0]
params = 0.1, 0.3, 5.0, 0.1
[utility]
u1 = saturating_power
u1_params = 0.3
u2 = inverse_power
u2_params = 0.2, 1.0
[numerics]
dt = 0.002
segments = 10
[tolerances]
hjb_tol = 0.2
[run]
seed = 7
"""))
    assert (cfg.r, cfg.T, cfg.rho) == (0.1, 2.0, 0.4)
    assert cfg.kernel_family == "hat" and cfg.kernel_params == (2.0, -1.0)
    assert cfg.numerics.N == 100 and cfg.numerics.dt == 0.002 and cfg.numerics.segments == 10
    assert cfg.tolerances.hjb_tol == 0.2 and cfg.seed == 7
    assert cfg.params.c_f0 == 0.3
    cfg.validate()


def test_rejects_nonpositive_r(tmp_path):
    with pytest.raises(ConfigError, match=r"\[model\] r"):
        load_config(write(tmp_path, "[model]\nr = 0\n"))


def test_points_at_bad_key(tmp_path):
    with pytest.raises(ConfigError, match=r"\[model\] rho"):
        load_config(write(tmp_path, "[model]\nrho = fast\n"))
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(write(tmp_path, "[solver]\nx = 1\n"))
    with pytest.raises(ConfigError, match=r"\[tolerances\] unknown key"):
        load_config(write(tmp_path, "[tolerances]\nfoo = 1\n"))
    with pytest.raises(ConfigError, match=r"\[f0\] kind"):
        load_config(write(tmp_path, "[f0]\nkind = table\n"))


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/scenario.ini")


def test_validate_reports_hypothesis_failure(tmp_path):
    cfg = load_config(write(tmp_path, "[kernel]\nfamily = poly\nparams = 1.0\n"))
    with pytest.raises(ConfigError, match="kernel.vanishes_at_minus_T"):
        cfg.validate()


def test_validate_rejects_misaligned_numerics(tmp_path):
    cfg = load_config(write(tmp_path, "[numerics]\ndt = 0.003\n"))
    with pytest.raises(ConfigError, match=r"\[numerics\]"):
        cfg.validate()


def test_refined():
    cfg = calibration_scenario()
    f = cfg.refined(4)
    n, m = cfg.numerics, f.numerics
    assert m.value_N == 4 * n.value_N and m.value_dt == n.value_dt / 4
    assert f.horizon / m.segments == pytest.approx(cfg.horizon / n.segments / 4)
    assert f.horizon >= cfg.horizon

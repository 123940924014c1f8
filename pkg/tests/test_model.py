import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delayhjb.dde import HState
from delayhjb.model import (HypothesisError, ModelParams, Nonlinearity, Utility, UtilityPair,
                            eval_drift, eval_f0, make_kernel, trapezoid_weights,
                            u2_integrability, validate_hypotheses)


def test_trapezoid_weights_sum_to_length():
    w = trapezoid_weights(11, 0.1)
    assert w[0] == w[-1] == pytest.approx(0.05)
    assert w.sum() == pytest.approx(1.0)


class TestModelParams:
    def test_rejects_nonpositive_rates(self):
        with pytest.raises(HypothesisError):
            ModelParams(r=0.0, T=1.0, rho=0.5, c_f0=0.5)
        with pytest.raises(HypothesisError):
            ModelParams(r=0.1, T=0.0, rho=0.5, c_f0=0.5)
        with pytest.raises(HypothesisError):
            ModelParams(r=0.1, T=1.0, rho=-1.0, c_f0=0.5)

    def test_test_mode_allows_zero_rate(self):
        assert ModelParams(r=0.0, T=1.0, rho=0.5, c_f0=0.0, test_mode=True).r == 0.0

    def test_ceiling(self):
        assert ModelParams(r=0.1, T=1.0, rho=0.1, c_f0=0.5, u1_sup=1.0).value_ceiling == \
            pytest.approx(10.0)


class TestKernel:
    def test_linear_ramp(self):
        k = make_kernel("linear_ramp", (1.0,), 100)
        assert k.samples[0] == 0.0
        assert k.samples[-1] == pytest.approx(1.0)
        np.testing.assert_allclose(k.deriv_samples, 1.0)
        np.testing.assert_allclose(k.samples, k.grid + 1.0, atol=1e-15)

    def test_hat(self):
        k = make_kernel("hat", (2.0,), 100)
        assert k.samples[0] == 0.0
        assert k.samples[-1] == pytest.approx(0.0, abs=1e-15)
        assert k.samples[50] == pytest.approx(2.0)
        assert np.max(k.samples) == pytest.approx(2.0)

    def test_poly_square(self):
        k = make_kernel("poly", (0.0, 0.0, 1.0), 100)
        assert k.samples[-1] == pytest.approx(1.0)
        assert k.deriv_samples[-1] == pytest.approx(2.0)
        assert k.weights.sum() == pytest.approx(1.0 / 3.0, abs=1e-4)

    def test_rejects_nonzero_left_value(self):
        with pytest.raises(HypothesisError):
            make_kernel("poly", (1.0,), 50)
        k = make_kernel("poly", (1.0,), 50, check=False)
        assert k.samples[0] == 1.0

    def test_rejects_negative_values(self):
        with pytest.raises(HypothesisError):
            make_kernel("poly", (0.0, -1.0), 50)

    def test_rejects_coarse_grid(self):
        with pytest.raises(ValueError):
            make_kernel("linear_ramp", (1.0,), 4)

    @given(st.sampled_from(["linear_ramp", "hat"]), st.floats(0.1, 5.0), st.integers(8, 400))
    @settings(max_examples=40, deadline=None)
    def test_kernel_invariants(self, family, p, N):
        k = make_kernel(family, (p,), N)
        assert k.samples[0] == 0.0
        assert np.min(k.samples) >= 0.0


class TestNonlinearity:
    nl = Nonlinearity.affine_saturating(0.1, 0.5, 10.0, 0.0)

    def test_affine_region(self):
        assert eval_f0(self.nl, 1.0, 2.0) == pytest.approx(1.1)

    def test_negative_x_extension(self):
        assert eval_f0(self.nl, -3.0, 2.0) == pytest.approx(1.0)

    def test_saturated(self):
        assert eval_f0(self.nl, 20.0, 20.0) == pytest.approx(6.0)

    def test_lipschitz_constant(self):
        assert Nonlinearity.affine_saturating(0.1, 0.5).lipschitz == 0.5

    @given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20))
    def test_lipschitz_property(self, x1, y1, x2, y2):
        nl = Nonlinearity.affine_saturating()
        lhs = abs(nl(x1, y1) - nl(x2, y2))
        assert lhs <= nl.lipschitz * (abs(x1 - x2) + abs(y1 - y2)) + 1e-12

    # concavity is required on x >= 0 only; the flat extension to x < 0 is not concave
    @given(st.floats(0, 20), st.floats(-20, 20), st.floats(0, 20), st.floats(-20, 20))
    def test_midpoint_concavity(self, x1, y1, x2, y2):
        nl = Nonlinearity.affine_saturating()
        mid = nl(0.5 * (x1 + x2), 0.5 * (y1 + y2))
        assert mid >= 0.5 * (nl(x1, y1) + nl(x2, y2)) - 1e-9


class TestDrift:
    nl = Nonlinearity.affine_saturating(0.1, 0.5, 10.0, 0.05)

    def test_zero_past(self):
        k = make_kernel("linear_ramp", (1.0,), 200)
        eta = HState.constant(1.5, 0.0, 200, 1.0).with_eta0(1.5)
        assert eval_drift(self.nl, k, eta) == pytest.approx(eval_f0(self.nl, 1.5, 0.0))

    def test_ramp_unit_past(self):
        k = make_kernel("linear_ramp", (1.0,), 200)
        eta = HState.constant(1.0, 1.0, 200, 1.0)
        assert eval_drift(self.nl, k, eta) == pytest.approx(eval_f0(self.nl, 1.0, 0.5), abs=1e-6)

    def test_grid_mismatch(self):
        k = make_kernel("linear_ramp", (1.0,), 200)
        with pytest.raises(ValueError):
            eval_drift(self.nl, k, HState.constant(1.0, 1.0, 100, 1.0))

    def test_bump_pairing(self):
        # hat-shaped past of mass 1 around -0.3: pairing ~ a(-0.3) = 0.7
        N = 400
        k = make_kernel("linear_ramp", (1.0,), N)
        xi = k.grid
        bump = np.maximum(0.0, 1.0 - np.abs(xi + 0.3) / 0.02) / 0.02
        assert k.pair(bump) == pytest.approx(0.7, abs=1e-3)

    def test_quadrature_converges(self):
        # oracle: int_{-1}^0 (xi + 1) sin(3 xi) dxi in closed form
        exact = (-1.0 / 3.0 + math.sin(3.0) / 9.0)
        errs = []
        for N in (20, 40, 80):
            k = make_kernel("linear_ramp", (1.0,), N)
            errs.append(abs(k.pair(np.sin(3.0 * k.grid)) - exact))
        assert errs[0] / errs[1] > 2.0 and errs[1] / errs[2] > 2.0


class TestUtility:
    def test_default_u1_values(self):
        u = Utility("saturating_power", (0.5,))
        assert u(0.0) == 0.0
        assert u(1.0) == pytest.approx(math.sqrt(0.5))
        assert u.sup == 1.0

    @given(st.floats(1e-6, 1e6))
    @settings(max_examples=60)
    def test_derivative_matches_difference(self, c):
        u = Utility("saturating_power", (0.5,))
        h = 1e-6 * c
        fd = (u(c + h) - u(c - h)) / (2 * h)
        assert u.deriv(c) == pytest.approx(fd, rel=1e-5)

    @given(st.floats(1e-4, 1e4))
    @settings(max_examples=60)
    def test_inverse_derivative(self, slope):
        u = Utility("saturating_power", (0.5,))
        c = u.inverse_deriv(slope)
        assert u.deriv(c) == pytest.approx(slope, rel=1e-10)

    def test_u2_forms(self):
        assert Utility("inverse_power", (0.1, 1.0))(2.0) == pytest.approx(-0.05)
        assert Utility("log")(math.e) == pytest.approx(1.0)
        assert Utility("zero")(3.0) == 0.0
        assert Utility("inverse_power", (0.1, 1.0))(0.0) == -math.inf

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Utility("quadratic")

    def test_integrability(self):
        assert math.isfinite(u2_integrability(Utility("log"), 0.5, 0.5))
        assert math.isfinite(u2_integrability(Utility("inverse_power", (0.1, 1.0)), 0.5, 0.2))
        assert u2_integrability(Utility("inverse_power", (0.1, 1.0)), 0.5, 1.0) == -math.inf


class TestValidateHypotheses:
    def _setup(self, nl=None, kernel=None, utilities=None):
        nl = nl or Nonlinearity.affine_saturating()
        utilities = utilities or UtilityPair()
        kernel = kernel or make_kernel("linear_ramp", (1.0,), 200)
        params = ModelParams.from_components(0.05, 1.0, 0.5, nl, utilities)
        return validate_hypotheses(params, nl, kernel, utilities)

    def test_defaults_pass(self):
        rep = self._setup()
        assert rep.passed, rep.summary()

    def test_convex_f0_fails_with_witness(self):
        nl = Nonlinearity.custom(lambda x, y: np.asarray(x) ** 2, lipschitz=40.0)
        rep = self._setup(nl=nl)
        chk = rep.get("f0.jointly_concave")
        assert not chk.passed
        assert chk.witness is not None

    def test_constant_kernel_fails(self):
        rep = self._setup(kernel=make_kernel("poly", (1.0,), 200, check=False))
        assert not rep.get("kernel.vanishes_at_minus_T").passed

    def test_finite_slope_u1_fails(self):
        rep = self._setup(utilities=UtilityPair(u1=Utility("exponential", (1.0,))))
        assert not rep.get("u1.infinite_slope_at_zero").passed

    def test_log_u2_is_unbounded(self):
        rep = self._setup(utilities=UtilityPair(u2=Utility("log")))
        assert not rep.get("u2.bounded_above").passed


def test_kinked_kernel_passes_and_wrong_derivative_fails():
    from delayhjb.model import Kernel
    hat = make_kernel("hat", (2.0,), 200)
    assert hat.derivative_residual() <= math.sqrt(hat.dxi) * 4.0
    nl = Nonlinearity.affine_saturating()
    params = ModelParams.from_components(0.05, 1.0, 0.5, nl, UtilityPair())
    assert validate_hypotheses(params, nl, hat, UtilityPair()).passed
    ramp = make_kernel("linear_ramp", (1.0,), 200)
    wrong = Kernel(ramp.samples, 3.0 * ramp.deriv_samples, ramp.dxi, "linear_ramp", (1.0,))
    assert not validate_hypotheses(params, nl, wrong, UtilityPair()).get(
        "kernel.derivative_consistent").passed


def test_integrability_closed_forms():
    u = Utility("inverse_power", (0.2, 1.0))
    assert u2_integrability(u, 0.4, 0.3) == pytest.approx(-0.2 / 0.1)
    assert u2_integrability(Utility("log"), 0.5, 0.5, xi=1.0) == pytest.approx(-2.0)
    assert math.isfinite(u2_integrability(Utility("exp_saturating", (1.0,)), 0.5, 0.5))

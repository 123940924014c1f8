import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delayhjb import lift
from delayhjb.dde import ControlPath, HState, integrate
from delayhjb.lift import LiftedState, SmoothSampler
from delayhjb.model import HypothesisError, ModelParams, Nonlinearity, make_kernel

N = 200
T = 1.0


def zeros(N=N):
    return np.zeros(N + 1)


def ones(N=N):
    return np.ones(N + 1)


class TestNorms:
    def test_h_norm_examples(self):
        assert lift.h_norm(HState(1.0, zeros(), T / N)) == pytest.approx(1.0)
        assert lift.h_norm(HState(0.0, ones(), T / N)) == pytest.approx(1.0)
        assert lift.h_norm(HState(3.0, 4.0 * ones(), T / N)) == pytest.approx(5.0)

    def test_norm_minus1_examples(self):
        r = 0.5
        assert lift.norm_minus1(HState(r, zeros(), T / N), r) == pytest.approx(math.sqrt(2.0))
        assert lift.norm_minus1(HState(0.0, zeros(), T / N), r) == 0.0

    @given(st.floats(-5, 5), st.integers(0, 2 ** 31))
    @settings(max_examples=30)
    def test_norm_minus1_homogeneous(self, lam, seed):
        eta = SmoothSampler.draw(np.random.default_rng(seed), T).sample(50)
        a = lift.norm_minus1(lam * eta, 0.3)
        assert a == pytest.approx(abs(lam) * lift.norm_minus1(eta, 0.3), rel=1e-12, abs=1e-14)


class TestAinv:
    def test_present_only(self):
        r = 0.5
        z = lift.apply_Ainv(HState(r, zeros(), T / N), r)
        assert z.eta0 == pytest.approx(1.0)
        np.testing.assert_allclose(z.eta1, 1.0)
        assert z.in_domain_A

    def test_constant_past(self):
        z = lift.apply_Ainv(HState(0.0, ones(), T / N), 0.7)
        assert z.eta0 == 0.0
        np.testing.assert_allclose(z.eta1, np.linspace(-1.0, 0.0, N + 1), atol=1e-13)

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=30)
    def test_round_trip(self, seed):
        eta = SmoothSampler.draw(np.random.default_rng(seed), T).sample(N)
        back = lift.apply_A(lift.apply_Ainv(eta, 0.4), 0.4)
        assert abs(back.eta0 - eta.eta0) <= eta.tol
        assert np.max(np.abs(back.eta1 - eta.eta1)) <= eta.tol

    def test_apply_A_requires_domain(self):
        with pytest.raises(ValueError):
            lift.apply_A(LiftedState(5.0, zeros(), T / N), 0.5)


class TestAstar:
    def test_ramp(self):
        k = make_kernel("linear_ramp", (1.0,), N)
        a = lift.apply_Astar(LiftedState(0.0, k.samples, k.dxi), 0.5)
        assert a.eta0 == pytest.approx(1.0)
        np.testing.assert_allclose(a.eta1, -1.0, atol=1e-12)

    def test_zero_past(self):
        a = lift.apply_Astar(LiftedState(1.0, zeros(), T / N), 0.5)
        assert a.eta0 == pytest.approx(0.5)
        np.testing.assert_allclose(a.eta1, 0.0)

    def test_domain_violation(self):
        with pytest.raises(ValueError):
            lift.apply_Astar(LiftedState(0.0, ones(), T / N), 0.5)

    def test_adjoint_identity_converges(self):
        rng = np.random.default_rng(7)
        pairs = [(SmoothSampler.draw(rng, T, domain="A"), SmoothSampler.draw(rng, T, domain="Astar"))
                 for _ in range(20)]

        def worst(n):
            out = 0.0
            for z, e in pairs:
                zs, es = z.sample(n), e.sample(n)
                d = lift.inner(lift.apply_A(zs, 0.3), es) - lift.inner(zs, lift.apply_Astar(es, 0.3))
                out = max(out, abs(d))
            return out

        e1, e2 = worst(100), worst(200)
        assert e1 / e2 >= 1.8


class TestSemigroup:
    def test_identity_at_zero(self):
        eta = SmoothSampler.draw(np.random.default_rng(0), T).sample(N)
        s = lift.apply_semigroup(0.0, eta, 0.3)
        assert s.eta0 == eta.eta0
        np.testing.assert_allclose(s.eta1, eta.eta1)

    def test_no_history_after_T(self):
        eta = SmoothSampler.draw(np.random.default_rng(1), T).sample(N)
        t, r = 1.5, 0.3
        s = lift.apply_semigroup(t, eta, r)
        np.testing.assert_allclose(s.eta1, eta.eta0 * np.exp(r * (t + eta.grid)), rtol=1e-12)

    @given(st.floats(0.0, 2.0), st.integers(0, 2 ** 31))
    @settings(max_examples=60)
    def test_norm_bound(self, t, seed):
        eta = SmoothSampler.draw(np.random.default_rng(seed), T, amp=3.0).sample(N)
        lhs = lift.h_norm(lift.apply_semigroup(t, eta, 0.2)) ** 2
        assert lhs <= lift.semigroup_bound(t, T, 0.2) * lift.h_norm(eta) ** 2 + 1e-9

    @given(st.integers(0, 400), st.integers(0, 400))
    @settings(max_examples=30)
    def test_semigroup_law(self, n1, n2):
        eta = SmoothSampler.draw(np.random.default_rng(n1 + 1000 * n2), T).sample(N)
        s, t = n1 * T / N, n2 * T / N
        a = lift.apply_semigroup(s, lift.apply_semigroup(t, eta, 0.2), 0.2)
        b = lift.apply_semigroup(s + t, eta, 0.2)
        np.testing.assert_allclose(a.eta1, b.eta1, rtol=1e-12, atol=1e-12)
        assert a.eta0 == pytest.approx(b.eta0, rel=1e-12)


class TestAdjointSemigroup:
    def test_identity_and_zero_past(self):
        eta = SmoothSampler.draw(np.random.default_rng(2), T, domain="Astar").sample(N)
        s = lift.apply_adjoint_semigroup(0.0, eta, 0.3)
        assert s.eta0 == pytest.approx(eta.eta0)
        np.testing.assert_allclose(s.eta1, eta.eta1)
        p = lift.apply_adjoint_semigroup(0.4, HState(1.0, zeros(), T / N), 0.3)
        assert p.eta0 == pytest.approx(math.exp(0.12))
        np.testing.assert_allclose(p.eta1, 0.0)

    def test_rejects_long_times(self):
        with pytest.raises(ValueError):
            lift.apply_adjoint_semigroup(1.5, HState(1.0, zeros(), T / N), 0.3)

    @given(st.floats(0.0, 1.0), st.integers(0, 2 ** 31))
    @settings(max_examples=30)
    def test_duality(self, t, seed):
        rng = np.random.default_rng(seed)
        z = SmoothSampler.draw(rng, T).sample(N)
        e = SmoothSampler.draw(rng, T, domain="Astar").sample(N)
        lhs = lift.inner(lift.apply_semigroup(t, z, 0.3), e)
        rhs = lift.inner(z, lift.apply_adjoint_semigroup(t, e, 0.3))
        scale = max(1.0, lift.h_norm(z) * lift.h_norm(e))
        assert abs(lhs - rhs) <= 0.1 * lift.dom_tol(T / N) * scale * math.exp(0.3)


class TestMild:
    def test_zero_drift_is_semigroup(self):
        params = ModelParams(r=0.2, T=T, rho=0.5, c_f0=0.0, test_mode=True)
        k = make_kernel("linear_ramp", (1.0,), N)
        eta = HState.from_function(1.0, lambda x: 1.0 + np.sin(3 * x), N, T)
        mild = lift.integrate_mild(params, Nonlinearity.zero(), k, eta, ControlPath.zero(), 1.5,
                                   T / N)
        n = len(mild.times) - 1
        ref = lift.apply_semigroup(mild.times[n], eta, 0.2)
        assert mild.present[n] == pytest.approx(ref.eta0, rel=1e-12)
        np.testing.assert_allclose(mild.pasts[n], ref.eta1, rtol=1e-12)

    def test_equivalence_with_delay_equation(self):
        nl = Nonlinearity.affine_saturating()
        params = ModelParams(r=0.05, T=T, rho=0.5, c_f0=nl.lipschitz)
        gaps = []
        for n, dt in ((100, 2e-3), (200, 1e-3)):
            k = make_kernel("linear_ramp", (1.0,), n)
            eta = HState.from_function(1.0, lambda x: 1.0 + 0.3 * np.sin(3 * x), n, T)
            c = ControlPath(0.5, [0.1, 0.0, 0.3])
            tr = integrate(params, nl, k, eta, c, 3.0, dt)
            mild = lift.integrate_mild(params, nl, k, eta, c, 3.0, dt)
            gaps.append(float(np.max(lift.equivalence_gap(mild, tr))))
        assert gaps[1] <= 5e-3
        assert gaps[0] / gaps[1] >= 1.8


class TestLipschitzPairing:
    def test_ramp_constant(self):
        params = ModelParams(r=0.5, T=T, rho=0.5, c_f0=0.5)
        k = make_kernel("linear_ramp", (1.0,), N)
        assert lift.lipA_constant(params, k) == pytest.approx(0.5 + math.sqrt(2.0))

    def test_doubling_kernel(self):
        params = ModelParams(r=0.5, T=T, rho=0.5, c_f0=0.5)
        c1 = lift.lipA_constant(params, make_kernel("linear_ramp", (1.0,), N))
        c2 = lift.lipA_constant(params, make_kernel("linear_ramp", (2.0,), N))
        assert c2 - 0.5 == pytest.approx(2 * (c1 - 0.5))

    def test_rejects_nonvanishing_kernel(self):
        params = ModelParams(r=0.5, T=T, rho=0.5, c_f0=0.5)
        with pytest.raises(HypothesisError):
            lift.lipA_constant(params, make_kernel("poly", (1.0,), N, check=False))

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=50)
    def test_inequality(self, seed):
        params = ModelParams(r=0.05, T=T, rho=0.5, c_f0=0.5)
        k = make_kernel("linear_ramp", (1.0,), N)
        eta = SmoothSampler.draw(np.random.default_rng(seed), T, amp=2.0).sample(N)
        C = lift.lipA_constant(params, k)
        assert lift.pairing_ratio(eta, k, params.r) <= C * (1 + 1e-6)


class TestCounterexample:
    def test_exact_values(self):
        for n in (1, 2, 4, 8):
            mass, nm1 = lift.counterexample_sequence(n)
            assert mass == pytest.approx(1.0, abs=1e-12)
            assert nm1 == pytest.approx(1.0 / math.sqrt(3 * n), rel=1e-12)

    def test_ratio_grows(self):
        r1 = 1.0 / lift.counterexample_sequence(1)[1]
        r4 = 1.0 / lift.counterexample_sequence(4)[1]
        r8 = 1.0 / lift.counterexample_sequence(8)[1]
        assert r4 / r1 > 1.5 and r8 / r1 >= 2.0

    def test_unresolvable(self):
        with pytest.raises(ValueError):
            lift.counterexample_sequence(1000, N=200)
        with pytest.raises(ValueError):
            lift.counterexample_sequence(0)

    def test_ramp_kernel_ratio_stays_bounded(self):
        params = ModelParams(r=1.0, T=T, rho=0.5, c_f0=0.5)
        k = make_kernel("linear_ramp", (1.0,), N)
        C = lift.lipA_constant(params, k)
        for n in (1, 4, 16, 64):
            mass, nm1 = lift.counterexample_sequence(n, kernel=k)
            assert mass / nm1 <= C


class TestGronwall:
    def test_coincident_states(self):
        nl = Nonlinearity.affine_saturating()
        params = ModelParams(r=0.05, T=T, rho=0.5, c_f0=nl.lipschitz)
        k = make_kernel("linear_ramp", (1.0,), 50)
        eta = HState.constant(1.0, 1.0, 50, T)
        with pytest.raises(ValueError):
            lift.gronwall_stability(params, nl, k, eta, eta)

    def test_zero_drift_semigroup_constant(self):
        params = ModelParams(r=0.2, T=T, rho=0.5, c_f0=0.0, test_mode=True)
        k = make_kernel("linear_ramp", (1.0,), 50)
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = HState(1.0 + rng.random(), 1.0 + rng.random(51), T / 50)
            b = HState(1.0 + rng.random(), 1.0 + rng.random(51), T / 50)
            res = lift.gronwall_stability(params, Nonlinearity.zero(), k, a, b)
            assert res.ratio <= res.semigroup_const + 1e-9

    def test_default_pairs(self):
        nl = Nonlinearity.affine_saturating()
        params = ModelParams(r=0.05, T=T, rho=0.5, c_f0=nl.lipschitz)
        k = make_kernel("linear_ramp", (1.0,), 50)
        rng = np.random.default_rng(4)
        for _ in range(5):
            a = HState(1.0 + rng.random(), 1.0 + rng.random(51), T / 50)
            b = HState(1.0 + rng.random(), 1.0 + rng.random(51), T / 50)
            assert lift.gronwall_stability(params, nl, k, a, b).passed


def test_domain_flags():
    s = LiftedState(1.0, np.linspace(0.0, 1.0, N + 1), T / N)
    assert s.in_domain_A and s.in_domain_Astar
    jump = np.ones(N + 1)
    jump[N // 2:] = 5.0
    assert not LiftedState(5.0, jump, T / N).in_domain_A


def test_operator_csv(tmp_path):
    checks = [lift.OperatorCheck("adjoint", 0, 1.0, 1.0 + 1e-5, 1e-5, 1e-3),
              lift.OperatorCheck("adjoint", 1, 1.0, 2.0, 1.0, 1e-3)]
    p = tmp_path / "ops.csv"
    lift.write_operator_csv(p, checks)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["check_name", "sample_id", "lhs", "rhs", "error", "tolerance", "pass"]
    assert [r[-1] for r in rows[1:]] == ["1", "0"]

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_affine_model, random_simplex, value_iteration_oracle
from mfcgq.core import CallableModel, softmin
from mfcgq.envs import TwoStateParams, build_two_state, two_state_exact
from mfcgq.exceptions import AssumptionViolationError
from mfcgq.operators import (StructuralConstants, action_gap, bellman_apply, check_assumptions,
                             estimate_lipschitz, p3, p3_tilde, p3_tilde_family,
                             structural_constants, t3, theorem_error_bounds)

Q_STAR = np.array([[4.5, 2.9], [3.9, 5.5]])


def brute_t3(m, mu, q, fam):
    X, A = q.shape
    out = np.empty((X, A))
    for x in range(X):
        for a in range(A):
            s = 0.0
            for y in range(X):
                s += m.kernel(x, a, mu, fam[x, a])[y] * min(q[y])
            out[x, a] = m.cost(x, a, mu, fam[x, a]) + m.gamma * s - q[x, a]
    return out


def brute_p3(m, mu, q, fam):
    X, A = q.shape
    pi = softmin(q, m.phi)
    out = -np.array(mu, dtype=float)
    for x in range(X):
        for a in range(A):
            for y in range(X):
                out[y] += mu[x] * pi[x, a] * m.kernel(x, a, mu, fam[x, a])[y]
    return out


def brute_p3_tilde(m, x, a, mu, q, mt):
    X, A = q.shape
    pi = softmin(q, m.phi)
    out = -np.array(mt, dtype=float)
    for z in range(X):
        for b in range(A):
            w = (1.0 if b == a else 0.0) if z == x else pi[z, b]
            for y in range(X):
                out[y] += mt[z] * w * m.kernel(z, b, mu, mt)[y]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(11)


class TestBellman:
    def test_exact_solution_is_fixed_point(self, params, model):
        ex = two_state_exact(params)
        np.testing.assert_allclose(t3(model, ex.mu_star, ex.q_star, ex.locals_star), 0, atol=1e-9)
        np.testing.assert_allclose(bellman_apply(model, ex.mu_star, ex.locals_star, ex.q_star),
                                   Q_STAR, atol=1e-9)

    def test_single_local_vector_is_not_enough(self, params, model):
        # Q* needs the per-pair locals; the single vector (p, 1-p) does not reproduce it
        out = bellman_apply(model, [0.1, 0.9], [0.1, 0.9], Q_STAR)
        assert np.abs(out - Q_STAR).max() > 0.5

    def test_value_iteration_fixed_point(self, rng):
        m = random_affine_model(rng, dist_free=True)
        mu = random_simplex(rng, 3)
        K = m.transition_matrix(mu, mu)
        q = value_iteration_oracle(K, m.cost_matrix(mu, mu), m.gamma)
        np.testing.assert_allclose(t3(m, mu, q, mu), 0, atol=1e-10)

    def test_brute_force(self, rng):
        for _ in range(30):
            m = random_affine_model(rng)
            mu = random_simplex(rng, 3)
            fam = random_simplex(rng, 3, size=(3, 2))
            q = rng.normal(size=(3, 2))
            np.testing.assert_allclose(t3(m, mu, q, fam), brute_t3(m, mu, q, fam), atol=1e-12)
            np.testing.assert_allclose(p3(m, mu, q, fam), brute_p3(m, mu, q, fam), atol=1e-12)
            for x in range(3):
                for a in range(2):
                    np.testing.assert_allclose(p3_tilde(m, x, a, mu, q, fam[x, a]),
                                               brute_p3_tilde(m, x, a, mu, q, fam[x, a]),
                                               atol=1e-12)

    def test_family_version_matches_pairwise(self, rng):
        m = random_affine_model(rng)
        mu = random_simplex(rng, 3)
        fam = random_simplex(rng, 3, size=(3, 2))
        q = rng.normal(size=(3, 2))
        out = p3_tilde_family(m, mu, q, fam)
        for x in range(3):
            for a in range(2):
                np.testing.assert_allclose(out[x, a], p3_tilde(m, x, a, mu, q, fam[x, a]),
                                           atol=1e-14)

    def test_single_vector_reduces_to_plain_flow(self, rng):
        m = random_affine_model(rng)
        mu, mt = random_simplex(rng, 3), random_simplex(rng, 3)
        q = rng.normal(size=(3, 2))
        fam = np.broadcast_to(mt, (3, 2, 3))
        np.testing.assert_allclose(p3(m, mu, q, mt), p3(m, mu, q, fam), atol=1e-15)

    def test_stationary_mu_zeroes_p3(self, model):
        q = Q_STAR
        from mfcgq.envs import two_state_global_gase
        mu = two_state_global_gase(TwoStateParams(), softmin(q, 500.0))
        np.testing.assert_allclose(p3(model, mu, q, mu), 0, atol=1e-14)

    def test_frozen_stationary_zeroes_p3_tilde(self, model):
        # pure (move, stay) with stay frozen at state 0: stationary law (1/2, 1/2)
        np.testing.assert_allclose(p3_tilde(model, 0, 0, [0.1, 0.9], Q_STAR, [0.5, 0.5]), 0,
                                   atol=1e-14)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_operators_sum_to_zero(self, seed):
        r = np.random.default_rng(seed)
        m = random_affine_model(r)
        mu = random_simplex(r, 3)
        fam = random_simplex(r, 3, size=(3, 2))
        q = r.normal(size=(3, 2)) * 5
        assert abs(p3(m, mu, q, fam).sum()) <= 1e-12
        assert np.all(np.abs(p3_tilde_family(m, mu, q, fam).sum(-1)) <= 1e-12)


class TestStructuralConstants:
    def test_reference_model(self, model):
        k = structural_constants(model, q=Q_STAR)
        assert k.c_min == pytest.approx(0.1)
        assert k.L_p_glob == 0 and k.L_p_loc == 0
        assert k.L_f_glob == pytest.approx(2.5) and k.L_f_loc == pytest.approx(2.5)
        assert k.action_gap == pytest.approx(1.6)
        assert k.L_p_max == 0

    def test_default_q_uses_softmin_fixed_point(self, model):
        assert structural_constants(model).action_gap == pytest.approx(1.6, abs=1e-9)

    def test_action_gap_conventions(self):
        assert action_gap([[1.0, 1.0], [2.0, 2.0]]) == math.inf
        assert action_gap([[1.0, 1.0], [0.0, 3.0]]) == 3.0
        assert action_gap([[0.0, 2.0, 0.5]]) == 0.5

    def test_exact_constants_on_affine_models(self, rng):
        m = random_affine_model(rng)
        k = structural_constants(m, q=np.zeros((3, 2)))
        assert k.L_p_glob == m.exact_lipschitz().p_glob
        assert k.c_min <= k.c_min_phi
        for _ in range(300):
            u, v = random_simplex(rng, 3), random_simplex(rng, 3)
            assert m.transition_matrix(u, v).min() >= k.c_min - 1e-15

    def test_empirical_estimate_is_lower_bound(self, rng):
        m = random_affine_model(rng)
        fn = CallableModel(3, 2, m.kernel, m.cost, m.gamma, m.phi, m.cost_bound)
        est = estimate_lipschitz(fn, 100, rng)
        ex = m.exact_lipschitz()
        # vertex pairs are included, so affine maps are estimated exactly
        assert est.p_glob == pytest.approx(ex.p_glob, abs=1e-12)
        assert est.f_loc == pytest.approx(ex.f_loc, abs=1e-12)

    def test_invariants(self):
        with pytest.raises(ValueError):
            StructuralConstants(0.3, 0.2, 0, 0, 0, 0, 1.0)


class TestAssumptions:
    def test_reference_model(self, model):
        rep = check_assumptions(structural_constants(model, q=Q_STAR), model)
        assert rep["local_contraction"].holds and rep["global_contraction"].holds
        assert rep["phi_total"].threshold == pytest.approx(0.01)
        assert rep["phi_global"].threshold == pytest.approx(4e-5)
        assert not rep["phi_total"].holds and not rep.all_hold

    def test_boundary_violation_reports_margin(self, model):
        k = StructuralConstants(0.1, 0.1, 0.0, 0.2, 1.0, 1.0, 1.0)
        rep = check_assumptions(k, model)
        c = rep["local_contraction"]
        assert not c.holds and c.margin == pytest.approx(-0.1)
        assert "FAIL" in rep.summary()


class TestBounds:
    def test_infinite_gap(self, model):
        k = StructuralConstants(0.1, 0.1, 0.0, 0.0, 2.5, 2.5, math.inf)
        b = theorem_error_bounds(k, model)
        assert b.dist_bound == 0.0 and b.q_bound == 0.0

    def test_reference_values(self, model):
        k = StructuralConstants(0.1, 0.1, 0.0, 0.0, 2.5, 2.5, 1.6)
        b = theorem_error_bounds(k, model)
        assert b.dist_bound == pytest.approx(4 * 2 ** 1.5 * math.exp(-800) / 0.2, abs=1e-300)
        assert b.dist_bound < 1e-300

    def test_formula(self):
        m = build_two_state(TwoStateParams(phi=5.0))
        k = StructuralConstants(0.1, 0.1, 0.01, 0.02, 2.5, 2.5, 1.6)
        b = theorem_error_bounds(k, m)
        d = 4 * 2 ** 1.5 * math.exp(-8.0) / (0.2 - 0.04)
        assert b.dist_bound == pytest.approx(d, rel=1e-14)
        assert b.q_bound == pytest.approx((5.0 + 1.0 * 0.02 * 11.0) * d / 0.5, rel=1e-14)

    def test_nonpositive_denominator(self, model):
        k = StructuralConstants(0.1, 0.1, 0.1, 0.0, 2.5, 2.5, 1.6)
        with pytest.raises(AssumptionViolationError):
            theorem_error_bounds(k, model)

    @given(st.floats(0.1, 50), st.floats(0.01, 5))
    def test_monotone_in_phi(self, phi, gap):
        k = StructuralConstants(0.1, 0.1, 0.0, 0.0, 2.5, 2.5, gap)
        b1 = theorem_error_bounds(k, build_two_state(TwoStateParams(phi=phi)))
        b2 = theorem_error_bounds(k, build_two_state(TwoStateParams(phi=2 * phi)))
        assert b2.dist_bound <= b1.dist_bound and b2.q_bound <= b1.q_bound

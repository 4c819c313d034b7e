import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_affine_model, random_simplex
from mfcgq.core import (AffineModel, CallableModel, LipschitzConstants, apply_kernel,
                        apply_modified_kernel, argmin_policy, frozen_policies, softmin_policy,
                        softmin_policy_row, substitute_policy)
from mfcgq.envs import MOVE, STAY
from mfcgq.exceptions import InvalidInputError, ModelContractError

finite = st.floats(-50, 50, allow_nan=False)


def softmin_mp(q, phi):
    mpmath.mp.dps = 50
    w = [mpmath.exp(-mpmath.mpf(phi) * mpmath.mpf(v)) for v in q]
    s = mpmath.fsum(w)
    return np.array([float(v / s) for v in w])


class TestSoftmin:
    @given(st.floats(-100, 100), st.floats(0.01, 1000), st.integers(1, 6))
    def test_constant_row_is_uniform(self, c, phi, n):
        np.testing.assert_allclose(softmin_policy_row(np.full(n, c), phi), np.full(n, 1 / n))

    def test_dominant_entry_at_large_temperature(self):
        out = softmin_policy_row([4.5, 2.9], 500.0)
        assert abs(out[0]) <= 1e-12 and abs(out[1] - 1.0) <= 1e-12

    def test_against_extended_precision(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            q = rng.normal(size=rng.integers(2, 6)) * 3
            np.testing.assert_allclose(softmin_policy_row(q, 1.0), softmin_mp(q, 1.0),
                                       rtol=0, atol=1e-12)

    def test_no_overflow_at_large_phi(self):
        out = softmin_policy_row([-1000.0, 1000.0, 0.0], 500.0)
        assert np.all(np.isfinite(out)) and out[0] == 1.0

    @pytest.mark.parametrize("bad", [[np.nan, 1.0], [np.inf, 0.0]])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InvalidInputError):
            softmin_policy_row(bad, 1.0)

    def test_bad_phi_rejected(self):
        with pytest.raises(InvalidInputError):
            softmin_policy_row([1.0, 2.0], 0.0)

    @settings(max_examples=300)
    @given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite),
           st.floats(0.01, 50))
    def test_l2_lipschitz(self, q1, q2, phi):
        d = np.linalg.norm(softmin_policy_row(q1, phi) - softmin_policy_row(q2, phi))
        assert d <= phi * np.linalg.norm(q1 - q2) + 1e-12

    @pytest.mark.parametrize("phi", [10.0, 100.0, 1000.0])
    def test_sharpness(self, phi):
        rng = np.random.default_rng(int(phi))
        for _ in range(50):
            A = 4
            q = rng.normal(size=(3, A))
            best = q.argmin(axis=1)
            # enforce a gap of at least 0.5 to the best action
            for x in range(3):
                others = [a for a in range(A) if a != best[x]]
                q[x, others] = np.maximum(q[x, others], q[x, best[x]] + 0.5)
            pi = softmin_policy(q, phi)
            off = 1.0 - pi[np.arange(3), best]
            assert np.all(off <= A * np.exp(-phi * 0.5))


class TestArgmin:
    def test_reference_table(self):
        np.testing.assert_array_equal(argmin_policy([[4.5, 2.9], [3.9, 5.5]]), [MOVE, STAY])

    def test_ties_pick_lowest(self):
        np.testing.assert_array_equal(argmin_policy(np.ones((3, 4))), [0, 0, 0])

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            q = rng.integers(0, 4, size=(4, 3)).astype(float)
            expected = []
            for x in range(4):
                best = 0
                for a in range(1, 3):
                    if q[x, a] < q[x, best]:
                        best = a
                expected.append(best)
            np.testing.assert_array_equal(argmin_policy(q), expected)


class TestSubstitute:
    def test_definition(self):
        out = substitute_policy(np.full((2, 2), 0.5), 0, 1)
        np.testing.assert_array_equal(out, [[0.0, 1.0], [0.5, 0.5]])

    def test_idempotent_on_pure_row(self):
        pi = np.array([[0.0, 1.0], [0.3, 0.7]])
        np.testing.assert_array_equal(substitute_policy(pi, 0, 1), pi)

    def test_input_not_mutated(self):
        pi = np.full((2, 2), 0.5)
        substitute_policy(pi, 1, 0)
        assert np.all(pi == 0.5)

    def test_index_validation(self):
        with pytest.raises(InvalidInputError):
            substitute_policy(np.full((2, 2), 0.5), 2, 0)

    def test_frozen_policies_batch(self):
        rng = np.random.default_rng(2)
        pi = rng.dirichlet(np.ones(3), size=4)
        F = frozen_policies(pi)
        for x in range(4):
            for a in range(3):
                np.testing.assert_array_equal(F[x, a], substitute_policy(pi, x, a))


class TestKernels:
    def test_stationary_under_reference_policy(self, model):
        pi = np.array([[0.0, 1.0], [1.0, 0.0]])
        nu = np.array([0.1, 0.9])
        np.testing.assert_allclose(apply_kernel(model, nu, pi, nu, nu), nu, atol=1e-15)

    def test_state_independent_kernel_returns_its_row(self):
        row = np.array([0.2, 0.3, 0.5])
        m = CallableModel(3, 2, lambda x, a, mu, mt: row, lambda x, a, mu, mt: 0.0, 0.5, 1.0, 1.0)
        rng = np.random.default_rng(3)
        for _ in range(20):
            nu = random_simplex(rng, 3)
            pi = rng.dirichlet(np.ones(2), size=3)
            np.testing.assert_allclose(apply_kernel(model=m, nu=nu, pi=pi, mu=nu, mu_tilde=nu),
                                       row, atol=1e-15)

    def test_invalid_kernel_is_contract_error(self):
        m = CallableModel(2, 1, lambda x, a, mu, mt: np.array([0.7, 0.7]),
                          lambda x, a, mu, mt: 0.0, 0.5, 1.0, 1.0)
        with pytest.raises(ModelContractError):
            apply_kernel(m, [0.5, 0.5], [[1.0], [1.0]], [0.5, 0.5], [0.5, 0.5])

    def test_modified_kernel_reference(self, model):
        pi = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = apply_modified_kernel(model, [0.5, 0.5], pi, 0, STAY, [0.1, 0.9], [0.5, 0.5])
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)

    def test_modified_kernel_point_mass(self):
        rng = np.random.default_rng(4)
        m = random_affine_model(rng)
        mu, mt = random_simplex(rng, 3), random_simplex(rng, 3)
        pi = rng.dirichlet(np.ones(2), size=3)
        for x in range(3):
            for a in range(2):
                nu = np.eye(3)[x]
                np.testing.assert_allclose(apply_modified_kernel(m, nu, pi, x, a, mu, mt),
                                           m.kernel(x, a, mu, mt), atol=1e-14)

    def test_modified_equals_substituted(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            m = random_affine_model(rng)
            nu, mu, mt = (random_simplex(rng, 3) for _ in range(3))
            pi = rng.dirichlet(np.ones(2), size=3)
            x, a = int(rng.integers(3)), int(rng.integers(2))
            np.testing.assert_array_equal(apply_modified_kernel(m, nu, pi, x, a, mu, mt),
                                          apply_kernel(m, nu, substitute_policy(pi, x, a), mu, mt))


class TestAffineModel:
    def test_rejects_bad_row_sum(self):
        K = np.full((2, 1, 2), 0.5)
        K[1, 0] = [0.5, 0.49]
        with pytest.raises(InvalidInputError, match=r"x=1, a=0"):
            AffineModel(K, np.zeros((2, 1)), 0.5, 1.0)

    def test_rejects_kernel_invalid_only_at_a_vertex(self):
        K0 = np.full((2, 1, 2), 0.5)
        Kg = np.zeros((2, 1, 2, 2))
        Kg[0, 0, :, 1] = [0.6, -0.6]  # row (0, 0) leaves the simplex at mu = e_1
        with pytest.raises(InvalidInputError):
            AffineModel(K0, np.zeros((2, 1)), 0.5, 1.0, kernel_glob=Kg)

    def test_declared_bound_below_attained_rejected(self):
        with pytest.raises(InvalidInputError):
            AffineModel(np.full((2, 1, 2), 0.5), np.ones((2, 1)) * 3, 0.5, 1.0, cost_bound=1.0)

    def test_batched_matches_pointwise(self):
        rng = np.random.default_rng(6)
        m = random_affine_model(rng)
        mu = random_simplex(rng, 3)
        fam = random_simplex(rng, 3, size=(3, 2))
        K_all = m.transition_at_locals(mu, fam)
        C = m.cost_at_locals(mu, fam)
        for x in range(3):
            for a in range(2):
                np.testing.assert_allclose(K_all[x, a], m.transition_matrix(mu, fam[x, a]),
                                           atol=1e-15)
                assert C[x, a] == pytest.approx(m.cost(x, a, mu, fam[x, a]), abs=1e-14)

    def test_exact_lipschitz_is_attained_and_not_exceeded(self):
        rng = np.random.default_rng(7)
        m = random_affine_model(rng)
        lip = m.exact_lipschitz()
        worst = 0.0
        for _ in range(2000):
            u, v, w = (random_simplex(rng, 3) for _ in range(3))
            d = np.abs(u - v).sum()
            r = np.abs(m.transition_matrix(u, w) - m.transition_matrix(v, w)).sum(-1).max() / d
            worst = max(worst, r)
        assert worst <= lip.p_glob + 1e-12
        eye = np.eye(3)
        vert = max(np.abs(m.transition_matrix(eye[i], eye[0]) - m.transition_matrix(eye[j], eye[0]))
                   .sum(-1).max() / 2 for i in range(3) for j in range(3))
        assert vert == pytest.approx(lip.p_glob, abs=1e-12)

    def test_lipschitz_constants_validated(self):
        with pytest.raises(InvalidInputError):
            LipschitzConstants(-1.0, 0.0, 0.0, 0.0)

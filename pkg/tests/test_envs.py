import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SWEEP, random_simplex, stationary_eig
from mfcgq.core import apply_kernel, pure_to_stochastic, softmin
from mfcgq.envs import (MOVE, STAY, DenseModelSpec, TwoStateParams, build_two_state,
                        load_dense_model, two_state_exact, two_state_gap,
                        two_state_global_gase, two_state_local_equilibria, two_state_q_gase)
from mfcgq.exceptions import ConfigError, InvalidInputError, UnsupportedRegimeError
from mfcgq.ideal import (solve_global_gase, solve_local_gase, solve_mus_system, solve_q_gase)

PURE = [np.array(a) for a in ([0, 0], [0, 1], [1, 0], [1, 1])]


def pure(alpha):
    return pure_to_stochastic(np.array(alpha), 2)


class TestTwoStateModel:
    def test_kernel_examples(self, model, params):
        mu = np.array([0.3, 0.7])
        assert model.kernel(0, MOVE, mu, mu)[1] == pytest.approx(1 - params.p)
        assert model.kernel(0, STAY, mu, mu)[0] == pytest.approx(1 - params.p)
        assert model.kernel(1, MOVE, mu, mu)[0] == pytest.approx(1 - params.p)
        np.testing.assert_allclose(model.transition_matrix(mu, mu).sum(-1), 1.0, atol=1e-15)

    def test_cost(self, model, params):
        e0 = np.array([1.0, 0.0])
        for a in (STAY, MOVE):
            assert model.cost(1, a, e0, e0) == pytest.approx(1 + params.c_g + params.c_l)
        assert model.cost(0, STAY, [0.2, 0.8], [0.4, 0.6]) == pytest.approx(5 * 0.2 + 5 * 0.4)

    def test_declared_constants(self, model):
        lip = model.lipschitz
        assert (lip.p_glob, lip.p_loc, lip.f_glob, lip.f_loc) == (0.0, 0.0, 2.5, 2.5)
        assert model.cost_bound == 11.0
        ex = model.exact_lipschitz()
        assert ex.f_glob == pytest.approx(2.5) and ex.f_loc == pytest.approx(2.5)

    def test_invalid_params(self):
        for kw in (dict(p=0.5), dict(p=0.0), dict(c_g=0.0), dict(gamma=1.0), dict(phi=-1.0)):
            with pytest.raises(InvalidInputError):
                TwoStateParams(**kw)
        with pytest.raises(InvalidInputError):
            build_two_state(TwoStateParams(), p=0.2)


class TestExact:
    def test_reference_values(self, params):
        ex = two_state_exact(params)
        np.testing.assert_allclose(ex.q_star, [[4.5, 2.9], [3.9, 5.5]], atol=1e-12)
        np.testing.assert_array_equal(ex.mu_star, [0.1, 0.9])
        np.testing.assert_array_equal(ex.alpha_star, [MOVE, STAY])

    @pytest.mark.parametrize("prm", SWEEP)
    def test_shift_identities(self, prm):
        q = two_state_exact(prm).q_star
        assert q[1, STAY] - q[0, MOVE] == pytest.approx(1.0, abs=1e-12)
        assert q[1, MOVE] - q[0, STAY] == pytest.approx(1.0, abs=1e-12)
        assert q[0, STAY] - q[0, MOVE] == pytest.approx(two_state_gap(prm), abs=1e-12)

    def test_gap(self, params):
        assert two_state_gap(params) == pytest.approx(1.6)

    def test_regime_guard(self):
        with pytest.raises(UnsupportedRegimeError):
            two_state_exact(TwoStateParams(c_l=0.9, gamma=0.5))

    def test_q_star_is_bellman_fixed_point(self, params, model):
        from mfcgq.operators import t3
        ex = two_state_exact(params)
        np.testing.assert_allclose(t3(model, ex.mu_star, ex.q_star, ex.locals_star), 0,
                                   atol=1e-12)


class TestLocalEquilibria:
    def test_pure_examples(self, params):
        fam = two_state_local_equilibria(params, pure([MOVE, STAY]))
        assert fam[0, STAY, 1] == pytest.approx(0.5)
        assert fam[1, STAY, 1] == pytest.approx(0.9)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.02, 0.48), st.floats(0, 1), st.floats(0, 1))
    def test_matches_eigenvector_oracle(self, p, s0, s1):
        prm = TwoStateParams(p=p)
        pi = np.array([[s0, 1 - s0], [s1, 1 - s1]])
        fam = two_state_local_equilibria(prm, pi)
        K = build_two_state(prm).K0
        for x in range(2):
            for a in range(2):
                w = pi.copy()
                w[x] = np.eye(2)[a]
                P = np.einsum("za,zay->zy", w, K)
                np.testing.assert_allclose(fam[x, a], stationary_eig(P), atol=1e-10)

    @pytest.mark.parametrize("prm", SWEEP[:6])
    def test_matches_generic_solver(self, prm):
        m = build_two_state(prm)
        q = np.array([[1.0, 0.7], [0.2, 0.9]])
        fam = two_state_local_equilibria(prm, softmin(q, prm.phi))
        for x in range(2):
            for a in range(2):
                np.testing.assert_allclose(solve_local_gase(m, [0.5, 0.5], q, x, a), fam[x, a],
                                           atol=1e-8)


class TestQGase:
    @pytest.mark.parametrize("mu", [(0.1, 0.9), (0.5, 0.5)])
    def test_matches_generic_solver(self, params, model, mu):
        np.testing.assert_allclose(two_state_q_gase(params, mu), solve_q_gase(model, mu),
                                   atol=1e-6)

    @given(st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=30, deadline=None)
    def test_global_shift(self, a, b):
        prm = TwoStateParams()
        d = two_state_q_gase(prm, [a, 1 - a]) - two_state_q_gase(prm, [b, 1 - b])
        np.testing.assert_allclose(d, prm.c_g * (a - b) / (1 - prm.gamma), atol=1e-10)

    def test_large_phi_limit(self, params):
        q = two_state_q_gase(params, [0.1, 0.9])
        np.testing.assert_allclose(q, two_state_exact(params).q_star, atol=1e-12)


class TestGlobalGase:
    def test_reference(self, params):
        np.testing.assert_allclose(two_state_global_gase(params), [0.1, 0.9], atol=1e-3)

    def test_pure_input(self, params):
        np.testing.assert_allclose(two_state_global_gase(params, pure([MOVE, STAY])), [0.1, 0.9],
                                   atol=1e-15)

    def test_matches_generic_solver(self, params, model):
        sol = solve_global_gase(model)
        np.testing.assert_allclose(sol.mu_star_phi, two_state_global_gase(params), atol=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.02, 0.48), st.floats(0, 1), st.floats(0, 1))
    def test_matches_eigenvector(self, p, s0, s1):
        prm = TwoStateParams(p=p)
        pi = np.array([[s0, 1 - s0], [s1, 1 - s1]])
        P = np.einsum("za,zay->zy", pi, build_two_state(prm).K0)
        np.testing.assert_allclose(two_state_global_gase(prm, pi), stationary_eig(P), atol=1e-10)


class TestPurePolicyStationary:
    @pytest.mark.parametrize("alpha, want", [((STAY, STAY), (0.5, 0.5)),
                                             ((STAY, MOVE), (0.9, 0.1)),
                                             ((MOVE, STAY), (0.1, 0.9)),
                                             ((MOVE, MOVE), (0.5, 0.5))])
    def test_stationary_list(self, model, alpha, want):
        mu, _ = solve_mus_system(model, np.array(alpha))
        np.testing.assert_allclose(mu, want, atol=1e-9)


class TestDenseSpec:
    def test_cross_evaluation(self, model):
        dense = load_dense_model(DenseModelSpec.from_model(model).to_dict())
        rng = np.random.default_rng(5)
        for _ in range(1000):
            mu, mt = random_simplex(rng, 2), random_simplex(rng, 2)
            x, a = rng.integers(2), rng.integers(2)
            np.testing.assert_allclose(dense.kernel(x, a, mu, mt), model.kernel(x, a, mu, mt),
                                       atol=1e-14)
            assert dense.cost(x, a, mu, mt) == pytest.approx(model.cost(x, a, mu, mt), abs=1e-12)

    def test_identity_kernel(self):
        K = np.stack([np.eye(3), np.eye(3)], axis=1)
        m = load_dense_model({"kernel": K.tolist(), "cost": np.zeros((3, 2)).tolist(),
                              "gamma": 0.5, "phi": 1.0})
        rng = np.random.default_rng(0)
        for _ in range(20):
            nu = random_simplex(rng, 3)
            pi = random_simplex(rng, 2, size=3)
            np.testing.assert_allclose(apply_kernel(m, nu, pi, nu, nu), nu, atol=1e-15)

    def test_bad_row_named(self):
        K = np.full((2, 2, 2), 0.5)
        K[1, 0] = [0.5, 0.49]
        with pytest.raises(ConfigError, match=r"x=1, a=0"):
            load_dense_model({"kernel": K.tolist(), "cost": [[0, 0], [0, 0]], "gamma": 0.5,
                              "phi": 1.0})

    def test_field_diagnostics(self):
        with pytest.raises(ConfigError, match=r"model\.gamma"):
            load_dense_model({"kernel": [[[1.0]]], "cost": [[0.0]], "phi": 1.0})
        with pytest.raises(ConfigError, match="unknown"):
            load_dense_model({"kernel": [[[1.0]]], "cost": [[0.0]], "gamma": 0.5, "phi": 1.0,
                              "extra": 1})
        with pytest.raises(ConfigError, match="dims"):
            load_dense_model({"dims": {"n_states": 2, "n_actions": 1}, "kernel": [[[1.0]]],
                              "cost": [[0.0]], "gamma": 0.5, "phi": 1.0})

    def test_yaml_file(self, tmp_path, model):
        path = tmp_path / "model.yaml"
        path.write_text(yaml.safe_dump(DenseModelSpec.from_model(model).to_dict()))
        dense = load_dense_model(path)
        np.testing.assert_array_equal(dense.K0, model.K0)
        assert dense.lipschitz == model.lipschitz

    def test_round_trip(self, model):
        d = DenseModelSpec.from_model(model).to_dict()
        assert DenseModelSpec.from_dict(d).to_dict() == d

import itertools

import numpy as np
import pytest

from mfcgq.core import AffineModel
from mfcgq.envs import TwoStateParams, build_two_state

# 18-point sweep used by the oracle-equivalence checks
SWEEP = [TwoStateParams(p=p, c_g=5.0, c_l=c_l, gamma=g, phi=500.0)
         for p, c_l, g in itertools.product((0.05, 0.1, 0.2), (2.0, 5.0, 8.0), (0.3, 0.5))]


@pytest.fixture
def params():
    return TwoStateParams(p=0.1, c_g=5.0, c_l=5.0, gamma=0.5, phi=500.0)


@pytest.fixture
def model(params):
    return build_two_state(params)


def random_simplex(rng, n, size=None):
    return rng.dirichlet(np.ones(n), size=size)


def random_kernel(rng, X, A):
    return rng.dirichlet(np.ones(X), size=(X, A))


def random_affine_model(rng, X=3, A=2, phi=None, gamma=None, weights=None, dist_free=False):
    """Random model affine in (mu, mu_tilde).

    The kernel mixes a constant kernel with kernels selected by the
    distribution vertices: ``K = w0 R0 + wg sum_z mu_z Rg_z + wl sum_z m_z Rl_z``
    with ``w0 + wg + wl = 1``, so every row is a distribution everywhere.
    """
    if weights is None:
        weights = rng.dirichlet(np.ones(3))
    if dist_free:
        weights = np.array([1.0, 0.0, 0.0])
    w0, wg, wl = weights
    K0 = w0 * random_kernel(rng, X, A)
    Kg = wg * np.stack([random_kernel(rng, X, A) for _ in range(X)], axis=-1)
    Kl = wl * np.stack([random_kernel(rng, X, A) for _ in range(X)], axis=-1)
    C0 = rng.uniform(-1, 1, size=(X, A))
    Cg = rng.uniform(-1, 1, size=(X, A, X)) * (0 if dist_free else 1)
    Cl = rng.uniform(-1, 1, size=(X, A, X)) * (0 if dist_free else 1)
    phi = rng.uniform(0.1, 20.0) if phi is None else phi
    gamma = rng.uniform(0.1, 0.9) if gamma is None else gamma
    return AffineModel(K0, C0, gamma, phi, kernel_glob=Kg, kernel_loc=Kl, cost_glob=Cg,
                       cost_loc=Cl)


def point_mass_model(X=3, A=2, target=1, gamma=0.6, phi=3.0, seed=0):
    """Constant deterministic kernel sending everything to ``target``; costs depend on both
    distributions so the learners still have something to track."""
    rng = np.random.default_rng(seed)
    K0 = np.zeros((X, A, X))
    K0[:, :, target] = 1.0
    return AffineModel(K0, rng.uniform(0, 1, (X, A)), gamma, phi,
                       cost_glob=rng.uniform(0, 1, (X, A, X)),
                       cost_loc=rng.uniform(0, 1, (X, A, X)))


def stationary_eig(P):
    """Left Perron vector of a row-stochastic matrix via a dense eigensolve."""
    w, v = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    vec = np.real(v[:, k])
    return vec / vec.sum()


def value_iteration_oracle(K, C, gamma, tol=1e-13):
    """Plain tabular value iteration written with explicit loops."""
    X, A = C.shape
    V = [0.0] * X
    while True:
        Q = [[C[x, a] + gamma * sum(K[x, a, y] * V[y] for y in range(X)) for a in range(A)]
             for x in range(X)]
        newV = [min(row) for row in Q]
        if max(abs(newV[i] - V[i]) for i in range(X)) < tol:
            return np.array(Q)
        V = newV

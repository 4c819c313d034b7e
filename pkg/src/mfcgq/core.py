"""Domain types and elementary policy/kernel operations.

A model is evaluated through two batched callbacks: ``transition_matrix``
returns the full ``(n_states, n_actions, n_states)`` kernel ``p(y|x,a,mu,mu_tilde)``
at one pair of distributions, and ``cost_matrix`` returns the
``(n_states, n_actions)`` running cost. Everything else in the package is
written against that contract, so kernels that depend continuously on the
global and local distributions are representable.
"""

import abc
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError, ModelContractError
from .validation import (NEG_TOL, SUM_TOL, check_index, check_policy, check_q_table,
                         check_simplex, normalize)


@dataclass(frozen=True)
class SpaceDims:
    n_states: int
    n_actions: int

    def __post_init__(self):
        for name in ("n_states", "n_actions"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class LipschitzConstants:
    """Lipschitz constants of kernel and cost w.r.t. the L1 norm on distributions."""

    p_glob: float
    p_loc: float
    f_glob: float
    f_loc: float

    def __post_init__(self):
        for name in ("p_glob", "p_loc", "f_glob", "f_loc"):
            if not getattr(self, name) >= 0:
                raise InvalidInputError(f"Lipschitz constant {name} must be nonnegative")


class MeanFieldModel(abc.ABC):
    """Kernel ``p(.|x, a, mu, mu_tilde)`` and cost ``f(x, a, mu, mu_tilde)``.

    Parameters
    ----------
    n_states, n_actions : int
        Sizes of the finite state and action spaces.
    gamma : float
        Discount factor in (0, 1).
    phi : float
        Softmin inverse temperature, > 0.
    cost_bound : float
        Declared bound on ``|f|``.
    lipschitz : LipschitzConstants, optional
        Analytic constants, when the environment knows them.
    """

    #: True when the kernel ignores both distributions.
    distribution_free = False

    def __init__(self, n_states, n_actions, gamma, phi, cost_bound, lipschitz=None):
        self.dims = SpaceDims(int(n_states), int(n_actions))
        if not 0.0 < gamma < 1.0:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {gamma}")
        if not phi > 0.0 or not np.isfinite(phi):
            raise InvalidInputError(f"phi must be a positive finite number, got {phi}")
        if not cost_bound >= 0.0:
            raise InvalidInputError(f"cost_bound must be nonnegative, got {cost_bound}")
        self.gamma = float(gamma)
        self.phi = float(phi)
        self.cost_bound = float(cost_bound)
        self.lipschitz = lipschitz

    @property
    def n_states(self):
        return self.dims.n_states

    @property
    def n_actions(self):
        return self.dims.n_actions

    @abc.abstractmethod
    def transition_matrix(self, mu, mu_tilde):
        """Return ``K[x, a, y] = p(y | x, a, mu, mu_tilde)``."""

    @abc.abstractmethod
    def cost_matrix(self, mu, mu_tilde):
        """Return ``C[x, a] = f(x, a, mu, mu_tilde)``."""

    def kernel(self, x, a, mu, mu_tilde):
        return self.transition_matrix(mu, mu_tilde)[x, a]

    def cost(self, x, a, mu, mu_tilde):
        return float(self.cost_matrix(mu, mu_tilde)[x, a])

    def transition_at_locals(self, mu, locals_):
        """Kernel evaluated once per local distribution: shape ``(X, A, X, A, X)``.

        Entry ``[x, a]`` is the whole kernel at ``(mu, locals_[x, a])``.
        """
        X, A = self.n_states, self.n_actions
        if self.distribution_free:
            return np.broadcast_to(self.transition_matrix(mu, locals_[0, 0]), (X, A, X, A, X))
        out = np.empty((X, A, X, A, X))
        for x in range(X):
            for a in range(A):
                out[x, a] = self.transition_matrix(mu, locals_[x, a])
        return out

    def cost_at_locals(self, mu, locals_):
        """``C[x, a] = f(x, a, mu, locals_[x, a])``."""
        X, A = self.n_states, self.n_actions
        out = np.empty((X, A))
        for x in range(X):
            for a in range(A):
                out[x, a] = self.cost_matrix(mu, locals_[x, a])[x, a]
        return out

    def affine_coefficients(self):
        """Return the affine coefficient tensors, or None for general models.

        Models whose kernel and cost are affine in ``(mu, mu_tilde)`` return a
        dict with keys ``kernel_const, kernel_glob, kernel_loc, cost_const,
        cost_glob, cost_loc``; the compiled run loops use it.
        """
        return None


class CallableModel(MeanFieldModel):
    """Model built from pointwise callables ``kernel(x, a, mu, mu_tilde)`` and ``cost(...)``."""

    def __init__(self, n_states, n_actions, kernel, cost, gamma, phi, cost_bound,
                 lipschitz=None, distribution_free=False):
        super().__init__(n_states, n_actions, gamma, phi, cost_bound, lipschitz)
        self._kernel = kernel
        self._cost = cost
        self.distribution_free = bool(distribution_free)

    def transition_matrix(self, mu, mu_tilde):
        X, A = self.n_states, self.n_actions
        out = np.empty((X, A, X))
        for x in range(X):
            for a in range(A):
                out[x, a] = self._kernel(x, a, mu, mu_tilde)
        return out

    def cost_matrix(self, mu, mu_tilde):
        X, A = self.n_states, self.n_actions
        out = np.empty((X, A))
        for x in range(X):
            for a in range(A):
                out[x, a] = self._cost(x, a, mu, mu_tilde)
        return out

    def kernel(self, x, a, mu, mu_tilde):
        return np.asarray(self._kernel(x, a, mu, mu_tilde), dtype=float)

    def cost(self, x, a, mu, mu_tilde):
        return float(self._cost(x, a, mu, mu_tilde))


class AffineModel(MeanFieldModel):
    """Dense model whose kernel and cost are affine in ``(mu, mu_tilde)``.

    ``p(y|x,a,mu,nu) = K0[x,a,y] + sum_z Kg[x,a,y,z] mu[z] + sum_z Kl[x,a,y,z] nu[z]``
    and ``f(x,a,mu,nu) = C0[x,a] + Cg[x,a,:] @ mu + Cl[x,a,:] @ nu``.

    Since both maps are affine on a product of simplices, every validity
    check reduces to the vertex pairs ``(delta_i, delta_j)``.
    """

    def __init__(self, kernel_const, cost_const, gamma, phi, kernel_glob=None, kernel_loc=None,
                 cost_glob=None, cost_loc=None, cost_bound=None, lipschitz=None):
        K0 = np.asarray(kernel_const, dtype=float)
        if K0.ndim != 3 or K0.shape[0] != K0.shape[2]:
            raise InvalidInputError(f"kernel constant term must have shape (X, A, X), got {K0.shape}")
        X, A = K0.shape[:2]
        zk = np.zeros((X, A, X, X))
        zc = np.zeros((X, A, X))
        self.K0 = K0
        self.Kg = zk if kernel_glob is None else np.asarray(kernel_glob, dtype=float)
        self.Kl = zk.copy() if kernel_loc is None else np.asarray(kernel_loc, dtype=float)
        self.C0 = np.asarray(cost_const, dtype=float)
        self.Cg = zc if cost_glob is None else np.asarray(cost_glob, dtype=float)
        self.Cl = zc.copy() if cost_loc is None else np.asarray(cost_loc, dtype=float)
        shapes = {"kernel global term": (self.Kg, (X, A, X, X)),
                  "kernel local term": (self.Kl, (X, A, X, X)),
                  "cost constant term": (self.C0, (X, A)),
                  "cost global term": (self.Cg, (X, A, X)),
                  "cost local term": (self.Cl, (X, A, X))}
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise InvalidInputError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite entries")
        self._check_vertices()
        vert_costs = (self.C0[:, :, None, None] + self.Cg[:, :, :, None] + self.Cl[:, :, None, :])
        exact_bound = float(np.abs(vert_costs).max())
        if cost_bound is None:
            cost_bound = exact_bound
        elif cost_bound < exact_bound - 1e-12:
            raise InvalidInputError(
                f"declared cost_bound {cost_bound} is below the attained |f| maximum {exact_bound}")
        super().__init__(X, A, gamma, phi, cost_bound, lipschitz)
        self.distribution_free = not (np.any(self.Kg) or np.any(self.Kl))

    def _check_vertices(self):
        # rows at (delta_i, delta_j): K0 + Kg[..., i] + Kl[..., j]
        vert = self.K0[..., None, None] + self.Kg[..., :, None] + self.Kl[..., None, :]
        X, A = self.K0.shape[:2]
        for x in range(X):
            for a in range(A):
                rows = vert[x, a]
                if np.any(rows < -NEG_TOL):
                    raise InvalidInputError(f"kernel row (x={x}, a={a}) has negative probabilities")
                sums = rows.sum(axis=0)
                worst = float(sums.flat[np.argmax(np.abs(sums - 1.0))])
                if abs(worst - 1.0) > SUM_TOL:
                    raise InvalidInputError(f"kernel row (x={x}, a={a}) sums to {worst:.12g}, expected 1")

    def transition_matrix(self, mu, mu_tilde):
        return self.K0 + self.Kg @ mu + self.Kl @ mu_tilde

    def cost_matrix(self, mu, mu_tilde):
        return self.C0 + self.Cg @ mu + self.Cl @ mu_tilde

    def transition_at_locals(self, mu, locals_):
        X, A = self.n_states, self.n_actions
        base = self.K0 + self.Kg @ mu
        if not np.any(self.Kl):
            return np.broadcast_to(base, (X, A, X, A, X))
        return base + np.einsum("bcyz,xaz->xabcy", self.Kl, locals_)

    def cost_at_locals(self, mu, locals_):
        return self.C0 + self.Cg @ mu + np.einsum("xaz,xaz->xa", self.Cl, locals_)

    def affine_coefficients(self):
        return {"kernel_const": self.K0, "kernel_glob": self.Kg, "kernel_loc": self.Kl,
                "cost_const": self.C0, "cost_glob": self.Cg, "cost_loc": self.Cl}

    def exact_lipschitz(self):
        """Exact L1 Lipschitz constants; extreme directions are ``(e_i - e_j) / 2``."""
        def kernel_const(T):
            diff = T[..., :, None] - T[..., None, :]          # (X, A, Y, Z, Z)
            return 0.5 * float(np.abs(diff).sum(axis=2).max())

        def cost_const(C):
            diff = C[..., :, None] - C[..., None, :]
            return 0.5 * float(np.abs(diff).max())

        return LipschitzConstants(kernel_const(self.Kg), kernel_const(self.Kl),
                                  cost_const(self.Cg), cost_const(self.Cl))


def checked_kernel(K, what="kernel"):
    """Validate a kernel tensor returned by a model (last axis = next state)."""
    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)) or np.any(K < -NEG_TOL):
        raise ModelContractError(f"{what} has negative or non-finite probabilities")
    if np.any(np.abs(K.sum(axis=-1) - 1.0) > SUM_TOL):
        raise ModelContractError(f"{what} rows do not sum to one")
    return K


def checked_cost(C, what="cost"):
    C = np.asarray(C, dtype=float)
    if not np.all(np.isfinite(C)):
        raise ModelContractError(f"{what} has non-finite values")
    return C


def softmin(values, phi):
    """Softmin along the last axis, shifted by the row minimum for stability."""
    z = np.asarray(values, dtype=float)
    w = np.exp(-phi * (z - z.min(axis=-1, keepdims=True)))
    return w / w.sum(axis=-1, keepdims=True)


def softmin_policy_row(q_row, phi):
    """Boltzmann distribution ``exp(-phi q_i) / sum_j exp(-phi q_j)``.

    Examples
    --------
    >>> softmin_policy_row([1.0, 1.0], 3.0)
    array([0.5, 0.5])
    """
    q_row = np.asarray(q_row, dtype=float)
    if q_row.ndim != 1 or not np.all(np.isfinite(q_row)):
        raise InvalidInputError("q_row must be a finite 1-D vector")
    if not phi > 0 or not np.isfinite(phi):
        raise InvalidInputError(f"phi must be positive and finite, got {phi}")
    return softmin(q_row, phi)


def softmin_policy(q, phi):
    """Row-wise softmin of a Q-table; the behaviour policy of every learner."""
    q = check_q_table(q)
    if not phi > 0 or not np.isfinite(phi):
        raise InvalidInputError(f"phi must be positive and finite, got {phi}")
    return softmin(q, phi)


def argmin_policy(q):
    """Greedy pure policy; ties go to the lowest action index."""
    q = check_q_table(q)
    return np.argmin(q, axis=1).astype(np.int64)


def substitute_policy(pi, x, a):
    """Copy of ``pi`` whose row ``x`` is the point mass on action ``a``."""
    pi = check_policy(pi)
    X, A = pi.shape
    x = check_index(x, X, "x")
    a = check_index(a, A, "a")
    out = pi.copy()
    out[x] = 0.0
    out[x, a] = 1.0
    return out


def pure_to_stochastic(alpha, n_actions):
    alpha = np.asarray(alpha, dtype=np.int64)
    out = np.zeros((alpha.shape[0], n_actions))
    out[np.arange(alpha.shape[0]), alpha] = 1.0
    return out


def _propagate(nu, pi, K):
    """``sum_x nu[x] sum_a pi[x, a] K[x, a, :]``, renormalised."""
    return normalize(np.einsum("x,xa,xay->y", nu, pi, K))


def apply_kernel(model, nu, pi, mu, mu_tilde):
    """One step of the population flow: ``nu P^{pi, mu, mu_tilde}``."""
    X, A = model.n_states, model.n_actions
    nu = check_simplex(nu, X, "nu")
    pi = check_policy(pi, X, A)
    mu = check_simplex(mu, X, "mu")
    mu_tilde = check_simplex(mu_tilde, X, "mu_tilde")
    K = checked_kernel(model.transition_matrix(mu, mu_tilde))
    return _propagate(nu, pi, K)


def apply_modified_kernel(model, nu, pi, x, a, mu, mu_tilde):
    """Like :func:`apply_kernel` but the action at state ``x`` is frozen to ``a``."""
    X, A = model.n_states, model.n_actions
    x = check_index(x, X, "x")
    a = check_index(a, A, "a")
    nu = check_simplex(nu, X, "nu")
    pi = check_policy(pi, X, A)
    mu = check_simplex(mu, X, "mu")
    mu_tilde = check_simplex(mu_tilde, X, "mu_tilde")
    K = checked_kernel(model.transition_matrix(mu, mu_tilde))
    frozen = pi.copy()
    frozen[x] = 0.0
    frozen[x, a] = 1.0
    return _propagate(nu, frozen, K)


def frozen_policies(pi):
    """All substituted policies at once: ``out[x, a]`` equals ``substitute_policy(pi, x, a)``."""
    X, A = pi.shape
    out = np.broadcast_to(pi, (X, A, X, A)).copy()
    idx_x = np.arange(X)
    out[idx_x, :, idx_x, :] = np.eye(A)
    return out


def own_rows(K_at_locals):
    """Diagonal ``K[x, a, x, a, :]`` of a per-local kernel stack: shape ``(X, A, X)``."""
    X, A = K_at_locals.shape[:2]
    ix = np.arange(X)[:, None]
    ia = np.arange(A)[None, :]
    return K_at_locals[ix, ia, ix, ia]

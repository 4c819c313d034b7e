"""scikit-learn style wrappers.

``fit`` takes a :class:`~mfcgq.core.MeanFieldModel` in place of a data
matrix; ``predict`` maps state indices to greedy actions.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .core import MeanFieldModel, argmin_policy, softmin
from .exceptions import InvalidInputError
from .schedules import RateExponents

ALGORITHMS = ("ideal", "sync", "async")


def _check_model(model):
    if not isinstance(model, MeanFieldModel):
        raise InvalidInputError(f"expected a MeanFieldModel, got {type(model).__name__}")
    return model


def _check_states(states, n_states):
    arr = np.asarray(states)
    if arr.ndim == 0:
        arr = arr[None]
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise InvalidInputError("states must be a 1-D array of integer indices")
    if np.any(arr < 0) or np.any(arr >= n_states):
        raise InvalidInputError(f"state indices must lie in [0, {n_states})")
    return arr


class _PolicyMixin:
    def predict(self, states):
        """Greedy action for each state (lowest index on ties)."""
        check_is_fitted(self, "q_")
        return self.policy_[_check_states(states, self.q_.shape[0])]

    def predict_proba(self, states):
        """Softmin action probabilities at the model temperature."""
        check_is_fitted(self, "q_")
        return softmin(self.q_, self.phi_)[_check_states(states, self.q_.shape[0])]


class MFCGQLearner(_PolicyMixin, BaseEstimator):
    """Three-timescale Q-learning.

    Parameters
    ----------
    algorithm : {"ideal", "sync", "async"}
        Deterministic iteration, synchronous sampled variant, or the
        path-driven asynchronous learner.
    n_steps : int
    omega_mu_tilde, omega_q, omega_mu : float
        Rate exponents, fastest to slowest.
    random_state : int, RandomState or None
        Seed for the sampled variants.
    trace_every : int
        Trajectory cadence; the trajectory is stored in ``trajectory_``.
    backend : {"auto", "numpy", "numba"}

    Attributes
    ----------
    q_ : ndarray of shape (n_states, n_actions)
    mu_ : ndarray of shape (n_states,)
    locals_ : ndarray of shape (n_states, n_actions, n_states)
    policy_ : ndarray of shape (n_states,)
    trajectory_ : list of TraceRow
    """

    def __init__(self, algorithm="async", n_steps=100_000, omega_mu_tilde=0.55, omega_q=0.75,
                 omega_mu=0.95, random_state=0, trace_every=1000, backend="auto"):
        self.algorithm = algorithm
        self.n_steps = n_steps
        self.omega_mu_tilde = omega_mu_tilde
        self.omega_q = omega_q
        self.omega_mu = omega_mu
        self.random_state = random_state
        self.trace_every = trace_every
        self.backend = backend

    def _seed(self):
        if isinstance(self.random_state, (int, np.integer)) and not isinstance(self.random_state,
                                                                                bool):
            return int(self.random_state)
        return int(check_random_state(self.random_state).randint(0, 2 ** 31 - 1))

    def fit(self, model, y=None):
        from .asynchronous import run_async
        from .ideal import run_ideal
        from .sync import run_sync

        model = _check_model(model)
        if self.algorithm not in ALGORITHMS:
            raise InvalidInputError(f"algorithm must be one of {ALGORITHMS}")
        exps = RateExponents(self.omega_mu_tilde, self.omega_q, self.omega_mu)
        kw = dict(trace_every=self.trace_every, backend=self.backend)
        if self.algorithm == "ideal":
            state, traj = run_ideal(model, exps, self.n_steps, **kw)
        elif self.algorithm == "sync":
            state, traj, self.martingale_ = run_sync(model, exps, self.n_steps, self._seed(), **kw)
        else:
            state, traj = run_async(model, exps, self.n_steps, self._seed(), **kw)
            self.visits_ = state.visits
            self.gate_fraction_ = state.gate_fraction
        self.q_ = state.q
        self.mu_ = state.mu
        self.locals_ = state.locals
        self.policy_ = argmin_policy(state.q)
        self.phi_ = model.phi
        self.trajectory_ = traj
        return self


class FixedPointMFCGSolver(_PolicyMixin, BaseEstimator):
    """Exact solution by nested fixed-point iteration and extraction.

    Attributes
    ----------
    solution_ : SolutionTriple
    q_ : ndarray
        The pure-policy Q-table ``Q*``.
    mu_ : ndarray
    policy_ : ndarray
    """

    def __init__(self, tol=1e-10, max_iter=100_000):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, model, y=None):
        from .ideal import solve_exact

        model = _check_model(model)
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        self.solution_ = solve_exact(model, self.tol, self.max_iter)
        self.q_ = self.solution_.q_star
        self.mu_ = self.solution_.mu_star
        self.locals_ = self.solution_.locals_star
        self.policy_ = self.solution_.alpha_star
        self.phi_ = model.phi
        return self

"""Idealized three-timescale iteration and exact fixed-point oracles."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (argmin_policy, checked_cost, checked_kernel, frozen_policies, own_rows,
                   pure_to_stochastic, softmin)
from .exceptions import DegenerateGapError, IterationLimitError, InvalidInputError
from .operators import bellman_apply
from .schedules import rate_deterministic, validate_exponents
from .validation import (as_local_family, check_index, check_local_family, check_pure_policy,
                         check_q_table, check_simplex, normalize, uniform)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000


@dataclass
class IdealState:
    """Iterate ``(mu_n, Q_n, locals_n)`` at step ``n``."""

    mu: np.ndarray
    q: np.ndarray
    locals: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, model):
        X, A = model.n_states, model.n_actions
        return cls(uniform(X), np.zeros((X, A)), np.full((X, A, X), 1.0 / X), 0)

    def validate(self, model):
        X, A = model.n_states, model.n_actions
        return IdealState(check_simplex(self.mu, X, "mu"), check_q_table(self.q, X, A),
                          check_local_family(self.locals, X, A), int(self.step))

    def copy(self):
        return IdealState(self.mu.copy(), self.q.copy(), self.locals.copy(), self.step)


@dataclass(frozen=True)
class TraceRow:
    step: int
    mu: np.ndarray
    q: np.ndarray
    locals: np.ndarray
    visit_fraction: Optional[np.ndarray] = None


@dataclass
class SolutionTriple:
    """Softmin-level fixed point and, once extracted, the pure-policy solution."""

    mu_star_phi: np.ndarray
    q_star_phi: np.ndarray
    locals_star_phi: np.ndarray
    alpha_star: Optional[np.ndarray] = None
    mu_star: Optional[np.ndarray] = None
    locals_star: Optional[np.ndarray] = None
    q_star: Optional[np.ndarray] = None
    residuals: dict = field(default_factory=dict)


def relax_dist(value, target, rho):
    """Convex step ``value + rho (target - value)`` kept on the simplex."""
    return normalize(value + rho * (target - value))


def relax_q(value, target, rho):
    return value + rho * (target - value)


def ideal_targets(model, state):
    """Exact targets ``(mu P, B Q, locals P~)`` at the time-n values."""
    mu, q, fam = state.mu, state.q, state.locals
    pi = softmin(q, model.phi)
    K_all = model.transition_at_locals(mu, fam)
    K_own = checked_kernel(own_rows(K_all))
    C = checked_cost(model.cost_at_locals(mu, fam))
    tgt_q = C + model.gamma * (K_own @ q.min(axis=1))
    tgt_mu = normalize(np.einsum("x,xa,xay->y", mu, pi, K_own))
    F = frozen_policies(pi)
    tgt_fam = normalize(np.einsum("xaz,xazb,xazby->xay", fam, F, K_all))
    return tgt_mu, tgt_q, tgt_fam


def deterministic_rates(n, exps):
    return (rate_deterministic("mu", n, exps), rate_deterministic("q", n, exps),
            rate_deterministic("mu_tilde", n, exps))


def apply_targets(state, targets, rates):
    tgt_mu, tgt_q, tgt_fam = targets
    r_mu, r_q, r_loc = rates
    return IdealState(relax_dist(state.mu, tgt_mu, r_mu), relax_q(state.q, tgt_q, r_q),
                      relax_dist(state.locals, tgt_fam, r_loc), state.step + 1)


def step_ideal(model, state, exps):
    """One simultaneous update of all three components from the time-n values."""
    state = state.validate(model)
    return apply_targets(state, ideal_targets(model, state), deterministic_rates(state.step, exps))


def _trace_row(state, visit_fraction=None):
    return TraceRow(state.step, state.mu.copy(), state.q.copy(), state.locals.copy(),
                    visit_fraction)


def _resolve_backend(model, backend):
    if backend not in ("auto", "numpy", "numba"):
        raise InvalidInputError(f"backend must be 'auto', 'numpy' or 'numba', got {backend!r}")
    coeffs = model.affine_coefficients()
    if backend == "numba" and coeffs is None:
        raise InvalidInputError("the numba backend requires an affine model")
    if backend == "auto":
        backend = "numba" if coeffs is not None else "numpy"
    return backend


def _check_run_args(exps, n_steps, trace_every):
    report = validate_exponents(exps)
    if not report.valid:
        raise InvalidInputError("; ".join(report.violations))
    if not isinstance(n_steps, (int, np.integer)) or n_steps < 1:
        raise InvalidInputError(f"n_steps must be a positive integer, got {n_steps!r}")
    if not isinstance(trace_every, (int, np.integer)) or trace_every < 1:
        raise InvalidInputError(f"trace_every must be a positive integer, got {trace_every!r}")


def run_ideal(model, exps, n_steps, trace_every=1, init=None, backend="auto", callback=None):
    """Iterate :func:`step_ideal` ``n_steps`` times.

    The state at step ``n`` is recorded before the update whenever ``n`` is a
    multiple of ``trace_every``, so the trajectory has
    ``ceil(n_steps / trace_every)`` rows. ``callback(row)`` is invoked for
    every recorded row as it is produced.

    Returns
    -------
    state : IdealState
    trajectory : list of TraceRow
    """
    _check_run_args(exps, n_steps, trace_every)
    state = (init or IdealState.initial(model)).validate(model)
    backend = _resolve_backend(model, backend)
    trajectory = []

    def record(row):
        trajectory.append(row)
        if callback is not None:
            callback(row)

    if backend == "numba":
        from . import _jit
        return _jit.run_ideal_affine(model, exps, state, int(n_steps), int(trace_every), record), \
            trajectory
    end = state.step + n_steps
    start = state.step
    while state.step < end:
        if (state.step - start) % trace_every == 0:
            record(_trace_row(state))
        state = apply_targets(state, ideal_targets(model, state),
                              deterministic_rates(state.step, exps))
    return state, trajectory


# ---------------------------------------------------------------- fixed points

def _frozen_chain_step(model, mu, pi, fam):
    K_all = checked_kernel(model.transition_at_locals(mu, fam))
    return normalize(np.einsum("xaz,xazb,xazby->xay", fam, frozen_policies(pi), K_all))


def _solve_locals_policy(model, mu, pi, tol, max_iter, init=None):
    X, A = model.n_states, model.n_actions
    fam = np.full((X, A, X), 1.0 / X) if init is None else np.array(init, dtype=float)
    res = np.inf
    for it in range(int(max_iter)):
        new = _frozen_chain_step(model, mu, pi, fam)
        res = float(np.abs(new - fam).sum(axis=-1).max())
        fam = new
        if res <= tol:
            return fam, it + 1
    raise IterationLimitError(f"local equilibria did not converge: residual {res:.3e} after "
                              f"{max_iter} iterations", residual=res, iterations=max_iter)


def solve_local_family(model, mu, q, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, init=None):
    """Local equilibria for every ``(x, a)`` at once, shape ``(X, A, X)``."""
    mu = check_simplex(mu, model.n_states, "mu")
    q = check_q_table(q, model.n_states, model.n_actions)
    return _solve_locals_policy(model, mu, softmin(q, model.phi), tol, max_iter, init)[0]


def solve_local_gase(model, mu, q, x, a, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, init=None):
    """Fixed point of ``m -> m P~_{(x,a)}(mu, m)`` by Picard iteration.

    The chain follows the softmin policy of ``q`` except at state ``x``,
    where action ``a`` is always taken. Convergence is declared when one
    further application moves the iterate by at most ``tol`` in L1.
    """
    X, A = model.n_states, model.n_actions
    x = check_index(x, X, "x")
    a = check_index(a, A, "a")
    mu = check_simplex(mu, X, "mu")
    q = check_q_table(q, X, A)
    pi = softmin(q, model.phi)
    pi[x] = 0.0
    pi[x, a] = 1.0
    m = uniform(X) if init is None else check_simplex(init, X, "init")
    res = np.inf
    for _ in range(int(max_iter)):
        K = checked_kernel(model.transition_matrix(mu, m))
        new = normalize(np.einsum("z,zb,zby->y", m, pi, K))
        res = float(np.abs(new - m).sum())
        m = new
        if res <= tol:
            return m
    raise IterationLimitError(f"local equilibrium ({x}, {a}) did not converge: residual "
                              f"{res:.3e}", residual=res, iterations=max_iter)


def _solve_q(model, mu, tol, max_iter, damping, q_init=None, fam_init=None):
    X, A = model.n_states, model.n_actions
    q = np.zeros((X, A)) if q_init is None else np.array(q_init, dtype=float)
    fam = fam_init
    res = np.inf
    for it in range(int(max_iter)):
        fam, _ = _solve_locals_policy(model, mu, softmin(q, model.phi), tol * 1e-2, max_iter, fam)
        step = bellman_apply(model, mu, fam, q) - q
        res = float(np.abs(step).max())
        if res <= tol:
            return q, fam, res
        q = q + damping * step
    raise IterationLimitError(f"Q fixed point did not converge: residual {res:.3e} after "
                              f"{max_iter} sweeps", residual=res, iterations=max_iter)


def solve_q_gase(model, mu, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, damping=1.0, init=None,
                 return_locals=False):
    """Q-table with ``T3(mu, Q, locals*(Q, mu)) = 0``.

    Each sweep recomputes every local equilibrium at the current ``Q`` and
    then applies a (damped) Bellman step. On return ``|T3|_inf <= tol`` at
    the returned ``Q`` with its own local equilibria.
    """
    mu = check_simplex(mu, model.n_states, "mu")
    if not 0.0 < damping <= 1.0:
        raise InvalidInputError(f"damping must lie in (0, 1], got {damping}")
    q, fam, _ = _solve_q(model, mu, tol, max_iter, damping, init)
    return (q, fam) if return_locals else q


def solve_global_gase(model, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, init=None, damping=1.0):
    """Softmin-level fixed point ``(mu^{*phi}, Q^{*phi}, locals^{*phi})``.

    Outer Picard iteration ``mu <- mu P`` under the softmin policy of
    ``Q^{*phi}_mu``; inner solves are warm-started from the previous sweep.
    """
    X = model.n_states
    mu = uniform(X) if init is None else check_simplex(init, X, "init")
    q = fam = None
    res = np.inf
    for _ in range(int(max_iter)):
        q, fam, q_res = _solve_q(model, mu, tol * 1e-1, max_iter, damping, q, fam)
        K = own_rows(model.transition_at_locals(mu, fam))
        new = normalize(np.einsum("x,xa,xay->y", mu, softmin(q, model.phi), K))
        res = float(np.abs(new - mu).max())
        if res <= tol:
            return SolutionTriple(mu, q, fam, residuals={"p3": res, "t3": q_res})
        mu = new
    raise IterationLimitError(f"global fixed point did not converge: residual {res:.3e}",
                              residual=res, iterations=max_iter)


def solve_mus_system(model, alpha, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Distributions induced by a pure policy.

    Solves ``m[x,a] = m[x,a] P~^{alpha}_{(x,a)}(mu, m[x,a])`` for every pair
    together with ``mu = mu P^{alpha}(mu, m[x, alpha(x)])`` by alternating
    sweeps.

    Returns
    -------
    mu : ndarray of shape (n_states,)
    locals : ndarray of shape (n_states, n_actions, n_states)
    """
    X, A = model.n_states, model.n_actions
    alpha = check_pure_policy(alpha, X, A)
    pi = pure_to_stochastic(alpha, A)
    mu = uniform(X)
    fam = None
    res = np.inf
    for _ in range(int(max_iter)):
        fam, _ = _solve_locals_policy(model, mu, pi, tol * 1e-2, max_iter, fam)
        K = own_rows(model.transition_at_locals(mu, fam))
        new = normalize(np.einsum("x,xa,xay->y", mu, pi, K))
        res = float(np.abs(new - mu).sum())
        mu = new
        if res <= tol * 1e-2:
            fam, _ = _solve_locals_policy(model, mu, pi, tol * 1e-2, max_iter, fam)
            return mu, fam
    raise IterationLimitError(f"pure-policy system did not converge: residual {res:.3e}",
                              residual=res, iterations=max_iter)


def _value_iteration(model, mu, fam, tol, max_iter):
    q = np.zeros((model.n_states, model.n_actions))
    for _ in range(int(max_iter)):
        new = bellman_apply(model, mu, fam, q)
        res = float(np.abs(new - q).max())
        q = new
        # sup-norm error of the limit is at most gamma / (1 - gamma) * res
        if res * model.gamma / (1.0 - model.gamma) <= tol:
            return q
    raise IterationLimitError(f"value iteration did not converge: residual {res:.3e}",
                              residual=res, iterations=max_iter)


def extract_solution(model, phi_level, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Pure-policy solution derived from the softmin-level fixed point.

    ``alpha* = argmin Q^{*phi}``; ``(mu*, locals*)`` solve the pure-policy
    system for ``alpha*``; ``Q*`` is the Bellman fixed point with those
    distributions frozen. Raises :class:`DegenerateGapError` unless
    ``alpha*`` is the strict argmin of ``Q*``.
    """
    if isinstance(phi_level, SolutionTriple):
        mu_phi, q_phi, fam_phi = phi_level.mu_star_phi, phi_level.q_star_phi, \
            phi_level.locals_star_phi
        residuals = dict(phi_level.residuals)
    else:
        mu_phi, q_phi, fam_phi = phi_level
        residuals = {}
    X, A = model.n_states, model.n_actions
    mu_phi = check_simplex(mu_phi, X, "mu_star_phi")
    q_phi = check_q_table(q_phi, X, A, "q_star_phi")
    fam_phi = as_local_family(fam_phi, X, A)
    alpha = argmin_policy(q_phi)
    mu_star, fam_star = solve_mus_system(model, alpha, tol, max_iter)
    q_star = _value_iteration(model, mu_star, fam_star, tol * 1e-1, max_iter)
    own = q_star[np.arange(X), alpha]
    others = np.where(np.arange(A)[None, :] == alpha[:, None], np.inf, q_star)
    gap = float((others.min(axis=1) - own).min()) if A > 1 else math.inf
    if not gap > 0.0:
        raise DegenerateGapError(f"extracted policy is not the strict argmin of Q* "
                                 f"(gap {gap:.3e})", gap=gap)
    residuals["extraction_gap"] = gap
    return SolutionTriple(mu_phi, q_phi, fam_phi, alpha, mu_star, fam_star, q_star, residuals)


def solve_exact(model, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Softmin-level fixed point followed by extraction."""
    return extract_solution(model, solve_global_gase(model, tol, max_iter), tol, max_iter)


__all__ = ["IdealState", "TraceRow", "SolutionTriple", "step_ideal", "run_ideal",
           "solve_local_gase", "solve_local_family", "solve_q_gase", "solve_global_gase",
           "solve_mus_system", "extract_solution", "solve_exact"]

"""Asynchronous three-timescale learner driven by sample paths.

One global path ``(X_n, A_n)`` follows the softmin policy of the current
Q-table. For every pair ``(x, a)`` a local path follows the same policy
except that it always plays ``a`` when it sits at ``x``. Each step:

1. The global path moves and the cost at its pre-update distributions is
   recorded.
2. Every local path moves using ``(mu_n, locals_n[x, a])``.
3. Each local distribution relaxes toward the new position of its path at
   a rate indexed by the visit count of the pair the path just used.
4. The global distribution relaxes toward ``X_{n+1}``.
5. ``Q(X_n, A_n)`` is updated only when the local path for
   ``(X_n, A_n)`` currently sits at ``X_n`` (the gate).

Visit counts are incremented at ``(X_n, A_n)`` on every step before the
rates are read, whether or not the gate is open.
"""

from dataclasses import dataclass

import numpy as np

from .core import checked_cost, checked_kernel, softmin_policy_row
from .exceptions import InvalidInputError
from .ideal import TraceRow, _check_run_args, _resolve_backend
from .sync import RandomSource, draw_index
from .validation import normalize, uniform


@dataclass
class AsyncState:
    q: np.ndarray
    mu: np.ndarray
    locals: np.ndarray
    global_path_state: int
    local_path_states: np.ndarray
    visits: np.ndarray
    step: int
    streams: list
    gate_open: int = 0

    @property
    def visit_fraction(self):
        return self.visits / max(self.step, 1)

    @property
    def gate_fraction(self):
        return self.gate_open / max(self.step, 1)


def init_async(model, seed):
    """Zero Q-table; all paths start from uniform draws and the distributions are their point masses.

    Stream 0 drives the global path and stream ``1 + x * A + a`` the local
    path of ``(x, a)``; each path consumes one uniform here and two per step.
    """
    X, A = model.n_states, model.n_actions
    streams = [RandomSource(seed, i) for i in range(1 + X * A)]
    mu0 = uniform(X)
    gx = draw_index(mu0, streams[0].uniform())
    lx = np.empty((X, A), dtype=np.int64)
    for x in range(X):
        for a in range(A):
            lx[x, a] = draw_index(mu0, streams[1 + x * A + a].uniform())
    mu = np.zeros(X)
    mu[gx] = 1.0
    fam = np.zeros((X, A, X))
    fam[np.arange(X)[:, None], np.arange(A)[None, :], lx] = 1.0
    return AsyncState(np.zeros((X, A)), mu, fam, int(gx), lx, np.zeros((X, A), dtype=np.int64),
                      0, streams)


def _relax_point(v, y, rho):
    target = np.zeros_like(v)
    target[y] = 1.0
    return normalize(v + rho * (target - v))


def step_async(model, state, exps):
    """One step of the asynchronous learner; returns a new state."""
    X, A = model.n_states, model.n_actions
    n = state.step
    q, mu, fam = state.q, state.mu, state.locals
    lx = state.local_path_states
    phi, gamma = model.phi, model.gamma
    visits = state.visits.copy()

    u = state.streams[0].uniforms(2)
    xn = state.global_path_state
    an = draw_index(softmin_policy_row(q[xn], phi), u[0])
    K = checked_kernel(model.kernel(xn, an, mu, fam[xn, an]), "kernel row")
    xn1 = draw_index(K, u[1])
    f_next = float(checked_cost(model.cost(xn, an, mu, fam[xn, an])))
    gate = lx[xn, an] == xn
    visits[xn, an] += 1

    new_lx = np.empty_like(lx)
    new_fam = np.empty_like(fam)
    for x in range(X):
        for a in range(A):
            ul = state.streams[1 + x * A + a].uniforms(2)
            z = lx[x, a]
            b = a if z == x else draw_index(softmin_policy_row(q[z], phi), ul[0])
            row = checked_kernel(model.kernel(z, b, mu, fam[x, a]), "kernel row")
            new_lx[x, a] = draw_index(row, ul[1])
            rho = (1.0 + visits[z, b]) ** -exps.omega_mu_tilde
            new_fam[x, a] = _relax_point(fam[x, a], new_lx[x, a], rho)

    new_mu = _relax_point(mu, xn1, (1.0 + n) ** -exps.omega_mu)
    new_q = q.copy()
    gate_open = state.gate_open
    if gate:
        rho = (1.0 + visits[xn, an]) ** -exps.omega_q
        target = f_next + gamma * q[xn1].min()
        new_q[xn, an] = q[xn, an] + rho * (target - q[xn, an])
        gate_open += 1
    return AsyncState(new_q, new_mu, new_fam, int(xn1), new_lx, visits, n + 1, state.streams,
                      gate_open)


def _row(state):
    return TraceRow(state.step, state.mu.copy(), state.q.copy(), state.locals.copy(),
                    state.visits / state.step if state.step > 0 else np.zeros(state.visits.shape))


def run_async(model, exps, n_steps, seed, trace_every=1, backend="auto", callback=None):
    """Run the learner for ``n_steps`` steps from :func:`init_async`.

    Trajectory rows carry the visit fractions ``visits / n`` in addition to
    the distributions and the Q-table.

    Returns
    -------
    state : AsyncState
    trajectory : list of TraceRow
    """
    _check_run_args(exps, n_steps, trace_every)
    state = init_async(model, seed)
    backend = _resolve_backend(model, backend)
    trajectory = []

    def record(row):
        trajectory.append(row)
        if callback is not None:
            callback(row)

    if backend == "numba":
        from . import _jit
        state = _jit.run_async_affine(model, exps, state, int(n_steps), int(trace_every), record)
        return state, trajectory
    for _ in range(int(n_steps)):
        if state.step % trace_every == 0:
            record(_row(state))
        state = step_async(model, state, exps)
    return state, trajectory


def gate_fraction(state):
    if not isinstance(state, AsyncState):
        raise InvalidInputError("expected an AsyncState")
    return state.gate_fraction

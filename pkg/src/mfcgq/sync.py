"""Synchronous stochastic-approximation variant with sampled operators.

Every step draws one fresh transition per local sampler, one for the
global distribution and one per Q-entry, and replaces each exact target of
the idealized iteration by its single-sample estimate. The differences
between the sampled and exact targets are martingale increments; their
rate-weighted running sums are tracked in :class:`MartingaleTrace`.

Randomness comes from counter-based Philox streams, one per logical
sampler, so results do not depend on evaluation order or chunking.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import checked_cost, checked_kernel, softmin
from .exceptions import InvalidInputError
from .ideal import (IdealState, _check_run_args, _resolve_backend, _trace_row, apply_targets,
                    deterministic_rates, ideal_targets)
from .validation import check_index, check_q_table, check_simplex

_BLOCK = 4096


class RandomSource:
    """Reproducible uniform stream identified by ``(seed, stream)``.

    Draw ``k`` of a given source is the same whether uniforms are requested
    one at a time or in blocks.
    """

    def __init__(self, seed, stream=0):
        if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0 \
                or seed >= 2 ** 64:
            raise InvalidInputError(f"seed must be an integer in [0, 2**64), got {seed!r}")
        if not isinstance(stream, (int, np.integer)) or stream < 0:
            raise InvalidInputError(f"stream must be a nonnegative integer, got {stream!r}")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.Philox(ss))
        self._buf = np.empty(0)
        self._pos = 0
        self.draws = 0

    def uniforms(self, k):
        k = int(k)
        avail = self._buf.shape[0] - self._pos
        if k <= avail:
            out = self._buf[self._pos:self._pos + k]
            self._pos += k
        else:
            fresh = self._gen.random(max(k - avail, _BLOCK))
            merged = np.concatenate([self._buf[self._pos:], fresh])
            out = merged[:k]
            self._buf = merged
            self._pos = k
        self.draws += k
        return out.copy()

    def uniform(self):
        return float(self.uniforms(1)[0])


def draw_index(weights, u):
    """Inverse-CDF draw with sequential accumulation (matches the compiled loops)."""
    c = 0.0
    last = 0
    for i, w in enumerate(weights):
        if w > 0.0:
            last = i
        c += w
        if u < c:
            return i
    return last


def draw_indices(weights, u):
    """Vectorized :func:`draw_index` over an array of uniforms."""
    w = np.asarray(weights, dtype=float)
    c = np.cumsum(w)
    idx = np.searchsorted(c, np.asarray(u, dtype=float), side="right")
    pos = np.flatnonzero(w > 0.0)
    idx[idx >= w.shape[0]] = pos[-1] if pos.size else 0
    return idx


def _policy_row(policy_row, n_actions):
    row = np.asarray(policy_row, dtype=float)
    if row.shape != (n_actions,) or np.any(row < -1e-12) or abs(row.sum() - 1.0) > 1e-10:
        raise InvalidInputError(f"policy row must be a distribution over {n_actions} actions")
    return row


def _check_size(size):
    if size is not None and (not isinstance(size, (int, np.integer)) or size < 1):
        raise InvalidInputError(f"size must be a positive integer, got {size!r}")


def _sample(model, x, row, mu, mu_tilde, u_a, u_y):
    a = draw_index(row, u_a)
    K = checked_kernel(model.kernel(x, a, mu, mu_tilde), "kernel row")
    return a, draw_index(K, u_y)


def _sample_many(model, x, row, mu, mu_tilde, u):
    acts = draw_indices(row, u[:, 0])
    out = np.empty(u.shape[0], dtype=np.int64)
    for a in np.unique(acts):
        sel = acts == a
        K = checked_kernel(model.kernel(x, int(a), mu, mu_tilde), "kernel row")
        out[sel] = draw_indices(K, u[sel, 1])
    return out


def sample_next_state(model, x, policy_row, mu, mu_tilde, rng, size=None):
    """Draw an action from ``policy_row`` and a successor of ``x``; consumes two uniforms.

    With ``size`` given, returns an array of ``size`` independent successors,
    identical to ``size`` consecutive scalar calls on the same stream.
    """
    X, A = model.n_states, model.n_actions
    x = check_index(x, X, "x")
    row = _policy_row(policy_row, A)
    mu = check_simplex(mu, X, "mu")
    mu_tilde = check_simplex(mu_tilde, X, "mu_tilde")
    _check_size(size)
    if size is None:
        u = rng.uniforms(2)
        return _sample(model, x, row, mu, mu_tilde, u[0], u[1])[1]
    return _sample_many(model, x, row, mu, mu_tilde, rng.uniforms(2 * size).reshape(size, 2))


def check_T(model, mu, q, mu_tilde, x, a, rng, size=None):
    """One-sample estimate of the Q-operator entry ``(x, a)`` (``size`` samples if given)."""
    X, A = model.n_states, model.n_actions
    q = check_q_table(q, X, A)
    a = check_index(a, A, "a")
    row = np.zeros(A)
    row[a] = 1.0
    y = sample_next_state(model, x, row, mu, mu_tilde, rng, size)
    out = model.cost(x, a, mu, mu_tilde) + model.gamma * q.min(axis=1)[y] - q[x, a]
    return float(out) if size is None else out


def check_P(model, x, policy_row, mu, mu_tilde, nu, rng, size=None):
    """One-sample estimate ``1{X' = .} - nu``.

    ``x`` is the departure state; pass None to draw it from ``nu`` first
    (one extra uniform per sample). With ``size`` given, returns an array
    of shape ``(size, n_states)``.
    """
    X = model.n_states
    nu = check_simplex(nu, X, "nu")
    _check_size(size)
    if size is None:
        if x is None:
            x = draw_index(nu, rng.uniform())
        y = sample_next_state(model, x, policy_row, mu, mu_tilde, rng)
        out = -nu.copy()
        out[y] += 1.0
        return out
    if x is None:
        u = rng.uniforms(3 * size).reshape(size, 3)
        xs = draw_indices(nu, u[:, 0])
        ys = np.empty(size, dtype=np.int64)
        row = _policy_row(policy_row, model.n_actions)
        mu = check_simplex(mu, X, "mu")
        mu_tilde = check_simplex(mu_tilde, X, "mu_tilde")
        for z in np.unique(xs):
            sel = xs == z
            ys[sel] = _sample_many(model, int(z), row, mu, mu_tilde, u[sel, 1:])
    else:
        ys = sample_next_state(model, x, policy_row, mu, mu_tilde, rng, size)
    out = np.broadcast_to(-nu, (size, X)).copy()
    out[np.arange(size), ys] += 1.0
    return out


class SyncStreams:
    """All uniform streams used by the synchronous learner for one seed.

    Stream 0 drives the global sampler, streams ``1 .. XA`` the local
    samplers and streams ``XA+1 .. 2XA`` the Q samplers (row-major in
    ``(x, a)``).
    """

    def __init__(self, seed, n_states, n_actions):
        XA = n_states * n_actions
        self.seed = seed
        self.glob = RandomSource(seed, 0)
        self.locals = [RandomSource(seed, 1 + i) for i in range(XA)]
        self.qs = [RandomSource(seed, 1 + XA + i) for i in range(XA)]


@dataclass
class SyncIncrement:
    """Sampled-minus-exact targets of one step and the rates applied to them."""

    p_mu: np.ndarray
    p_locals: np.ndarray
    t_q: np.ndarray
    rates: tuple


@dataclass
class MartingaleTrace:
    psi_mu: np.ndarray
    psi_locals: np.ndarray
    psi_q: np.ndarray
    increments: list = field(default_factory=list)
    keep_increments: bool = False

    @classmethod
    def zeros(cls, n_states, n_actions, keep_increments=False):
        return cls(np.zeros(n_states), np.zeros((n_states, n_actions, n_states)),
                   np.zeros((n_states, n_actions)), [], keep_increments)

    def add(self, inc):
        r_mu, r_q, r_loc = inc.rates
        self.psi_mu += r_mu * inc.p_mu
        self.psi_locals += r_loc * inc.p_locals
        self.psi_q += r_q * inc.t_q
        if self.keep_increments:
            self.increments.append(inc)


def sampled_targets(model, state, streams):
    """Single-sample targets, drawn locals first, then global, then Q."""
    X, A = model.n_states, model.n_actions
    mu, q, fam = state.mu, state.q, state.locals
    pi = softmin(q, model.phi)
    eye = np.eye(A)
    K_all = checked_kernel(model.transition_at_locals(mu, fam), "kernel")
    s_fam = np.zeros((X, A, X))
    for x in range(X):
        for a in range(A):
            u = streams.locals[x * A + a].uniforms(3)
            z = draw_index(fam[x, a], u[0])
            b = draw_index(eye[a] if z == x else pi[z], u[1])
            s_fam[x, a, draw_index(K_all[x, a, z, b], u[2])] = 1.0
    u = streams.glob.uniforms(3)
    z = draw_index(mu, u[0])
    b = draw_index(pi[z], u[1])
    s_mu = np.zeros(X)
    s_mu[draw_index(K_all[z, b, z, b], u[2])] = 1.0
    minq = q.min(axis=1)
    C = checked_cost(model.cost_at_locals(mu, fam))
    nxt = np.empty((X, A), dtype=np.int64)
    for x in range(X):
        for a in range(A):
            u = streams.qs[x * A + a].uniforms(2)
            # u[0] is the action draw, trivial here because the action is frozen to a
            nxt[x, a] = draw_index(K_all[x, a, x, a], u[1])
    s_q = C + model.gamma * minq[nxt]
    return s_mu, s_q, s_fam


def step_sync(model, state, exps, rng):
    """One synchronous step.

    Returns
    -------
    state : IdealState
    increment : SyncIncrement
        Sampled minus exact targets (the martingale differences).
    """
    if not isinstance(rng, SyncStreams):
        raise InvalidInputError("rng must be a SyncStreams instance")
    state = state.validate(model)
    exact = ideal_targets(model, state)
    sampled = sampled_targets(model, state, rng)
    rates = deterministic_rates(state.step, exps)
    inc = SyncIncrement(sampled[0] - exact[0], sampled[2] - exact[2], sampled[1] - exact[1],
                        rates)
    return apply_targets(state, sampled, rates), inc


def run_sync(model, exps, n_steps, seed, trace_every=1, init=None, backend="auto",
             keep_increments=False, callback=None):
    """Iterate :func:`step_sync`.

    Returns
    -------
    state : IdealState
    trajectory : list of TraceRow
    trace : MartingaleTrace
    """
    _check_run_args(exps, n_steps, trace_every)
    X, A = model.n_states, model.n_actions
    streams = SyncStreams(seed, X, A)
    state = (init or IdealState.initial(model)).validate(model)
    backend = _resolve_backend(model, backend)
    if backend == "numba" and keep_increments:
        backend = "numpy"
    trace = MartingaleTrace.zeros(X, A, keep_increments)
    trajectory = []

    def record(row):
        trajectory.append(row)
        if callback is not None:
            callback(row)

    if backend == "numba":
        from . import _jit
        state = _jit.run_sync_affine(model, exps, state, int(n_steps), int(trace_every),
                                     (streams.glob, streams.locals, streams.qs), trace, record)
        return state, trajectory, trace
    start = state.step
    end = start + n_steps
    while state.step < end:
        if (state.step - start) % trace_every == 0:
            record(_trace_row(state))
        state, inc = step_sync(model, state, exps, streams)
        trace.add(inc)
    return state, trajectory, trace

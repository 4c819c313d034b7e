"""Compiled run loops for affine models.

The loops mirror the reference implementations in ``ideal``, ``sync`` and
``asynchronous`` step for step and consume the same uniform draws, so the two
backends agree to rounding. Runs are processed in chunks so traces can be
streamed to the caller.
"""

import numpy as np
from numba import njit

CHUNK = 1 << 15


# ---------------------------------------------------------------- primitives

@njit(cache=True)
def _softmin_row(q_row, phi, out):
    m = q_row.min()
    s = 0.0
    for i in range(q_row.shape[0]):
        out[i] = np.exp(-phi * (q_row[i] - m))
        s += out[i]
    for i in range(q_row.shape[0]):
        out[i] /= s


@njit(cache=True)
def _normalize_inplace(v):
    s = 0.0
    for i in range(v.shape[0]):
        if v[i] < 0.0:
            v[i] = 0.0
        s += v[i]
    for i in range(v.shape[0]):
        v[i] /= s


@njit(cache=True)
def _draw(weights, u):
    """Inverse-CDF draw; a round-off overshoot falls back to the last positive entry."""
    c = 0.0
    last = 0
    for i in range(weights.shape[0]):
        if weights[i] > 0.0:
            last = i
        c += weights[i]
        if u < c:
            return i
    return last


@njit(cache=True)
def _base_kernel(K0, Kg, mu, out):
    X, A, Y = K0.shape
    for x in range(X):
        for a in range(A):
            for y in range(Y):
                v = K0[x, a, y]
                for z in range(Y):
                    v += Kg[x, a, y, z] * mu[z]
                out[x, a, y] = v


@njit(cache=True)
def _kernel_row(base, Kl, x, a, loc, out):
    Y = base.shape[2]
    for y in range(Y):
        v = base[x, a, y]
        for z in range(Y):
            v += Kl[x, a, y, z] * loc[z]
        out[y] = v


@njit(cache=True)
def _cost(C0, Cg, Cl, x, a, mu, loc):
    v = C0[x, a]
    for z in range(mu.shape[0]):
        v += Cg[x, a, z] * mu[z]
    for z in range(mu.shape[0]):
        v += Cl[x, a, z] * loc[z]
    return v


@njit(cache=True)
def _ideal_targets(K0, Kg, Kl, C0, Cg, Cl, gamma, phi, mu, q, fam, tmu, tq, tfam):
    X, A = q.shape
    base = np.empty((X, A, X))
    _base_kernel(K0, Kg, mu, base)
    pi = np.empty((X, A))
    for x in range(X):
        _softmin_row(q[x], phi, pi[x])
    minq = np.empty(X)
    for y in range(X):
        minq[y] = q[y].min()
    row = np.empty(X)
    tmu[:] = 0.0
    for x in range(X):
        for a in range(A):
            loc = fam[x, a]
            _kernel_row(base, Kl, x, a, loc, row)
            s = 0.0
            for y in range(X):
                s += row[y] * minq[y]
            tq[x, a] = _cost(C0, Cg, Cl, x, a, mu, loc) + gamma * s
            w = mu[x] * pi[x, a]
            for y in range(X):
                tmu[y] += w * row[y]
            acc = tfam[x, a]
            acc[:] = 0.0
            for z in range(X):
                for b in range(A):
                    if z == x:
                        wz = 1.0 if b == a else 0.0
                    else:
                        wz = pi[z, b]
                    w2 = loc[z] * wz
                    if w2 == 0.0:
                        continue
                    _kernel_row(base, Kl, z, b, loc, row)
                    for y in range(X):
                        acc[y] += w2 * row[y]
            _normalize_inplace(acc)
    _normalize_inplace(tmu)


@njit(cache=True)
def _relax_dist(v, target, rho):
    for i in range(v.shape[0]):
        v[i] = v[i] + rho * (target[i] - v[i])
    _normalize_inplace(v)


@njit(cache=True)
def _relax_point(v, y, rho):
    for i in range(v.shape[0]):
        t = 1.0 if i == y else 0.0
        v[i] = v[i] + rho * (t - v[i])
    _normalize_inplace(v)


@njit(cache=True)
def _record(r, mu, q, fam, rec_mu, rec_q, rec_fam):
    # explicit loops: slice assignment here triples compile time
    X, A = q.shape
    for x in range(X):
        rec_mu[r, x] = mu[x]
        for a in range(A):
            rec_q[r, x, a] = q[x, a]
            for y in range(X):
                rec_fam[r, x, a, y] = fam[x, a, y]


# ---------------------------------------------------------------- ideal loop

@njit(cache=True)
def _ideal_chunk(K0, Kg, Kl, C0, Cg, Cl, gamma, phi, w_l, w_q, w_m, mu, q, fam,
                 step, n, start, te, rec_step, rec_mu, rec_q, rec_fam):
    X, A = q.shape
    tmu = np.empty(X)
    tq = np.empty((X, A))
    tfam = np.empty((X, A, X))
    r = 0
    for k in range(n):
        s = step + k
        if (s - start) % te == 0:
            rec_step[r] = s
            _record(r, mu, q, fam, rec_mu, rec_q, rec_fam)
            r += 1
        _ideal_targets(K0, Kg, Kl, C0, Cg, Cl, gamma, phi, mu, q, fam, tmu, tq, tfam)
        r_m = (1.0 + s) ** -w_m
        r_q = (1.0 + s) ** -w_q
        r_l = (1.0 + s) ** -w_l
        _relax_dist(mu, tmu, r_m)
        for x in range(X):
            for a in range(A):
                q[x, a] = q[x, a] + r_q * (tq[x, a] - q[x, a])
                _relax_dist(fam[x, a], tfam[x, a], r_l)
    return r


def _coeffs(model):
    c = model.affine_coefficients()
    return (np.ascontiguousarray(c["kernel_const"]), np.ascontiguousarray(c["kernel_glob"]),
            np.ascontiguousarray(c["kernel_loc"]), np.ascontiguousarray(c["cost_const"]),
            np.ascontiguousarray(c["cost_glob"]), np.ascontiguousarray(c["cost_loc"]))


def _emit(record, n_rec, rec_step, rec_mu, rec_q, rec_fam, extra=None):
    from .ideal import TraceRow
    for i in range(n_rec):
        record(TraceRow(int(rec_step[i]), rec_mu[i].copy(), rec_q[i].copy(), rec_fam[i].copy(),
                        None if extra is None else extra[i].copy()))


def _rec_buffers(n, te, X, A):
    R = n // te + 1
    return (np.empty(R, dtype=np.int64), np.empty((R, X)), np.empty((R, X, A)),
            np.empty((R, X, A, X)))


def run_ideal_affine(model, exps, state, n_steps, trace_every, record):
    from .ideal import IdealState
    coeffs = _coeffs(model)
    mu, q, fam = state.mu.copy(), state.q.copy(), np.ascontiguousarray(state.locals, dtype=float)
    X, A = q.shape
    start = step = state.step
    end = start + n_steps
    w_l, w_q, w_m = exps.as_tuple()
    while step < end:
        n = min(CHUNK, end - step)
        bufs = _rec_buffers(n, trace_every, X, A)
        r = _ideal_chunk(*coeffs, model.gamma, model.phi, w_l, w_q, w_m, mu, q, fam,
                         step, n, start, trace_every, *bufs)
        _emit(record, r, *bufs)
        step += n
    return IdealState(mu, q, fam, step)


# ---------------------------------------------------------------- sync loop

@njit(cache=True)
def _sync_chunk(K0, Kg, Kl, C0, Cg, Cl, gamma, phi, w_l, w_q, w_m, mu, q, fam, step, n, start,
                te, u_glob, u_loc, u_q, psi_mu, psi_loc, psi_q,
                rec_step, rec_mu, rec_q, rec_fam):
    X, A = q.shape
    tmu = np.empty(X)
    tq = np.empty((X, A))
    tfam = np.empty((X, A, X))
    base = np.empty((X, A, X))
    pi = np.empty((X, A))
    row = np.empty(X)
    minq = np.empty(X)
    smu = np.zeros(X)
    sq = np.empty((X, A))
    sfam = np.zeros((X, A, X))
    r = 0
    for k in range(n):
        s = step + k
        if (s - start) % te == 0:
            rec_step[r] = s
            _record(r, mu, q, fam, rec_mu, rec_q, rec_fam)
            r += 1
        _ideal_targets(K0, Kg, Kl, C0, Cg, Cl, gamma, phi, mu, q, fam, tmu, tq, tfam)
        _base_kernel(K0, Kg, mu, base)
        for x in range(X):
            _softmin_row(q[x], phi, pi[x])
        for y in range(X):
            minq[y] = q[y].min()
        # locals
        for x in range(X):
            for a in range(A):
                loc = fam[x, a]
                z = _draw(loc, u_loc[k, x, a, 0])
                if z == x:
                    b = a
                else:
                    b = _draw(pi[z], u_loc[k, x, a, 1])
                _kernel_row(base, Kl, z, b, loc, row)
                y = _draw(row, u_loc[k, x, a, 2])
                sfam[x, a, :] = 0.0
                sfam[x, a, y] = 1.0
        # global
        z = _draw(mu, u_glob[k, 0])
        b = _draw(pi[z], u_glob[k, 1])
        _kernel_row(base, Kl, z, b, fam[z, b], row)
        y = _draw(row, u_glob[k, 2])
        smu[:] = 0.0
        smu[y] = 1.0
        # Q entries
        for x in range(X):
            for a in range(A):
                loc = fam[x, a]
                _kernel_row(base, Kl, x, a, loc, row)
                y2 = _draw(row, u_q[k, x, a, 1])
                sq[x, a] = _cost(C0, Cg, Cl, x, a, mu, loc) + gamma * minq[y2]
        r_m = (1.0 + s) ** -w_m
        r_q = (1.0 + s) ** -w_q
        r_l = (1.0 + s) ** -w_l
        for i in range(X):
            psi_mu[i] += r_m * (smu[i] - tmu[i])
        for x in range(X):
            for a in range(A):
                psi_q[x, a] += r_q * (sq[x, a] - tq[x, a])
                for i in range(X):
                    psi_loc[x, a, i] += r_l * (sfam[x, a, i] - tfam[x, a, i])
        _relax_dist(mu, smu, r_m)
        for x in range(X):
            for a in range(A):
                q[x, a] = q[x, a] + r_q * (sq[x, a] - q[x, a])
                _relax_dist(fam[x, a], sfam[x, a], r_l)
    return r


def run_sync_affine(model, exps, state, n_steps, trace_every, sources, psi, record):
    from .ideal import IdealState
    coeffs = _coeffs(model)
    mu, q, fam = state.mu.copy(), state.q.copy(), np.ascontiguousarray(state.locals, dtype=float)
    X, A = q.shape
    start = step = state.step
    end = start + n_steps
    w_l, w_q, w_m = exps.as_tuple()
    glob, locs, qs = sources
    while step < end:
        n = min(CHUNK, end - step)
        u_glob = glob.uniforms(3 * n).reshape(n, 3)
        u_loc = np.stack([s.uniforms(3 * n).reshape(n, 3) for s in locs], axis=1)
        u_q = np.stack([s.uniforms(2 * n).reshape(n, 2) for s in qs], axis=1)
        bufs = _rec_buffers(n, trace_every, X, A)
        r = _sync_chunk(*coeffs, model.gamma, model.phi, w_l, w_q, w_m, mu, q, fam, step, n,
                        start, trace_every, u_glob, u_loc.reshape(n, X, A, 3),
                        u_q.reshape(n, X, A, 2), psi.psi_mu, psi.psi_locals, psi.psi_q, *bufs)
        _emit(record, r, *bufs)
        step += n
    return IdealState(mu, q, fam, step)


# ---------------------------------------------------------------- async loop

@njit(cache=True)
def _async_chunk(K0, Kg, Kl, C0, Cg, Cl, gamma, phi, w_l, w_q, w_m, mu, q, fam, gx, lx,
                 visits, counters, step, n, start, te, u_glob, u_loc,
                 rec_step, rec_mu, rec_q, rec_fam, rec_vis):
    X, A = q.shape
    base = np.empty((X, A, X))
    pi_row = np.empty(A)
    row = np.empty(X)
    new_lx = np.empty((X, A), dtype=np.int64)
    new_la = np.empty((X, A), dtype=np.int64)
    r = 0
    for k in range(n):
        s = step + k
        if (s - start) % te == 0:
            rec_step[r] = s
            _record(r, mu, q, fam, rec_mu, rec_q, rec_fam)
            for x in range(X):
                for a in range(A):
                    rec_vis[r, x, a] = visits[x, a] / s if s > 0 else 0.0
            r += 1
        _base_kernel(K0, Kg, mu, base)
        # global path
        xn = gx[0]
        _softmin_row(q[xn], phi, pi_row)
        an = _draw(pi_row, u_glob[k, 0])
        loc_g = fam[xn, an]
        _kernel_row(base, Kl, xn, an, loc_g, row)
        xn1 = _draw(row, u_glob[k, 1])
        f_next = _cost(C0, Cg, Cl, xn, an, mu, loc_g)
        gate = lx[xn, an] == xn
        visits[xn, an] += 1
        # local paths, all from time-n values
        for x in range(X):
            for a in range(A):
                z = lx[x, a]
                if z == x:
                    b = a
                else:
                    _softmin_row(q[z], phi, pi_row)
                    b = _draw(pi_row, u_loc[k, x, a, 0])
                new_la[x, a] = b
                _kernel_row(base, Kl, z, b, fam[x, a], row)
                new_lx[x, a] = _draw(row, u_loc[k, x, a, 1])
        for x in range(X):
            for a in range(A):
                r_l = (1.0 + visits[lx[x, a], new_la[x, a]]) ** -w_l
                _relax_point(fam[x, a], new_lx[x, a], r_l)
        r_m = (1.0 + s) ** -w_m
        _relax_point(mu, xn1, r_m)
        if gate:
            r_q = (1.0 + visits[xn, an]) ** -w_q
            target = f_next + gamma * q[xn1].min()
            q[xn, an] = q[xn, an] + r_q * (target - q[xn, an])
            counters[0] += 1
        counters[1] += 1
        gx[0] = xn1
        for x in range(X):
            for a in range(A):
                lx[x, a] = new_lx[x, a]
    return r


def run_async_affine(model, exps, state, n_steps, trace_every, record):
    from .asynchronous import AsyncState
    coeffs = _coeffs(model)
    X, A = model.n_states, model.n_actions
    mu, q = state.mu.copy(), state.q.copy()
    fam = np.ascontiguousarray(state.locals, dtype=float).copy()
    gx = np.array([state.global_path_state], dtype=np.int64)
    lx = state.local_path_states.astype(np.int64).copy()
    visits = state.visits.astype(np.int64).copy()
    counters = np.array([state.gate_open, state.step], dtype=np.int64)
    w_l, w_q, w_m = exps.as_tuple()
    glob, locs = state.streams[0], state.streams[1:]
    start = step = state.step
    end = start + n_steps
    while step < end:
        n = min(CHUNK, end - step)
        u_glob = glob.uniforms(2 * n).reshape(n, 2)
        u_loc = np.stack([s.uniforms(2 * n).reshape(n, 2) for s in locs], axis=1)
        R = n // trace_every + 1
        bufs = _rec_buffers(n, trace_every, X, A)
        rec_vis = np.empty((R, X, A))
        r = _async_chunk(*coeffs, model.gamma, model.phi, w_l, w_q, w_m, mu, q, fam, gx, lx,
                         visits, counters, step, n, start, trace_every, u_glob,
                         u_loc.reshape(n, X, A, 2), *bufs, rec_vis)
        _emit(record, r, *bufs, extra=rec_vis)
        step += n
    return AsyncState(q, mu, fam, int(gx[0]), lx, visits, step, state.streams, int(counters[0]))

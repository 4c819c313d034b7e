"""Input validation helpers.

All tabular objects are plain ``numpy`` arrays:

* distribution over states: shape ``(n_states,)``
* Q-table: shape ``(n_states, n_actions)``
* stochastic policy: shape ``(n_states, n_actions)``, rows on the simplex
* pure policy: integer array of shape ``(n_states,)``
* local family: shape ``(n_states, n_actions, n_states)``, one distribution
  per state-action pair

The ``check_*`` helpers return a float (or int) copy-free view when the input
is already well formed, mirroring ``sklearn.utils.check_array``.
"""

import numpy as np

from .exceptions import InvalidInputError

SUM_TOL = 1e-10
NEG_TOL = 1e-12


def _as_float_array(value, name, ndim):
    arr = np.asarray(value, dtype=float)
    if arr.ndim != ndim:
        raise InvalidInputError(f"{name} must have {ndim} dimension(s), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def _simplex_last_axis(arr, name):
    if np.any(arr < -NEG_TOL) or np.any(arr > 1.0 + SUM_TOL):
        raise InvalidInputError(f"{name} has entries outside [0, 1]")
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0) > SUM_TOL
    if np.any(bad):
        where = tuple(int(i) for i in np.argwhere(bad)[0]) if arr.ndim > 1 else ()
        raise InvalidInputError(f"{name}{list(where) if where else ''} sums to "
                                f"{float(sums[where] if where else sums):.12g}, expected 1")
    if np.any(arr < 0.0):
        arr = np.clip(arr, 0.0, None)
        arr = arr / arr.sum(axis=-1, keepdims=True)
    return arr


def check_simplex(mu, n_states=None, name="distribution"):
    """Validate a probability vector; tiny negative drift is clamped to zero."""
    arr = _as_float_array(mu, name, 1)
    if n_states is not None and arr.shape[0] != n_states:
        raise InvalidInputError(f"{name} must have length {n_states}, got {arr.shape[0]}")
    return _simplex_last_axis(arr, name)


def check_q_table(q, n_states=None, n_actions=None, name="Q-table"):
    arr = _as_float_array(q, name, 2)
    if n_states is not None and arr.shape != (n_states, n_actions):
        raise InvalidInputError(f"{name} must have shape {(n_states, n_actions)}, got {arr.shape}")
    return arr


def check_policy(pi, n_states=None, n_actions=None, name="policy"):
    arr = check_q_table(pi, n_states, n_actions, name=name)
    return _simplex_last_axis(arr, name)


def check_pure_policy(alpha, n_states, n_actions, name="pure policy"):
    arr = np.asarray(alpha)
    if arr.shape != (n_states,) or not np.issubdtype(arr.dtype, np.integer):
        raise InvalidInputError(f"{name} must be an integer array of shape ({n_states},)")
    if np.any(arr < 0) or np.any(arr >= n_actions):
        raise InvalidInputError(f"{name} has action indices outside [0, {n_actions})")
    return arr.astype(np.int64)


def check_local_family(locals_, n_states, n_actions, name="local family"):
    arr = _as_float_array(locals_, name, 3)
    if arr.shape != (n_states, n_actions, n_states):
        raise InvalidInputError(
            f"{name} must have shape {(n_states, n_actions, n_states)}, got {arr.shape}")
    return _simplex_last_axis(arr, name)


def check_index(value, upper, name):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise InvalidInputError(f"{name} must be an integer, got {value!r}")
    if not 0 <= value < upper:
        raise InvalidInputError(f"{name}={value} out of range [0, {upper})")
    return int(value)


def normalize(v):
    """Clamp negative round-off and rescale the last axis to sum to one."""
    v = np.clip(v, 0.0, None)
    return v / v.sum(axis=-1, keepdims=True)


def as_local_family(mu_tilde, n_states, n_actions):
    """Broadcast a single distribution to a family, or validate a family."""
    arr = np.asarray(mu_tilde, dtype=float)
    if arr.ndim == 1:
        arr = check_simplex(arr, n_states, name="local distribution")
        return np.broadcast_to(arr, (n_states, n_actions, n_states))
    return check_local_family(arr, n_states, n_actions)


def uniform(n_states):
    return np.full(n_states, 1.0 / n_states)

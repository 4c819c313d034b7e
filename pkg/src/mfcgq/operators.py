"""Mean-field operators, Bellman machinery, structural constants and bounds.

Local distributions are passed as a *family* of shape ``(X, A, X)``: entry
``[x, a]`` is the distribution seen by the representative agent that froze
action ``a`` at state ``x``. Passing a single vector broadcasts it to every
pair.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import (AffineModel, checked_cost, checked_kernel, frozen_policies, own_rows,
                   softmin, softmin_policy)
from .exceptions import AssumptionViolationError, InvalidInputError
from .validation import (as_local_family, check_index, check_q_table, check_simplex)


def _prepare(model, mu, q, locals_):
    X, A = model.n_states, model.n_actions
    mu = check_simplex(mu, X, "mu")
    q = check_q_table(q, X, A)
    fam = as_local_family(locals_, X, A)
    return mu, q, fam


def _own_kernel_and_cost(model, mu, fam):
    """Kernel rows ``p(.|x,a,mu,fam[x,a])`` and costs ``f(x,a,mu,fam[x,a])``."""
    K_all = model.transition_at_locals(mu, fam)
    K = checked_kernel(own_rows(K_all))
    C = checked_cost(model.cost_at_locals(mu, fam))
    return K, C, K_all


def bellman_apply(model, mu, mu_tilde, q):
    """Hard-min Bellman operator with the local distribution indexed by ``(x, a)``.

    ``(B q)(x, a) = f(x, a, mu, m[x,a]) + gamma * sum_y p(y|x, a, mu, m[x,a]) min_b q(y, b)``
    where ``m`` is ``mu_tilde`` broadcast to a family when it is a single vector.
    """
    mu, q, fam = _prepare(model, mu, q, mu_tilde)
    K, C, _ = _own_kernel_and_cost(model, mu, fam)
    return C + model.gamma * K @ q.min(axis=1)


def t3(model, mu, q, locals_):
    """Q-operator: ``B q - q``."""
    return bellman_apply(model, mu, locals_, q) - np.asarray(q, dtype=float)


def p3(model, mu, q, locals_):
    """Global-distribution operator.

    ``sum_x mu(x) sum_a pi(a|x) p(.|x, a, mu, m[x,a]) - mu`` with ``pi`` the
    softmin policy of ``q``. With a single local vector this is ``mu P - mu``.
    """
    mu, q, fam = _prepare(model, mu, q, locals_)
    K, _, _ = _own_kernel_and_cost(model, mu, fam)
    pi = softmin(q, model.phi)
    return np.einsum("x,xa,xay->y", mu, pi, K) - mu


def p3_tilde(model, x, a, mu, q, mu_tilde):
    """Local operator for one pair: ``mu_tilde P~_{(x,a)} - mu_tilde``.

    ``P~_{(x,a)}`` is the chain driven by the softmin policy of ``q`` with
    the action at state ``x`` frozen to ``a``, evaluated at ``(mu, mu_tilde)``.
    """
    X, A = model.n_states, model.n_actions
    x = check_index(x, X, "x")
    a = check_index(a, A, "a")
    mu = check_simplex(mu, X, "mu")
    mu_tilde = check_simplex(mu_tilde, X, "mu_tilde")
    q = check_q_table(q, X, A)
    K = checked_kernel(model.transition_matrix(mu, mu_tilde))
    pi = softmin(q, model.phi)
    pi[x] = 0.0
    pi[x, a] = 1.0
    return np.einsum("z,zb,zby->y", mu_tilde, pi, K) - mu_tilde


def p3_tilde_family(model, mu, q, locals_):
    """All local operators at once; entry ``[x, a]`` equals ``p3_tilde(model, x, a, ...)``."""
    mu, q, fam = _prepare(model, mu, q, locals_)
    K_all = checked_kernel(model.transition_at_locals(mu, fam))
    F = frozen_policies(softmin(q, model.phi))
    return np.einsum("xaz,xazb,xazby->xay", fam, F, K_all) - fam


def action_gap(q):
    """Smallest margin between the row minimum and the best non-minimal action.

    States whose row is constant do not constrain the gap; if no state does,
    the gap is ``+inf``.
    """
    q = check_q_table(q)
    best = q.min(axis=1, keepdims=True)
    others = np.where(q > best, q, np.inf)
    return float((others.min(axis=1) - best[:, 0]).min())


@dataclass(frozen=True)
class StructuralConstants:
    """Constants entering the contraction conditions and error bounds."""

    c_min: float
    c_min_phi: float
    L_p_glob: float
    L_p_loc: float
    L_f_glob: float
    L_f_loc: float
    action_gap: float
    L_p_max: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "L_p_max", max(self.L_p_glob, self.L_p_loc))
        if not 0.0 <= self.c_min <= 1.0 or not 0.0 <= self.c_min_phi <= 1.0:
            raise InvalidInputError("c_min and c_min_phi must lie in [0, 1]")
        if self.c_min > self.c_min_phi + 1e-12:
            raise InvalidInputError("c_min cannot exceed c_min_phi")
        for name in ("L_p_glob", "L_p_loc", "L_f_glob", "L_f_loc", "action_gap"):
            if not getattr(self, name) >= 0.0:
                raise InvalidInputError(f"{name} must be nonnegative")


def _dirichlet_pairs(rng, n_states, n_samples):
    """Random simplex points mixed with vertices, where affine extrema live."""
    pts = rng.dirichlet(np.ones(n_states), size=n_samples)
    n_vert = min(n_samples // 4, n_states)
    pts[:n_vert] = np.eye(n_states)[:n_vert]
    return pts


def estimate_lipschitz(model, n_samples=200, rng=None):
    """Empirical lower bounds on the four L1 Lipschitz constants.

    Pairs of distributions are drawn at random (plus vertex pairs); the
    kernel change is measured as the worst-row L1 distance and the cost
    change in absolute value.
    """
    from .core import LipschitzConstants

    rng = np.random.default_rng(rng)
    X = model.n_states
    base = _dirichlet_pairs(rng, X, n_samples)
    other = _dirichlet_pairs(rng, X, n_samples)[::-1]
    eye = np.eye(X)
    verts = [(eye[i], eye[j]) for i in range(X) for j in range(X) if i != j]
    pairs = list(zip(base, other)) + verts
    anchors = rng.dirichlet(np.ones(X), size=len(pairs))
    best = dict(p_glob=0.0, p_loc=0.0, f_glob=0.0, f_loc=0.0)
    for (u, v), w in zip(pairs, anchors):
        d = np.abs(u - v).sum()
        if d < 1e-12:
            continue
        Kg = np.abs(model.transition_matrix(u, w) - model.transition_matrix(v, w)).sum(-1).max()
        Kl = np.abs(model.transition_matrix(w, u) - model.transition_matrix(w, v)).sum(-1).max()
        Cg = np.abs(model.cost_matrix(u, w) - model.cost_matrix(v, w)).max()
        Cl = np.abs(model.cost_matrix(w, u) - model.cost_matrix(w, v)).max()
        best["p_glob"] = max(best["p_glob"], Kg / d)
        best["p_loc"] = max(best["p_loc"], Kl / d)
        best["f_glob"] = max(best["f_glob"], Cg / d)
        best["f_loc"] = max(best["f_loc"], Cl / d)
    return LipschitzConstants(**best)


def _min_kernel_entry(model, rng, sample_budget, pi=None):
    """``min_{x, x'} sum_a pi(a|x') p(x|x', a, ...)`` over the distribution arguments.

    With ``pi`` None the minimum over actions is taken instead. Affine models
    attain the minimum at a vertex pair, so the enumeration is exact there.
    """
    X = model.n_states
    eye = np.eye(X)
    if isinstance(model, AffineModel):
        points = [(eye[i], eye[j]) for i in range(X) for j in range(X)]
    else:
        pts = _dirichlet_pairs(rng, X, max(sample_budget, 1))
        points = [(eye[i], eye[j]) for i in range(X) for j in range(X)]
        points += list(zip(pts, pts[::-1]))
    best = np.inf
    for u, v in points:
        K = model.transition_matrix(u, v)
        vals = K.min(axis=1) if pi is None else np.einsum("za,zay->zy", pi, K)
        best = min(best, float(vals.min()))
    return max(best, 0.0)


def structural_constants(model, sample_budget=200, q=None, rng=None):
    """Collect c_min, c_min^phi, the Lipschitz constants and the action gap.

    Parameters
    ----------
    model : MeanFieldModel
    sample_budget : int
        Number of random distribution pairs used when constants must be
        estimated (general models without declared constants).
    q : ndarray of shape (n_states, n_actions), optional
        Q-table defining the softmin policy (for ``c_min_phi``) and the
        action gap. Defaults to the softmin-level fixed point ``Q^{*phi}``.
    rng : seed or Generator, optional
    """
    if sample_budget < 1:
        raise InvalidInputError("sample_budget must be positive")
    rng = np.random.default_rng(rng)
    if q is None:
        from .ideal import solve_global_gase
        q = solve_global_gase(model).q_star_phi
    q = check_q_table(q, model.n_states, model.n_actions)
    if model.lipschitz is not None:
        lip = model.lipschitz
    elif isinstance(model, AffineModel):
        lip = model.exact_lipschitz()
    else:
        lip = estimate_lipschitz(model, sample_budget, rng)
    c_min = _min_kernel_entry(model, rng, sample_budget)
    c_min_phi = _min_kernel_entry(model, rng, sample_budget, softmin_policy(q, model.phi))
    return StructuralConstants(c_min=c_min, c_min_phi=max(c_min_phi, c_min),
                               L_p_glob=lip.p_glob, L_p_loc=lip.p_loc,
                               L_f_glob=lip.f_glob, L_f_loc=lip.f_loc,
                               action_gap=action_gap(q))


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    holds: bool
    value: float
    threshold: float
    description: str

    @property
    def margin(self):
        return self.threshold - self.value


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple

    @property
    def all_hold(self):
        return all(c.holds for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self):
        lines = []
        for c in self.checks:
            flag = "ok  " if c.holds else "FAIL"
            lines.append(f"[{flag}] {c.name}: {c.value:.6g} vs {c.threshold:.6g} ({c.description})")
        return "\n".join(lines)


def _safe_ratio(num, den):
    if den == 0.0:
        return np.inf if num > 0 else 0.0
    return num / den


def check_assumptions(constants, model):
    """Evaluate the contraction conditions and the explicit temperature bound.

    The report contains

    * ``local_contraction``: ``L_p_loc < |X| c_min / 2``
    * ``global_contraction``: ``L_p_glob < |X| c_min / 2``
    * ``phi_total``: ``phi`` below the bound built from total constants
    * ``phi_global``: ``phi`` below the bound built from global constants
      (that bound itself scales like ``1 / phi``; it is evaluated at the
      model's ``phi``)
    """
    X, A = model.n_states, model.n_actions
    gamma, phi, fmax = model.gamma, model.phi, model.cost_bound
    k = constants
    half = 0.5 * X * k.c_min
    checks = [
        AssumptionCheck("local_contraction", k.L_p_loc < half, k.L_p_loc, half,
                        "local kernel Lipschitz constant below half of |X| c_min"),
        AssumptionCheck("global_contraction", k.L_p_glob < half, k.L_p_glob, half,
                        "global kernel Lipschitz constant below half of |X| c_min"),
    ]
    Lp_tot = k.L_p_glob + k.L_p_loc
    Lf_tot = k.L_f_glob + k.L_f_loc
    b1 = _safe_ratio((X * k.c_min - Lp_tot) * (1 - gamma),
                     A * (Lf_tot + gamma / (1 - gamma) * Lp_tot * fmax))
    slack = X * k.c_min - k.L_p_glob
    b2 = _safe_ratio(slack ** 2 * (1 - gamma),
                     phi * A * (slack + k.L_p_loc)
                     * (k.L_f_glob + gamma / (1 - gamma) * k.L_p_glob * fmax))
    checks.append(AssumptionCheck("phi_total", 0 < phi < b1, phi, b1,
                                  "temperature bound from total constants"))
    checks.append(AssumptionCheck("phi_global", 0 < phi < b2, phi, b2,
                                  "temperature bound from global constants, evaluated at phi"))
    return AssumptionReport(tuple(checks))


@dataclass(frozen=True)
class ErrorBounds:
    dist_bound: float
    q_bound: float


def theorem_error_bounds(constants, model):
    """Distance between the softmin-level and the pure-policy solutions.

    Returns the L1 bound on the distribution error and the sup-norm bound
    on the Q error, both proportional to ``exp(-phi * action_gap)``.
    """
    k = constants
    X, A = model.n_states, model.n_actions
    gamma = model.gamma
    den = X * k.c_min - 2.0 * k.L_p_max
    if not den > 0.0:
        raise AssumptionViolationError(
            f"|X| c_min - 2 L_p_max = {den:.6g} must be positive for the error bounds")
    decay = 0.0 if np.isinf(k.action_gap) else np.exp(-model.phi * k.action_gap)
    dist = 4.0 * A ** 1.5 * decay / den
    L_f = k.L_f_glob + k.L_f_loc
    q = (L_f + gamma / (1 - gamma) * k.L_p_max * model.cost_bound) * dist / (1 - gamma)
    return ErrorBounds(dist_bound=float(dist), q_bound=float(q))

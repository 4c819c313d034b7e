"""Power-law learning rates on three timescales.

Every rate has the form ``(1 + k) ** -omega`` where ``k`` is either the
global step index or a visit count. With ``1/2 < omega_mu_tilde < omega_q
< omega_mu < 1`` the local distributions move fastest, the Q-table at an
intermediate speed and the global distribution slowest.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError

KINDS = ("mu", "q", "mu_tilde")


@dataclass(frozen=True)
class RateExponents:
    omega_mu_tilde: float = 0.55
    omega_q: float = 0.75
    omega_mu: float = 0.95

    def __post_init__(self):
        for name in ("omega_mu_tilde", "omega_q", "omega_mu"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")

    def of(self, kind):
        kind = _kind(kind)
        return {"mu": self.omega_mu, "q": self.omega_q, "mu_tilde": self.omega_mu_tilde}[kind]

    def as_tuple(self):
        return (self.omega_mu_tilde, self.omega_q, self.omega_mu)


def _kind(kind):
    k = str(kind).lower().replace("-", "_")
    if k not in KINDS:
        raise InvalidInputError(f"rate kind must be one of {KINDS}, got {kind!r}")
    return k


def _power(k, omega):
    if np.any(np.asarray(k) < 0):
        raise InvalidInputError("step index and visit counts must be nonnegative")
    return (1.0 + k) ** -omega


def rate_global(n, exps):
    """Rate of the global distribution at step ``n`` (always deterministic)."""
    return float(_power(n, exps.omega_mu))


def rate_visit(kind, counts, x, a, exps):
    """Visit-count rate ``(1 + counts[x, a]) ** -omega`` for the Q or local update."""
    kind = _kind(kind)
    if kind == "mu":
        raise InvalidInputError("the global rate does not depend on visit counts")
    return float(_power(int(counts[x, a]), exps.of(kind)))


def rate_deterministic(kind, n, exps):
    """Step-indexed rate used by the idealized and synchronous iterations."""
    return float(_power(n, exps.of(kind)))


@dataclass(frozen=True)
class ExponentReport:
    valid: bool
    violations: tuple
    notes: tuple

    def __bool__(self):
        return self.valid


def validate_exponents(exps):
    """Check the ordering and summability conditions for power-law rates.

    For ``rho_n = (1+n)^-w`` the sum diverges iff ``w <= 1`` and the sum of
    squares converges iff ``w > 1/2``; ratios of two such sequences vanish iff
    the numerator exponent is larger. The visit-count conditions for the
    asynchronous learner hold for the same family because the rate depends
    only on the count and is nonincreasing in it.
    """
    w_l, w_q, w_m = exps.as_tuple()
    violations = []
    if not w_l > 0.5:
        violations.append(f"omega_mu_tilde={w_l} must exceed 1/2 for square summability")
    if not w_l < w_q:
        violations.append(f"omega_mu_tilde={w_l} must be below omega_q={w_q}")
    if not w_q < w_m:
        violations.append(f"omega_q={w_q} must be below omega_mu={w_m}")
    if not w_m < 1.0:
        violations.append(f"omega_mu={w_m} must be below 1")
    notes = (
        "sum (1+n)^-w diverges for w <= 1 (integral comparison)",
        "sum (1+n)^-2w converges for w > 1/2",
        "rho^mu/rho^Q = (1+n)^(omega_q - omega_mu) -> 0 when omega_q < omega_mu",
        "rho^Q/rho^mu_tilde = (1+n)^(omega_mu_tilde - omega_q) -> 0 when omega_mu_tilde < omega_q",
    )
    return ExponentReport(valid=not violations, violations=tuple(violations), notes=notes)

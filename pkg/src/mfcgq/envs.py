"""Built-in environments.

``TwoStateModel`` is a two-state, two-action example with closed-form
solutions. Action ``STAY`` keeps the intended state, ``MOVE`` flips it, and
the intended state is reached with probability ``1 - p``. The running cost
is ``f(x, a, mu, m) = x + c_g mu(0) + c_l m(0)``.

``DenseModelSpec`` describes an arbitrary tabular model whose kernel and
cost are affine in the global and local distributions.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .core import AffineModel, LipschitzConstants, softmin
from .exceptions import (ConfigError, InvalidInputError, IterationLimitError,
                         UnsupportedRegimeError)
from .ideal import SolutionTriple
from .validation import check_policy, check_simplex

STAY = 0
MOVE = 1


@dataclass(frozen=True)
class TwoStateParams:
    p: float = 0.1
    c_g: float = 5.0
    c_l: float = 5.0
    gamma: float = 0.5
    phi: float = 500.0

    def __post_init__(self):
        if not 0.0 < self.p < 0.5:
            raise InvalidInputError(f"p must lie in (0, 0.5), got {self.p}")
        if not self.c_g > 0 or not self.c_l > 0:
            raise InvalidInputError("c_g and c_l must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.phi > 0 or not np.isfinite(self.phi):
            raise InvalidInputError(f"phi must be positive and finite, got {self.phi}")

    @property
    def in_unique_regime(self):
        """True when ``c_l > 2 gamma``, where (move, stay) is optimal."""
        return self.c_l > 2.0 * self.gamma


def _two_state_tensors(params):
    p = params.p
    K0 = np.empty((2, 2, 2))
    for x in range(2):
        for a in range(2):
            target = x if a == STAY else 1 - x
            K0[x, a, target] = 1.0 - p
            K0[x, a, 1 - target] = p
    C0 = np.array([[0.0, 0.0], [1.0, 1.0]])
    Cg = np.zeros((2, 2, 2))
    Cg[:, :, 0] = params.c_g
    Cl = np.zeros((2, 2, 2))
    Cl[:, :, 0] = params.c_l
    return K0, C0, Cg, Cl


class TwoStateModel(AffineModel):
    """The two-state example as an affine model with analytic constants."""

    def __init__(self, params):
        self.params = params
        K0, C0, Cg, Cl = _two_state_tensors(params)
        lip = LipschitzConstants(p_glob=0.0, p_loc=0.0, f_glob=params.c_g / 2.0,
                                 f_loc=params.c_l / 2.0)
        super().__init__(K0, C0, params.gamma, params.phi, cost_glob=Cg, cost_loc=Cl,
                         cost_bound=1.0 + params.c_g + params.c_l, lipschitz=lip)

    def kernel(self, x, a, mu, mu_tilde):
        return self.K0[x, a].copy()

    def cost(self, x, a, mu, mu_tilde):
        return float(x + self.params.c_g * mu[0] + self.params.c_l * mu_tilde[0])


def build_two_state(params=None, **kwargs):
    """Construct the two-state model from :class:`TwoStateParams` or keyword values."""
    if params is None:
        params = TwoStateParams(**kwargs)
    elif kwargs:
        raise InvalidInputError("pass either params or keyword values, not both")
    return TwoStateModel(params)


def two_state_local_equilibria(params, pi):
    """Closed-form local equilibria under policy ``pi`` (rows: state, columns: stay/move)."""
    pi = check_policy(pi, 2, 2)
    p = params.p
    r = 1.0 - 2.0 * p
    s0, s1 = pi[0, STAY], pi[1, STAY]
    m1 = np.empty((2, 2))
    m1[0, STAY] = p / (1.0 - r * s1)
    m1[0, MOVE] = (1.0 - p) / (2.0 - 2.0 * p - r * s1)
    m1[1, STAY] = (1.0 - p - r * s0) / (1.0 - r * s0)
    m1[1, MOVE] = (1.0 - p - r * s0) / (2.0 - 2.0 * p - r * s0)
    return np.stack([1.0 - m1, m1], axis=-1)


def _q_from_locals(params, mu, fam):
    """The four closed-form entries given local equilibria, assuming (move, stay) greedy."""
    p, c_g, c_l, g = params.p, params.c_g, params.c_l, params.gamma
    m0 = fam[..., 0]
    base = c_g * mu[0]
    D = 1.0 - c_l * m0[0, MOVE] + c_l * m0[1, STAY]
    q = np.empty((2, 2))
    q[0, MOVE] = (base + c_l * m0[0, MOVE] + g * (1.0 - p) * D) / (1.0 - g)
    q[1, STAY] = q[0, MOVE] + D
    q[0, STAY] = base + c_l * m0[0, STAY] + g * q[0, MOVE] + g * p * D
    q[1, MOVE] = q[0, STAY] + 1.0 - c_l * m0[0, STAY] + c_l * m0[1, MOVE]
    return q


def two_state_q_gase(params, mu, tol=1e-12, max_iter=100_000, return_locals=False):
    """Closed-form ``Q^{*phi}_mu`` with the local equilibria solved self-consistently.

    The local equilibria depend on the softmin policy of the result, so the
    closed forms are iterated from ``Q = 0`` until successive tables agree
    to ``tol``. The closed forms presume that (move, stay) is greedy;
    :class:`UnsupportedRegimeError` is raised when the result contradicts it.
    """
    mu = check_simplex(mu, 2, "mu")
    q = np.zeros((2, 2))
    for _ in range(int(max_iter)):
        fam = two_state_local_equilibria(params, softmin(q, params.phi))
        new = _q_from_locals(params, mu, fam)
        res = float(np.abs(new - q).max())
        q = new
        if res <= tol:
            break
    else:
        raise IterationLimitError(f"closed-form Q iteration did not converge: residual {res:.3e}",
                                  residual=res, iterations=max_iter)
    if not (q[0, MOVE] < q[0, STAY] and q[1, STAY] < q[1, MOVE]):
        raise UnsupportedRegimeError("closed forms require (move, stay) to be greedy; "
                                     f"got Q = {q.tolist()}")
    fam = two_state_local_equilibria(params, softmin(q, params.phi))
    return (q, fam) if return_locals else q


def two_state_global_gase(params, pi=None):
    """Closed-form global fixed point under policy ``pi``.

    With ``pi`` omitted the softmin policy of ``Q^{*phi}`` is used; it does
    not depend on the global distribution because the global term only
    shifts the table by a constant.
    """
    if pi is None:
        pi = softmin(two_state_q_gase(params, np.array([params.p, 1.0 - params.p])), params.phi)
    pi = check_policy(pi, 2, 2)
    p = params.p
    A_ = p * pi[0, STAY] + (1.0 - p) * pi[0, MOVE]
    B_ = (1.0 - p) * pi[1, STAY] + p * pi[1, MOVE]
    m1 = A_ / (1.0 + A_ - B_)
    return np.array([1.0 - m1, m1])


def two_state_exact(params):
    """Closed-form solution in the regime ``c_l > 2 gamma``.

    Fills the pure-policy fields (``alpha* = (move, stay)``, ``mu* = (p, 1-p)``,
    ``Q*``) and the softmin-level fields at ``params.phi``.
    """
    if not params.in_unique_regime:
        raise UnsupportedRegimeError(
            f"closed form needs c_l > 2 gamma, got c_l={params.c_l}, gamma={params.gamma}")
    p, c_g, c_l, g = params.p, params.c_g, params.c_l, params.gamma
    alpha = np.array([MOVE, STAY], dtype=np.int64)
    mu_star = np.array([p, 1.0 - p])
    pure = np.zeros((2, 2))
    pure[0, MOVE] = pure[1, STAY] = 1.0
    fam_star = two_state_local_equilibria(params, pure)
    q = np.empty((2, 2))
    q[0, MOVE] = (c_g * p + c_l * p - g * p + g) / (1.0 - g)
    q[1, STAY] = q[0, MOVE] + 1.0
    q[0, STAY] = c_g * p + c_l / 2.0 + g * (q[0, MOVE] + p)
    q[1, MOVE] = q[0, STAY] + 1.0
    mu_phi = two_state_global_gase(params)
    q_phi, fam_phi = two_state_q_gase(params, mu_phi, return_locals=True)
    return SolutionTriple(mu_phi, q_phi, fam_phi, alpha, mu_star, fam_star, q,
                          residuals={"extraction_gap": two_state_gap(params)})


def two_state_gap(params):
    """``Q*(0, stay) - Q*(0, move)``, equal to ``(1 - 2p)(c_l - 2 gamma) / 2``."""
    return 0.5 * (1.0 - 2.0 * params.p) * (params.c_l - 2.0 * params.gamma)


# ---------------------------------------------------------------- dense models

def _array(value, path, ndim):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"not a numeric array ({exc})", path) from None
    if arr.ndim != ndim:
        raise ConfigError(f"expected a {ndim}-dimensional array, got shape {arr.shape}", path)
    return arr


@dataclass
class DenseModelSpec:
    """Loadable description of an affine tabular model.

    Kernel entries are ``kernel_const[x][a][y]`` plus optional coefficient
    tensors ``kernel_global[x][a][y][z]`` and ``kernel_local[x][a][y][z]``
    multiplying ``mu[z]`` and ``mu_tilde[z]``. The cost uses
    ``cost_const[x][a]``, ``cost_global[x][a][z]`` and ``cost_local[x][a][z]``.
    """

    kernel_const: np.ndarray
    cost_const: np.ndarray
    gamma: float
    phi: float
    kernel_global: Optional[np.ndarray] = None
    kernel_local: Optional[np.ndarray] = None
    cost_global: Optional[np.ndarray] = None
    cost_local: Optional[np.ndarray] = None
    cost_bound: Optional[float] = None
    lipschitz: Optional[dict] = field(default=None)

    @property
    def dims(self):
        return self.kernel_const.shape[:2]

    @classmethod
    def from_dict(cls, data, path="model"):
        """Parse the mapping form.

        ``kernel`` and ``cost`` are either plain nested lists (the constant
        term) or mappings with keys ``constant``, ``global`` and ``local``.
        An optional ``dims`` entry ``{n_states, n_actions}`` is checked
        against the arrays.
        """
        if not isinstance(data, dict):
            raise ConfigError("expected a mapping", path)
        allowed = {"dims", "kernel", "cost", "gamma", "phi", "cost_bound", "lipschitz"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", path)
        for key in ("kernel", "cost", "gamma", "phi"):
            if key not in data:
                raise ConfigError("missing required field", f"{path}.{key}")

        def split(key, ndim_const):
            value = data[key]
            if isinstance(value, dict):
                bad = set(value) - {"constant", "global", "local"}
                if bad:
                    raise ConfigError(f"unknown keys {sorted(bad)}", f"{path}.{key}")
                if "constant" not in value:
                    raise ConfigError("missing required field", f"{path}.{key}.constant")
                const = _array(value["constant"], f"{path}.{key}.constant", ndim_const)
                glob = value.get("global")
                loc = value.get("local")
                glob = None if glob is None else _array(glob, f"{path}.{key}.global", ndim_const + 1)
                loc = None if loc is None else _array(loc, f"{path}.{key}.local", ndim_const + 1)
                return const, glob, loc
            return _array(value, f"{path}.{key}", ndim_const), None, None

        K0, Kg, Kl = split("kernel", 3)
        C0, Cg, Cl = split("cost", 2)
        if "dims" in data:
            dims = data["dims"]
            want = (dims.get("n_states"), dims.get("n_actions")) if isinstance(dims, dict) \
                else tuple(dims)
            if tuple(want) != K0.shape[:2]:
                raise ConfigError(f"dims {tuple(want)} disagree with kernel shape {K0.shape}",
                                  f"{path}.dims")
        lip = data.get("lipschitz")
        if lip is not None:
            if not isinstance(lip, dict) or set(lip) != {"p_glob", "p_loc", "f_glob", "f_loc"}:
                raise ConfigError("expected keys p_glob, p_loc, f_glob, f_loc", f"{path}.lipschitz")
            lip = {k: float(v) for k, v in lip.items()}
        try:
            gamma, phi = float(data["gamma"]), float(data["phi"])
            bound = None if data.get("cost_bound") is None else float(data["cost_bound"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"expected numbers ({exc})", path) from None
        return cls(K0, C0, gamma, phi, Kg, Kl, Cg, Cl, bound, lip)

    def to_dict(self):
        def tensor(const, glob, loc):
            if glob is None and loc is None:
                return const.tolist()
            out = {"constant": const.tolist()}
            if glob is not None:
                out["global"] = np.asarray(glob).tolist()
            if loc is not None:
                out["local"] = np.asarray(loc).tolist()
            return out

        X, A = self.dims
        out = {"dims": {"n_states": int(X), "n_actions": int(A)},
               "kernel": tensor(self.kernel_const, self.kernel_global, self.kernel_local),
               "cost": tensor(self.cost_const, self.cost_global, self.cost_local),
               "gamma": self.gamma, "phi": self.phi}
        if self.cost_bound is not None:
            out["cost_bound"] = self.cost_bound
        if self.lipschitz is not None:
            out["lipschitz"] = dict(self.lipschitz)
        return out

    @classmethod
    def from_model(cls, model):
        """Spec reproducing an :class:`AffineModel`."""
        c = model.affine_coefficients()
        lip = None if model.lipschitz is None else asdict(model.lipschitz)
        return cls(c["kernel_const"].copy(), c["cost_const"].copy(), model.gamma, model.phi,
                   c["kernel_glob"].copy(), c["kernel_loc"].copy(), c["cost_glob"].copy(),
                   c["cost_loc"].copy(), model.cost_bound, lip)


def load_dense_model(spec):
    """Build an :class:`AffineModel` from a spec, a mapping, or a YAML file path.

    Raises
    ------
    ConfigError
        For malformed documents; the message names the offending field or
        kernel row ``(x, a)``.
    """
    if isinstance(spec, (str, Path)):
        path = Path(spec)
        try:
            data = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read model file ({exc})", str(path)) from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML ({exc})", str(path)) from None
        spec = DenseModelSpec.from_dict(data)
    elif isinstance(spec, dict):
        spec = DenseModelSpec.from_dict(spec)
    lip = None if spec.lipschitz is None else LipschitzConstants(**spec.lipschitz)
    try:
        return AffineModel(spec.kernel_const, spec.cost_const, spec.gamma, spec.phi,
                           kernel_glob=spec.kernel_global, kernel_loc=spec.kernel_local,
                           cost_glob=spec.cost_global, cost_loc=spec.cost_local,
                           cost_bound=spec.cost_bound, lipschitz=lip)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), "model") from None

"""Experiment configuration, dispatch and output.

Configuration is YAML. A minimal document::

    model:
      two_state: {p: 0.1, c_g: 5, c_l: 5}
    mode: async
    n_steps: 1000000

Full grammar (every key optional except ``model``)::

    model:
      two_state: {p, c_g, c_l, gamma: 0.5, phi: 500}
      # or
      dense: {path: model.yaml}        # or the inline DenseModelSpec mapping
    mode: ideal | sync | async | exact | check       (default: exact)
    exponents: {omega_mu_tilde: 0.55, omega_q: 0.75, omega_mu: 0.95}
    n_steps: 100000
    seeds: [0]                 # a scalar ``seed`` is also accepted
    trace_every: 1000
    tolerances: {tol: 1.0e-10, max_iter: 100000}
    output_dir: results        # default from $MFCGQ_OUTPUT_DIR
    backend: auto | numpy | numba
    workers: 1

Flat dotted keys such as ``exponents.omega_q: 0.8`` are accepted and merged
into the nested form. The three ``omega_*`` keys may also appear at top level.
"""

import dataclasses
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .exceptions import ConfigError, InvalidInputError
from .schedules import RateExponents, validate_exponents

MODES = ("ideal", "sync", "async", "exact", "check")
OUTPUT_ENV = "MFCGQ_OUTPUT_DIR"
_TOP_KEYS = {"model", "mode", "exponents", "n_steps", "seeds", "seed", "trace_every",
             "tolerances", "output_dir", "backend", "workers",
             "omega_mu_tilde", "omega_q", "omega_mu"}
_TWO_STATE_KEYS = {"p", "c_g", "c_l", "gamma", "phi"}


@dataclass
class ExperimentConfig:
    model: dict
    mode: str = "exact"
    exponents: RateExponents = field(default_factory=RateExponents)
    n_steps: int = 100_000
    seeds: tuple = (0,)
    trace_every: int = 1000
    tol: float = 1e-10
    max_iter: int = 100_000
    output_dir: Optional[str] = None
    backend: str = "auto"
    workers: int = 1

    def resolved_output_dir(self):
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or "results")


def _expand_dotted(data):
    out = {}
    for key, value in data.items():
        if isinstance(key, str) and "." in key:
            head, rest = key.split(".", 1)
            sub = out.setdefault(head, {})
            if not isinstance(sub, dict):
                raise ConfigError("conflicts with a dotted key", head)
            sub.update(_expand_dotted({rest: value}))
        elif isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key].update(_expand_dotted(value))
        else:
            out[key] = _expand_dotted(value) if isinstance(value, dict) else value
    return out


def _number(value, path, kind=float, low=None, high=None, low_open=False):
    if isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}", path)
    try:
        num = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}", path) from None
    if kind is int and num != value:
        raise ConfigError(f"expected an integer, got {value!r}", path)
    if low is not None and (num <= low if low_open else num < low):
        raise ConfigError(f"must be {'>' if low_open else '>='} {low}, got {num}", path)
    if high is not None and num > high:
        raise ConfigError(f"must be <= {high}, got {num}", path)
    return num


def _parse_model(model):
    if not isinstance(model, dict) or len(model) != 1:
        raise ConfigError("expected exactly one of 'two_state' or 'dense'", "model")
    (kind, body), = model.items()
    if kind == "two_state":
        from .envs import TwoStateParams
        body = body or {}
        if not isinstance(body, dict):
            raise ConfigError("expected a mapping", "model.two_state")
        unknown = set(body) - _TWO_STATE_KEYS
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "model.two_state")
        params = {k: _number(v, f"model.two_state.{k}") for k, v in body.items()}
        try:
            TwoStateParams(**params)
        except InvalidInputError as exc:
            raise ConfigError(str(exc), "model.two_state") from None
        return {"two_state": params}
    if kind == "dense":
        if not isinstance(body, dict):
            raise ConfigError("expected a mapping", "model.dense")
        if "path" in body:
            if set(body) != {"path"}:
                raise ConfigError("'path' cannot be combined with inline fields", "model.dense")
            return {"dense": {"path": str(body["path"])}}
        from .envs import DenseModelSpec
        DenseModelSpec.from_dict(body, "model.dense")
        return {"dense": body}
    raise ConfigError(f"unknown model kind {kind!r}; expected 'two_state' or 'dense'", "model")


def parse_config(source):
    """Parse and validate a configuration from a path, YAML text or mapping.

    Raises
    ------
    ConfigError
        With the dotted path of the offending field.
    """
    if isinstance(source, dict):
        data = source
    else:
        text = source
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                        and os.path.isfile(source)):
            try:
                text = Path(source).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config ({exc})", str(source)) from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML ({exc})", "<config>") from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", "<config>")
    data = _expand_dotted(data)
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "<config>")
    if "model" not in data:
        raise ConfigError("missing required field", "model")
    cfg = {"model": _parse_model(data["model"])}

    mode = data.get("mode", "exact")
    if mode not in MODES:
        raise ConfigError(f"must be one of {MODES}, got {mode!r}", "mode")
    cfg["mode"] = mode

    exps = dict(dataclasses.asdict(RateExponents()))
    section = data.get("exponents", {}) or {}
    if not isinstance(section, dict):
        raise ConfigError("expected a mapping", "exponents")
    bad = set(section) - set(exps)
    if bad:
        raise ConfigError(f"unknown keys {sorted(bad)}", "exponents")
    for key in exps:
        if key in section:
            exps[key] = _number(section[key], f"exponents.{key}")
        if key in data:
            exps[key] = _number(data[key], key)
    exps = RateExponents(**exps)
    report = validate_exponents(exps)
    if not report.valid:
        raise ConfigError("; ".join(report.violations)
                          + " (required: 1/2 < omega_mu_tilde < omega_q < omega_mu < 1)",
                          "exponents")
    cfg["exponents"] = exps

    if "n_steps" in data:
        cfg["n_steps"] = _number(data["n_steps"], "n_steps", int, low=1)
    if "seed" in data and "seeds" in data:
        raise ConfigError("give either 'seed' or 'seeds'", "seeds")
    seeds = data.get("seeds", data.get("seed", 0))
    if not isinstance(seeds, list):
        seeds = [seeds]
    if not seeds:
        raise ConfigError("at least one seed is required", "seeds")
    cfg["seeds"] = tuple(_number(s, f"seeds[{i}]", int, low=0, high=2 ** 64 - 1)
                         for i, s in enumerate(seeds))
    if "trace_every" in data:
        cfg["trace_every"] = _number(data["trace_every"], "trace_every", int, low=1)
    tols = data.get("tolerances", {}) or {}
    if not isinstance(tols, dict) or set(tols) - {"tol", "max_iter"}:
        raise ConfigError("expected keys tol and max_iter", "tolerances")
    if "tol" in tols:
        cfg["tol"] = _number(tols["tol"], "tolerances.tol", low=0.0, low_open=True)
    if "max_iter" in tols:
        cfg["max_iter"] = _number(tols["max_iter"], "tolerances.max_iter", int, low=1)
    if data.get("output_dir") is not None:
        cfg["output_dir"] = str(data["output_dir"])
    backend = data.get("backend", "auto")
    if backend not in ("auto", "numpy", "numba"):
        raise ConfigError(f"must be auto, numpy or numba, got {backend!r}", "backend")
    cfg["backend"] = backend
    if "workers" in data:
        cfg["workers"] = _number(data["workers"], "workers", int, low=1)
    return ExperimentConfig(**cfg)


def serialize_config(config):
    """YAML text that :func:`parse_config` maps back to an equal config."""
    doc = {"model": config.model, "mode": config.mode,
           "exponents": dataclasses.asdict(config.exponents), "n_steps": config.n_steps,
           "seeds": list(config.seeds), "trace_every": config.trace_every,
           "tolerances": {"tol": config.tol, "max_iter": config.max_iter},
           "backend": config.backend, "workers": config.workers}
    if config.output_dir is not None:
        doc["output_dir"] = config.output_dir
    return yaml.safe_dump(doc, sort_keys=False)


def build_model(config):
    from .envs import TwoStateParams, build_two_state, load_dense_model

    (kind, body), = config.model.items()
    if kind == "two_state":
        return build_two_state(TwoStateParams(**body))
    return load_dense_model(body["path"] if "path" in body else body)


def exact_oracle(config, model):
    """Exact solution when one is available, else None."""
    from .envs import TwoStateParams, two_state_exact
    from .exceptions import MFCGError
    from .ideal import solve_exact

    (kind, body), = config.model.items()
    if kind == "two_state":
        params = TwoStateParams(**body)
        if params.in_unique_regime:
            return two_state_exact(params)
        return None
    try:
        return solve_exact(model, config.tol, config.max_iter)
    except MFCGError:
        return None


# ---------------------------------------------------------------- comparison

@dataclass
class Comparison:
    q_learned: np.ndarray
    q_exact: np.ndarray
    q_abs_error: np.ndarray
    q_max_error: float
    mu_max_error: Optional[float] = None
    locals_max_error: Optional[float] = None

    def to_text(self):
        X, A = self.q_learned.shape
        lines = ["state action   learned        exact          abs_error"]
        for x in range(X):
            for a in range(A):
                lines.append(f"{x:5d} {a:6d}   {self.q_learned[x, a]:<14.6f} "
                             f"{self.q_exact[x, a]:<14.6f} {self.q_abs_error[x, a]:.6f}")
        lines.append(f"max |Q error| = {self.q_max_error:.6g}")
        if self.mu_max_error is not None:
            lines.append(f"max |mu error| = {self.mu_max_error:.6g}")
        if self.locals_max_error is not None:
            lines.append(f"max |local error| = {self.locals_max_error:.6g}")
        return "\n".join(lines)


def compare_to_exact(report, exact):
    """Per-entry absolute Q errors against ``Q*`` plus max-norm summaries.

    ``report`` is a :class:`RunReport` or a bare Q-table. Global
    distributions are compared with ``mu*``; local ones with the
    softmin-level equilibria, which are what the learners track.
    """
    if isinstance(report, RunReport):
        q, mu, fam = report.q, report.mu, report.locals
    else:
        q, mu, fam = np.asarray(report, dtype=float), None, None
    q_exact = np.asarray(exact.q_star, dtype=float)
    if q.shape != q_exact.shape:
        raise InvalidInputError(f"Q-table shape {q.shape} does not match exact {q_exact.shape}")
    err = np.abs(q - q_exact)
    mu_err = None if mu is None else float(np.abs(mu - exact.mu_star).max())
    loc_err = None
    if fam is not None and exact.locals_star_phi is not None:
        loc_err = float(np.abs(fam - exact.locals_star_phi).max())
    return Comparison(q, q_exact, err, float(err.max()), mu_err, loc_err)


# ---------------------------------------------------------------- running

@dataclass
class RunReport:
    mode: str
    seed: Optional[int]
    mu: np.ndarray
    q: np.ndarray
    locals: np.ndarray
    comparison: Optional[Comparison] = None
    constants: Optional[object] = None
    assumptions: Optional[object] = None
    bounds: Optional[object] = None
    diagnostics: dict = field(default_factory=dict)
    elapsed: float = 0.0
    csv_path: Optional[Path] = None
    report_path: Optional[Path] = None

    def to_text(self, include_timing=True):
        fmt = lambda a: np.array2string(np.asarray(a), precision=10, separator=", ")  # noqa: E731
        lines = [f"mode: {self.mode}", f"seed: {self.seed}", f"mu: {fmt(self.mu)}",
                 f"Q:\n{fmt(self.q)}", f"locals:\n{fmt(self.locals)}"]
        for key in sorted(self.diagnostics):
            lines.append(f"{key}: {self.diagnostics[key]}")
        if self.comparison is not None:
            lines.append("comparison with the exact solution:")
            lines.append(self.comparison.to_text())
        if self.constants is not None:
            lines.append(f"structural constants: {self.constants}")
        if self.assumptions is not None:
            lines.append("assumption checks:")
            lines.append(self.assumptions.summary())
        if self.bounds is not None:
            lines.append(f"error bounds: {self.bounds}")
        if include_timing:
            lines.append(f"elapsed_seconds: {self.elapsed:.3f}")
        return "\n".join(lines) + "\n"


def csv_header(n_states, n_actions):
    cols = ["step"] + [f"mu_{x}" for x in range(n_states)]
    cols += [f"q_{x}_{a}" for x in range(n_states) for a in range(n_actions)]
    cols += [f"local_{x}_{a}_{y}" for x in range(n_states) for a in range(n_actions)
             for y in range(n_states)]
    return ",".join(cols)


def csv_line(row):
    vals = np.concatenate([row.mu.ravel(), row.q.ravel(), row.locals.ravel()])
    return f"{row.step}," + ",".join("%.17g" % v for v in vals)


class _CsvWriter:
    def __init__(self, path, n_states, n_actions, flush_every=4096):
        self.fh = open(path, "w", newline="")
        self.fh.write(csv_header(n_states, n_actions) + "\n")
        self.flush_every = flush_every
        self.pending = 0

    def __call__(self, row):
        self.fh.write(csv_line(row) + "\n")
        self.pending += 1
        if self.pending >= self.flush_every:
            self.fh.flush()
            self.pending = 0

    def close(self):
        self.fh.flush()
        self.fh.close()


def _theory(model, q):
    from .exceptions import AssumptionViolationError
    from .operators import check_assumptions, structural_constants, theorem_error_bounds

    constants = structural_constants(model, q=q, rng=0)
    report = check_assumptions(constants, model)
    try:
        bounds = theorem_error_bounds(constants, model)
    except AssumptionViolationError:
        bounds = None
    return constants, report, bounds


def run_single(config, seed):
    """Run one seed of ``config``; writes the CSV (learning modes) and the report."""
    from .asynchronous import run_async
    from .ideal import run_ideal
    from .sync import run_sync

    model = build_model(config)
    out = config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    tag = f"{config.mode}_seed{seed}"
    t0 = time.perf_counter()
    exact = exact_oracle(config, model) if config.mode != "check" else None
    report = None
    csv_path = None
    if config.mode in ("ideal", "sync", "async"):
        csv_path = out / f"trajectory_{tag}.csv"
        writer = _CsvWriter(csv_path, model.n_states, model.n_actions)
        kw = dict(trace_every=config.trace_every, backend=config.backend, callback=writer)
        try:
            if config.mode == "ideal":
                state, _ = run_ideal(model, config.exponents, config.n_steps, **kw)
                diag = {}
            elif config.mode == "sync":
                state, _, trace = run_sync(model, config.exponents, config.n_steps, seed, **kw)
                diag = {"psi_q_max": float(np.abs(trace.psi_q).max())}
            else:
                state, _ = run_async(model, config.exponents, config.n_steps, seed, **kw)
                diag = {"gate_fraction": round(state.gate_fraction, 12),
                        "min_visit_fraction": round(float(state.visit_fraction.min()), 12)}
            writer(_final_row(state))
        finally:
            writer.close()
        report = RunReport(config.mode, seed, state.mu, state.q, state.locals,
                           diagnostics=diag, csv_path=csv_path)
    elif config.mode == "exact":
        if exact is None:
            from .ideal import solve_exact
            exact = solve_exact(model, config.tol, config.max_iter)
        report = RunReport("exact", seed, exact.mu_star, exact.q_star, exact.locals_star,
                           diagnostics={"alpha_star": exact.alpha_star.tolist(),
                                        "mu_star_phi": exact.mu_star_phi.tolist(),
                                        "q_star_phi": exact.q_star_phi.tolist()})
        _, _, bounds = _theory(model, exact.q_star_phi)
        report.bounds = bounds
    else:
        from .ideal import solve_global_gase
        sol = solve_global_gase(model, config.tol, config.max_iter)
        constants, verdicts, bounds = _theory(model, sol.q_star_phi)
        report = RunReport("check", seed, sol.mu_star_phi, sol.q_star_phi, sol.locals_star_phi,
                           constants=constants, assumptions=verdicts, bounds=bounds)
    if exact is not None and config.mode != "check":
        report.comparison = compare_to_exact(report, exact)
    report.elapsed = time.perf_counter() - t0
    report.report_path = out / f"report_{tag}.txt"
    report.report_path.write_text(report.to_text())
    return report


def _final_row(state):
    from .ideal import TraceRow
    return TraceRow(state.step, state.mu, state.q, state.locals)


def run_experiment(config, workers=None):
    """Run every seed of ``config``; learning modes use one output file pair per seed.

    The deterministic modes ignore all but the first seed.
    """
    seeds = config.seeds if config.mode in ("sync", "async") else config.seeds[:1]
    workers = workers or config.workers
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_single, [config] * len(seeds), seeds))
    return [run_single(config, s) for s in seeds]

"""Three-timescale Q-learning for mean field control games.

Idealized, synchronous and asynchronous learners, exact fixed-point
oracles, and a two-state example with closed-form solutions.
"""

from .asynchronous import AsyncState, init_async, run_async, step_async
from .core import (AffineModel, CallableModel, LipschitzConstants, MeanFieldModel, SpaceDims,
                   apply_kernel, apply_modified_kernel, argmin_policy, softmin_policy,
                   softmin_policy_row, substitute_policy)
from .envs import (DenseModelSpec, TwoStateParams, build_two_state, load_dense_model,
                   two_state_exact, two_state_global_gase, two_state_local_equilibria,
                   two_state_q_gase)
from .estimators import FixedPointMFCGSolver, MFCGQLearner
from .exceptions import (AssumptionViolationError, ConfigError, DegenerateGapError,
                         InvalidInputError, IterationLimitError, MFCGError, ModelContractError,
                         UnsupportedRegimeError)
from .harness import ExperimentConfig, compare_to_exact, parse_config, run_experiment
from .ideal import (IdealState, SolutionTriple, extract_solution, run_ideal, solve_exact,
                    solve_global_gase, solve_local_gase, solve_mus_system, solve_q_gase,
                    step_ideal)
from .operators import (ErrorBounds, StructuralConstants, bellman_apply, check_assumptions, p3,
                        p3_tilde, structural_constants, t3, theorem_error_bounds)
from .schedules import RateExponents, rate_deterministic, rate_global, rate_visit, \
    validate_exponents
from .sync import MartingaleTrace, RandomSource, check_P, check_T, run_sync, sample_next_state, \
    step_sync

__version__ = "0.1.0"

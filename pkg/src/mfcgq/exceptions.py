"""Exception hierarchy used across the package."""


class MFCGError(Exception):
    """Base class for all errors raised by mfcgq."""


class InvalidInputError(MFCGError, ValueError):
    """An argument violates its documented domain (shape, range, finiteness)."""


class ModelContractError(MFCGError):
    """A model returned a kernel row or cost that breaks its contract."""


class IterationLimitError(MFCGError, RuntimeError):
    """A fixed-point solver hit ``max_iter`` before reaching ``tol``."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class AssumptionViolationError(MFCGError):
    """A structural assumption needed by a bound does not hold."""


class DegenerateGapError(MFCGError):
    """The extracted Q-table does not separate the extracted pure policy."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class UnsupportedRegimeError(MFCGError, ValueError):
    """Closed-form oracle requested outside the parameter regime it covers."""


class ConfigError(MFCGError, ValueError):
    """Experiment configuration is malformed; ``path`` names the offending field."""

    def __init__(self, message, path=None):
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path

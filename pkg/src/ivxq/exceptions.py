"""Exception hierarchy shared by the estimators, the harness and the CLI."""


class IvxqError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(IvxqError, ValueError):
    """Invalid model, simulation or experiment configuration."""


class SingularDesignError(IvxqError, ValueError):
    """A design or moment matrix is rank deficient."""


class CollinearityError(SingularDesignError):
    """Near-collinear moment matrix; carries its condition number."""

    def __init__(self, message, condition_number=None, column=None):
        super().__init__(message)
        self.condition_number = condition_number
        self.column = column


class ConvergenceError(IvxqError, RuntimeError):
    """An iterative solver stopped before reaching optimality."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InsufficientTailDataError(IvxqError, ValueError):
    """Too few exceedance observations for a gated estimator."""


class ExperimentFailure(IvxqError, RuntimeError):
    """A Monte Carlo run exceeded its failed-replication budget."""


class DegenerateSparsityWarning(UserWarning):
    """The residual sparsity estimate was clipped at its lower bound."""


class InputDataError(IvxqError, ValueError):
    """Malformed input data; ``field`` names the offending column or cell."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

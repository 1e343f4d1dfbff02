"""Exception types shared across the package."""


class GraphestError(Exception):
    """Base class for all errors raised by graphest."""


class NotPositiveDefinite(GraphestError):
    """A matrix required to be SPD failed its Cholesky factorization."""


class DegenerateColumn(GraphestError):
    """A data column is (numerically) constant and cannot be standardized."""


class DegenerateDenominator(GraphestError):
    """The denominator of the recursive partial-correlation update vanished."""


class CalibrationFailed(GraphestError):
    """Sparsity calibration could not bracket the requested target."""


class ShapeMismatch(GraphestError):
    """An array does not have the shape an operation requires."""


class StaleCache(GraphestError):
    """A backward pass was given a cache from a non-matching forward pass."""


class CorruptFile(GraphestError):
    """A serialized file has a bad magic number, version, or length."""


class DivergenceDetected(GraphestError):
    """Training loss became non-finite.

    The ``history`` attribute carries the rows collected up to the abort.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class NotConverged(GraphestError):
    """An iterative solver exhausted its iteration budget."""


class InfeasibleSupport(GraphestError):
    """A principal submatrix required by the support-restricted MLE is singular."""


class DegenerateLabels(GraphestError):
    """A metric needs both classes but the labels contain only one."""


class DegenerateInput(GraphestError):
    """A rank-based statistic was given a constant vector."""


class ConfigError(GraphestError):
    """A run-configuration file contains an unknown or invalid key."""

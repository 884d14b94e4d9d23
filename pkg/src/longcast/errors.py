"""Exception hierarchy shared across the engine."""


class LongcastError(Exception):
    """Base class for all engine errors."""


class InvalidArgumentError(LongcastError, ValueError):
    """An argument violates a documented precondition."""


class ConvergenceError(LongcastError):
    """An iterative solver failed to converge.

    Carries the last iterate (and, for fits, an iteration trace) so callers
    can inspect how far the solver got.
    """

    def __init__(self, message, last_iterate=None, trace=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.trace = trace


class NotPSDError(LongcastError):
    """A matrix required to be positive semi-definite is not."""


class DomainError(LongcastError, ValueError):
    """A probability or other quantity is outside its open domain."""


class ShapeError(LongcastError, ValueError):
    """Array shapes or column layouts do not line up."""


class DataError(LongcastError):
    """Input data failed validation (messages carry row numbers)."""


class SplitError(LongcastError, ValueError):
    """Train/forecast partition is overlapping, gapped, or out of range."""


class FormulaError(LongcastError, ValueError):
    """A model formula references unknown columns or repeats terms."""


class EstimationError(LongcastError):
    """A moment estimator has too little data to work with."""


class RankDeficiencyError(LongcastError):
    """The weighted design is singular; names the offending columns."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DegenerateScaleError(LongcastError):
    """A scaled accuracy measure hit a zero denominator; names the subject."""

    def __init__(self, message, subject=None):
        super().__init__(message)
        self.subject = subject


class UndefinedMeasureError(LongcastError):
    """An accuracy measure is undefined for the given inputs."""


class StructuralError(LongcastError):
    """A configuration is internally inconsistent (e.g. a correlation
    table too far from any valid correlation matrix)."""


class ConfigError(LongcastError):
    """A run configuration file is malformed or self-contradictory."""


class MissingArtifactError(LongcastError):
    """A required input file (fit, dataset, forecast) does not exist."""

"""Exception hierarchy shared by all pimvc modules."""


class PimError(Exception):
    """Base class for library errors."""


class FormatError(PimError, ValueError):
    """A point-cloud file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParameterError(PimError, ValueError):
    """An argument is outside its admissible range."""


class DegenerateGeometryError(PimError):
    """Local geometry is too degenerate to estimate frames or weights."""


class CoverageError(PimError):
    """An evaluation point is not covered by any kernel support."""


class ConvergenceError(PimError):
    """An iterative solver failed to reach its tolerance.

    Attributes
    ----------
    history : list of float
        Relative residuals recorded before the failure.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class IndefiniteError(ConvergenceError):
    """Breakdown that indicates a matrix is not positive definite."""


class StageError(PimError):
    """Wraps an error raised inside one stage of an experiment pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

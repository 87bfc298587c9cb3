"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad argument or configuration value; message names the offending field."""


class StabilityError(ValueError):
    """Discretized state matrix has spectral radius >= 1."""


class ScheduleDegeneracyError(ValueError):
    """Auxiliary sample size smaller than the iteration index makes the
    confidence split empty, which would force an infinite per-iteration
    sample size."""


class ConvergenceError(RuntimeError):
    """Solver hit its iteration cap. Carries the best iterate found."""

    def __init__(self, message, best_iterate=None):
        super().__init__(message)
        self.best_iterate = best_iterate

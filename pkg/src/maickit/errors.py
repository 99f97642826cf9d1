"""Exception hierarchy shared across the package."""


class MaicError(Exception):
    """Base class for all package-specific errors."""


class DataValidationError(MaicError):
    """Input file or data structure violates the documented schema."""


class InfeasibleBalance(MaicError):
    """No method-of-moments solution exists (or the solver diverged).

    Carries the per-column feasibility report when one is available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonConvergence(MaicError):
    """An iterative solver hit its iteration cap before meeting tolerance."""


class PerfectSeparation(MaicError):
    """The treatment-assignment likelihood is unbounded (separated data)."""


class RankDeficient(MaicError):
    """The regression design matrix does not have full column rank."""


class TooManyFailures(MaicError):
    """Too large a fraction of bootstrap resamples failed to produce an estimate."""

    def __init__(self, message, n_failed=0, requested=0):
        super().__init__(message)
        self.n_failed = n_failed
        self.requested = requested

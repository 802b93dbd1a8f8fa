"""Exception types shared across the solver modules."""


class CsviuError(Exception):
    """Base class for every error raised by this package."""


class ModelError(CsviuError):
    """Invalid system data: shape mismatch, non-finite entries or bad config."""


class SingularLambda(CsviuError):
    """The control curvature matrix is singular; D'D must be positive definite."""


class MaxIterations(CsviuError):
    """An iteration hit its step budget before reaching tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class MonotonicityViolation(CsviuError):
    """Value iteration lost its monotone ordering, which signals a numerical failure."""


class SeriesDivergent(CsviuError):
    """A closed-loop series does not converge, so the requested quantity is undefined."""


class AssumptionViolated(CsviuError):
    """A positivity or convexity assumption required by the solver does not hold."""

"""Exception types shared across the package."""


class BobgmmError(Exception):
    """Base class for package-specific failures."""


class DimensionError(BobgmmError, ValueError):
    """Shapes of data, parameters, or priors do not line up."""


class NotPositiveDefiniteError(BobgmmError, ValueError):
    """A matrix that must admit a Cholesky factorization does not."""


class NonFiniteDensityError(BobgmmError, ValueError):
    """A log-density evaluated to NaN or +/-inf where a finite value is required."""


class InvalidDofError(BobgmmError, ValueError):
    """Degrees of freedom outside the valid range for the requested update or draw."""


class DegeneratePosteriorError(BobgmmError, ValueError):
    """Mixture-weight update has a non-positive denominator (all concentrations <= 1)."""


class EmFailure(BobgmmError, RuntimeError):
    """A weighted EM solve failed; carries the iteration index when known."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ObjectiveEvaluationError(BobgmmError, RuntimeError):
    """Too many EM solves failed inside one noisy-objective evaluation."""

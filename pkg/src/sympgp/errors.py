"""Exception types raised by the library.

The hierarchy distinguishes caller mistakes (shapes, configuration, missing
fit) from numerical failures (factorization, Newton divergence) so that batch
drivers can classify errors without string matching.
"""


class SympgpError(Exception):
    """Base class for all library errors."""


class ShapeError(SympgpError, ValueError):
    """Input arrays have inconsistent or unexpected dimensions."""


class InputError(SympgpError, ValueError):
    """Input values are invalid (non-finite entries, out-of-range sizes)."""


class ConfigurationError(SympgpError, ValueError):
    """Unsupported system/parameterization pair or malformed configuration."""


class NotFittedError(SympgpError, RuntimeError):
    """A model operation requires a fitted model."""


class NumericalError(SympgpError, RuntimeError):
    """A linear-algebra step failed beyond recovery.

    ``jitter_attempted`` records the largest diagonal jitter tried before
    giving up on a Cholesky factorization.
    """

    def __init__(self, message, jitter_attempted=None):
        super().__init__(message)
        self.jitter_attempted = jitter_attempted


class FitError(SympgpError, RuntimeError):
    """Every hyperparameter restart failed; ``failures`` lists the causes."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class SolverError(SympgpError, RuntimeError):
    """Newton iteration did not converge; keeps the residual-norm history."""

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class SingularityError(SolverError):
    """Constraint Jacobian lost rank (kinematic singularity)."""


class DatasetError(SympgpError, RuntimeError):
    """Ground-truth generation failed; ``trajectory`` names the culprit."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class TrainingError(SympgpError, RuntimeError):
    """Residual-target computation failed; ``row`` names the offending input."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class EstimationError(SympgpError, RuntimeError):
    """All probe points of a sampling-based estimate failed."""

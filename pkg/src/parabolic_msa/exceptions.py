"""Error types raised by the parabolic_msa package."""


class MsaError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MsaError, ValueError):
    """An array does not have the shape the grid expects."""


class InvalidProblemError(MsaError, ValueError):
    """A problem definition is unusable (non-finite callback, bad box, ...)."""


class InvalidCurvatureError(MsaError, ValueError):
    """The closed-form control update needs alpha + 2 rho > 0."""


class ConfigError(MsaError, ValueError):
    """A run configuration could not be read or is out of range."""


class PreconditionError(MsaError, ValueError):
    """An operation was called with arguments outside its domain."""


class LinearSolveError(MsaError, RuntimeError):
    """The conjugate gradient solve did not converge."""


class StateBlowUpError(MsaError, RuntimeError):
    """The state became non-finite or exceeded the blow-up threshold."""

    def __init__(self, level: int, max_abs: float):
        self.level = level
        self.max_abs = max_abs
        super().__init__(
            f"state blew up at time level {level} (max |y| = {max_abs:.3e})"
        )


class MinimizerError(MsaError, RuntimeError):
    """The pointwise objective returned a non-finite value."""


class CostEvaluationError(MsaError, ValueError):
    """A cost integrand evaluated to a non-finite value."""

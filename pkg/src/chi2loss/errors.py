"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (dims, alpha, learning rate, grid...)."""


class ShapeError(ValueError):
    """Array shapes do not line up."""


class NumericError(ArithmeticError):
    """Non-finite input where finite values are required."""


class ValidationError(ValueError):
    """Input data violates a documented precondition."""


class IdxFormatError(ValueError):
    """File is not the expected IDX layout (usually a wrong magic number)."""


class IdxTruncatedError(OSError):
    """IDX file ended before its header or payload was complete."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration budget.

    The trajectory of objective values is attached so callers can see
    whether the run was stalling or oscillating.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = list(trajectory or [])


class CheckFailure(AssertionError):
    """A numerical self-check (gradient check, round-trip) failed."""

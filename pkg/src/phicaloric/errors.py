"""Exception types raised across the package."""


class AssumptionViolation(ValueError):
    """An Orlicz function (or derived quantity) fails a structural assumption."""


class RangeError(ArithmeticError):
    """A root or threshold cannot be represented in floating point."""


class NonConvergence(RuntimeError):
    """Newton and Picard iterations both stalled."""

    def __init__(self, message, residual=float("nan"), time=None):
        super().__init__(message)
        self.residual = residual
        self.time = time


class NumericalBlowup(FloatingPointError):
    """A NaN or infinity appeared in the discrete state."""


class OutOfDomain(ValueError):
    """A cylinder or ball does not fit inside the sampled space-time domain."""


class ConfigError(ValueError):
    """An experiment configuration failed schema or semantic validation."""

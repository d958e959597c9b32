"""Exception hierarchy shared across the package."""


class KStoNetError(Exception):
    """Base class for every error raised by kstonet."""

    module = "kstonet"


class InputError(KStoNetError, ValueError):
    """Malformed, non-finite or dimensionally inconsistent input."""


class ConfigError(KStoNetError, ValueError):
    """Invalid or incomplete configuration."""


class ConvergenceError(KStoNetError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``gap`` carries the final optimality measure (duality gap or KKT
    violation, depending on the solver).
    """

    def __init__(self, message: str, gap: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations


class NumericalError(KStoNetError, ArithmeticError):
    """A matrix factorization failed even after ridge repair."""


class DivergenceError(KStoNetError, RuntimeError):
    """Latent imputation produced a non-finite or exploding value."""

    def __init__(self, message: str, layer: int = -1, step: int = -1,
                 magnitude: float = float("nan"), sample: int = -1):
        super().__init__(message)
        self.layer = layer
        self.step = step
        self.magnitude = magnitude
        self.sample = sample


class UnsupportedTaskError(KStoNetError, NotImplementedError):
    """The requested operation is not defined for this task type."""

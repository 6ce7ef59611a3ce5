"""Exception types shared across the package."""


class VsmError(Exception):
    """Base class for all package errors."""


class ConfigError(VsmError, ValueError):
    """Invalid model parameters, run configuration or call arguments."""


class NumericalError(VsmError, ArithmeticError):
    """Non-finite values or a failed solve during a simulation step."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class DataError(VsmError, ValueError):
    """Malformed or inadmissible input data (market panels, measures)."""

"""Exception types shared across the package."""


class DassimError(Exception):
    """Base class for package errors."""


class NumericalError(DassimError, ArithmeticError):
    """A computation could not be carried out stably (singular matrix, weight collapse, ...)."""


class ConfigError(DassimError, ValueError):
    """An experiment configuration is malformed or inconsistent."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

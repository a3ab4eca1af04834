"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class HGOTError(Exception):
    exit_code = 1


class ConfigError(HGOTError, ValueError):
    """Invalid configuration: bad hyperparameters, ill-typed meta-paths, unknown keys."""

    exit_code = 2


class DataError(HGOTError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class NumericalError(HGOTError, ArithmeticError):
    """Non-finite loss or another unrecoverable numerical failure."""

    exit_code = 4

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class StateError(HGOTError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""

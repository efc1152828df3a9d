"""Exception hierarchy. The CLI maps each class to an exit code."""


class OcppeError(Exception):
    """Base class for all package errors."""


class ConfigError(OcppeError):
    """Invalid or incomplete run configuration."""


class DataError(OcppeError):
    """Input data that cannot be used (malformed, non-finite, too small)."""


class NumericalError(OcppeError):
    """A numerical routine failed (degenerate density, non-convergence)."""

    def __init__(self, message, *, context=None):
        super().__init__(message)
        self.context = dict(context or {})


class ConvergenceError(NumericalError):
    """An iterative solver stopped before meeting its tolerance."""

"""Exception types shared across the package."""


class PageOptError(Exception):
    """Base class for all package errors."""


class ConfigError(PageOptError, ValueError):
    """Invalid configuration or parameter combination."""


class DataError(PageOptError, ValueError):
    """Malformed dataset or problem inputs."""


class UsageError(PageOptError, ValueError):
    """An operation was called outside its contract."""


class UnsupportedProblemError(PageOptError, ValueError):
    """The problem lacks a constant or oracle required by the operation."""


class EstimationError(PageOptError, RuntimeError):
    """A constant estimator could not produce a usable value."""


class DivergenceError(PageOptError, RuntimeError):
    """Non-finite values appeared during a run.

    Carries the iteration index and, when raised from a full run, the
    partial trace accumulated so far.
    """

    def __init__(self, message, t=None, partial_trace=None):
        super().__init__(message)
        self.t = t
        self.partial_trace = partial_trace

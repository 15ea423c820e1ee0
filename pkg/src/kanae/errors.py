"""Exception types raised across the package."""


class KanaeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(KanaeError, ValueError):
    """Invalid grid, architecture or run configuration."""


class NumericError(KanaeError, ArithmeticError):
    """Non-finite values encountered in a computation."""


class ContractError(KanaeError, ValueError):
    """Arguments violate a function contract (shapes, cache provenance)."""


class DataError(KanaeError, ValueError):
    """Malformed or insufficient input data."""


class TrainingError(KanaeError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DegenerateDistributionError(KanaeError, ValueError):
    """All monitoring statistics identical; no density can be fitted."""


class ModelFileError(KanaeError, IOError):
    """Model container is corrupt, truncated or of an unsupported version."""

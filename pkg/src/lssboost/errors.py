"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems -> 2,
data/ingestion problems -> 3, numeric failures -> 4.
"""


class LssBoostError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LssBoostError):
    """Invalid model or run configuration (unknown keys, bad targets, ...)."""


class DataError(LssBoostError):
    """Invalid input data (missing columns, NA cells, unknown regions, ...)."""


class ParameterDomainError(DataError):
    """A distribution parameter left its open domain."""


class NumericError(LssBoostError):
    """A numeric routine failed (singular system, unbounded direction, ...)."""


class DegenerateDirectionError(NumericError):
    """The fitted base-learner direction is identically zero."""


class UnboundedDirectionError(NumericError):
    """No interior minimum found along the update direction."""

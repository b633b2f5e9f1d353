"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigurationError -> 2,
DataError -> 3, DivergenceError -> 4.
"""


class AmykdError(Exception):
    """Base class for package errors."""


class ConfigurationError(AmykdError):
    """Invalid configuration (bad field values, impossible splits, ...)."""

    exit_code = 2


class DataError(AmykdError):
    """Invalid or inconsistent data (bad shapes, empty stacks, ...)."""

    exit_code = 3


class InvalidInputError(DataError):
    """A scalar input outside its domain (e.g. non-finite Centiloid)."""


class DivergenceError(AmykdError):
    """Training produced non-finite losses."""

    exit_code = 4

"""Exception hierarchy shared across the package.

CLI exit codes: ConfigError -> 2, DataError -> 3, NumericError -> 4.
"""


class TdropError(Exception):
    """Base class for all package errors."""


class ShapeError(TdropError, ValueError):
    """Tensor dimensions are incompatible with the requested operation."""


class UsageError(TdropError, RuntimeError):
    """An API was called out of contract (e.g. backward on a non-scalar)."""


class ContractError(TdropError, ValueError):
    """An input violates a documented precondition (e.g. negative attention weight)."""


class NumericError(TdropError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ConfigError(TdropError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(TdropError, ValueError):
    """Corrupt, missing, or malformed data files."""

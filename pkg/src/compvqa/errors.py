"""Exception hierarchy. Each class maps to one CLI exit code."""


class CompVQAError(Exception):
    exit_code = 1


class UsageError(CompVQAError, ValueError):
    """Bad arguments, shapes or configuration."""

    exit_code = 1


class ShapeError(UsageError):
    pass


class ConfigError(UsageError):
    pass


class DataError(CompVQAError):
    """Malformed or insufficient input data."""

    exit_code = 2


class NumericalError(CompVQAError, ArithmeticError):
    """NaN/Inf during training or a failed gradient check."""

    exit_code = 3

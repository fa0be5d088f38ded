"""Exception hierarchy. Each class maps to one CLI exit code."""


class MMJREError(Exception):
    exit_code = 1


class InputError(MMJREError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 1


class EncodingError(InputError):
    """Quintuples that cannot be written to a tag grid."""


class ConfigError(MMJREError, ValueError):
    exit_code = 2


class NumericalError(MMJREError, ArithmeticError):
    exit_code = 3


class ShapeError(MMJREError, ValueError):
    exit_code = 3

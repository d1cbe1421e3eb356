"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``UsageError``/``ConfigError`` -> 1,
data problems -> 2, ``DivergenceError``/``NumericalError`` -> 3.
"""


class DlfdError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class ConfigError(DlfdError, ValueError):
    exit_code = 1


class UsageError(DlfdError):
    exit_code = 1


class ShapeError(DlfdError, ValueError):
    pass


class InputError(DlfdError, ValueError):
    pass


class ParseError(DlfdError, ValueError):
    pass


class SimulationError(DlfdError, RuntimeError):
    pass


class NumericalError(DlfdError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericalError):
    pass

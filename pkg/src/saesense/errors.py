"""Exception hierarchy. Each class maps to one CLI exit code."""


class SaeSenseError(Exception):
    exit_code = 1
    category = "error"


class ConfigError(SaeSenseError, ValueError):
    exit_code = 2
    category = "config"


class DataError(SaeSenseError, ValueError):
    """Bad or missing input file content (weights, tokens, saved curves)."""

    exit_code = 3
    category = "data"


class InputError(SaeSenseError, ValueError):
    """A function was called with arguments violating its precondition."""

    exit_code = 4
    category = "input"


class NumericalError(SaeSenseError, ArithmeticError):
    exit_code = 5
    category = "numerical"

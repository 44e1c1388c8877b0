"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, data
problems exit 2 and numerical failures exit 3.
"""


class OmicGraphError(Exception):
    exit_code = 1


class ConfigError(OmicGraphError, ValueError):
    exit_code = 1


class DataError(OmicGraphError, ValueError):
    exit_code = 2


class DimensionError(OmicGraphError, ValueError):
    exit_code = 3


class NumericalError(OmicGraphError, ArithmeticError):
    exit_code = 3


class BackwardError(OmicGraphError, RuntimeError):
    exit_code = 3

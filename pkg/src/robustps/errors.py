"""Exception types shared across the pipeline.

Each maps onto one CLI exit code.
"""


class RobustPSError(Exception):
    exit_code = 1


class ConfigError(RobustPSError, ValueError):
    exit_code = 2


class DataError(RobustPSError, ValueError):
    exit_code = 3


class NumericError(RobustPSError, ArithmeticError):
    exit_code = 4

"""Exception hierarchy.

Each family maps onto one CLI exit code: configuration problems exit with 1,
data problems with 2, numerical failures with 3.
"""

from __future__ import annotations


class QrcError(Exception):
    exit_code = 1


class ConfigurationError(QrcError, ValueError):
    exit_code = 1


class DataError(QrcError, ValueError):
    exit_code = 2


class SchemaError(DataError):
    pass


class ParseError(DataError):
    pass


class SizeError(DataError):
    pass


class DomainError(DataError):
    pass


class CapacityError(DataError):
    pass


class EncodingError(DataError):
    pass


class LayoutError(DataError):
    pass


class FormatError(DataError):
    pass


class CompletenessError(DataError):
    def __init__(self, message: str, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class NumericalError(QrcError, ArithmeticError):
    exit_code = 3


class ShapeError(QrcError, ValueError):
    exit_code = 2


class FitError(DataError):
    pass

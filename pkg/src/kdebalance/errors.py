"""Exception hierarchy.

Every error raised by the library derives from :class:`KDEBalanceError`.
The two intermediate classes split failures into bad input data and
numerical/solver failures, which the command line maps to exit codes.
"""


class KDEBalanceError(Exception):
    pass


class DataError(KDEBalanceError, ValueError):
    """Input data violates a documented contract (shape, content, sizes)."""


class NumericalError(KDEBalanceError, ArithmeticError):
    """A numerical routine or solver could not produce a valid result."""


class TooFewUnits(DataError):
    pass


class DegenerateCovariates(NumericalError):
    pass


class EmptyGroup(DataError):
    pass


class SizeMismatch(DataError):
    pass


class NotBinaryPartition(DataError):
    pass


class TooLargeForExact(NumericalError):
    pass


class SameGroup(DataError):
    pass


class EmptyLevel(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class CSVFormatError(DataError):
    """Malformed CSV cell; carries the 1-based row and the column name."""

    def __init__(self, path, row, column, message):
        self.path = str(path)
        self.row = row
        self.column = column
        super().__init__(f"{self.path}: row {row}, column {column!r}: {message}")

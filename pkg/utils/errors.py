# Accounting Errors


class AccountingError(Exception):
    """Base class for every failure raised by the accountant"""


class UnachievableError(AccountingError):
    """Requested delta is below the infinity mass, so no finite epsilon exists"""


class GridMismatchError(AccountingError):
    """Two PLDs live on different loss grids"""


class OutOfRangeError(AccountingError):
    """Value lies outside the open range of a privacy loss function"""


class InvalidMatrixError(AccountingError):
    """Encoder matrix violates a structural requirement"""


class NegativeEntryError(InvalidMatrixError):
    """Encoder matrix contains a negative entry"""


class NotPowerOfTwoError(AccountingError):
    """Binary tree size is not a power of two"""


class DivisibilityError(AccountingError):
    """Matrix size is not a multiple of the restart block length"""


class TooLargeError(AccountingError):
    """Brute-force reference asked to enumerate too many subsets"""


class MatrixParseError(AccountingError):
    """Matrix CSV could not be parsed; row and column are 1-based"""

    def __init__(self, message: str, row: int = 0, column: int = 0):
        self.row = row
        self.column = column
        location = f" (row {row}, column {column})" if row else ""
        super().__init__(f"{message}{location}")

"""Exception types raised by the library and translated to exit codes by the CLI."""

from typing import Optional


class MelmError(Exception):
    """Base class for every failure the toolkit reports on purpose."""


class DatasetError(MelmError):
    """Raised when a dataset file cannot be turned into a valid LabeledDataset."""

    def __init__(
        self,
        message: str,
        row: Optional[int] = None,
        column: Optional[str] = None,
        line: Optional[int] = None,
    ):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)
        self.row = row
        self.column = column
        self.line = line


class DegenerateProjectionError(MelmError):
    """Raised when a projection collapses the data (singular projected covariance)."""


class OptimizationError(MelmError):
    """Raised when the optimizer cannot start or every restart fails."""


class ModelFileError(MelmError):
    """Raised for unreadable model files or dimension mismatches."""


class MissingFileError(DatasetError):
    """The dataset path does not exist."""


class NonNumericCellError(DatasetError):
    """A feature cell could not be parsed as a real number."""


class NonFiniteCellError(DatasetError):
    """A feature cell holds NaN or an infinity."""


class SingleClassError(DatasetError):
    """The label column does not hold exactly two distinct values."""


class MalformedLineError(DatasetError):
    """A libsvm line violates the `<label> <idx>:<val> ...` grammar, or a CSV row has extra fields."""

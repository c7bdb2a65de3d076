"""Exception types shared across the package."""

from __future__ import annotations


class DpglmError(Exception):
    """Base class for all package-specific errors."""


class ZeroVariance(DpglmError):
    """A continuous column is constant and cannot be standardized."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"column {column!r} has zero variance")


class NonConjugateBase(DpglmError):
    """A collapsed (marginal) computation was requested for a base measure
    part that has no closed-form posterior."""


class DimensionMismatch(DpglmError):
    """Parameter and covariate dimensions disagree."""


class OutOfSupport(DpglmError):
    """A response value lies outside the support of the model family."""


class DegenerateWeights(DpglmError):
    """All mixture weights underflowed to zero; the query point is far
    outside the support of every component and of the prior."""


class SeparationDetected(DpglmError):
    """Poisson GLM coefficients diverged during IRLS."""


class ParseError(DpglmError):
    """A CSV cell could not be converted to its declared type."""

    def __init__(self, row: int, column: str, reason: str):
        self.row = row
        self.column = column
        self.reason = reason
        super().__init__(f"row {row}, column {column!r}: {reason}")


class UnknownLevel(DpglmError):
    """A categorical value is not among the declared levels."""

    def __init__(self, value: str, column: str):
        self.value = value
        self.column = column
        super().__init__(f"value {value!r} not a declared level of column {column!r}")


class InsufficientData(DpglmError):
    """The dataset is too small for the requested split plan."""


class TooLarge(DpglmError):
    """Exact enumeration was requested beyond its hard size cap."""


class SchemaMismatch(DpglmError):
    """Query data does not match the schema the model was trained on."""


class LengthMismatch(DpglmError):
    """Paired sequences have different lengths."""


class EmptyInput(DpglmError):
    """An operation that needs at least one element received none."""


class NetworkUnavailable(DpglmError):
    """A remote dataset could not be downloaded and no cache exists."""


class ChecksumMismatch(DpglmError):
    """A cached or downloaded file does not match its recorded checksum."""


class RowCountMismatch(DpglmError):
    """A benchmark dataset does not have its documented number of rows."""

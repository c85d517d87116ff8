"""Exception types raised across the package."""

from __future__ import annotations


class RepsError(Exception):
    """Base class for all package errors."""


class ZeroVarianceFeature(RepsError, ValueError):
    def __init__(self, name: str):
        super().__init__(f"continuous feature {name!r} is constant on the fit split")
        self.name = name


class DatasetTooSmall(RepsError, ValueError):
    pass


class ParseError(RepsError, ValueError):
    def __init__(self, row: int, col: str, message: str = ""):
        text = f"cannot parse row {row}, column {col!r}"
        if message:
            text += f": {message}"
        super().__init__(text)
        self.row = row
        self.col = col


class SchemaMismatch(RepsError, ValueError):
    pass


class UnknownFeature(RepsError, KeyError):
    pass


class InvalidBudget(RepsError, ValueError):
    pass


class EmptyTrainSplit(RepsError, ValueError):
    pass


class LengthMismatch(RepsError, ValueError):
    pass


class InvalidTarget(RepsError, ValueError):
    pass


class MissingStage(RepsError, ValueError):
    pass


class TooFewRecords(RepsError, ValueError):
    pass


class TooFewRows(RepsError, ValueError):
    pass


class EmptySynthetic(RepsError, ValueError):
    pass


class SingleClass(RepsError, ValueError):
    pass


class EmptyDecile(RepsError, ValueError):
    pass


class UnknownKind(RepsError, ValueError):
    pass


class DegenerateSyntheticWarning(UserWarning):
    """Synthetic data has a single label class; TSTR falls back to 0.5."""


class InvariantViolation(RepsError, RuntimeError):
    """An internal consistency check failed (a bug, not a user error)."""

"""Exception hierarchy.

Every error carries a stable upper-case ``code`` used in machine-readable
error documents and in-row sweep records. ``exit_code`` follows the CLI
contract: 2 for configuration problems, 3 for data problems.
"""

from __future__ import annotations


class RdError(Exception):
    code = "RD_ERROR"
    exit_code = 3

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self), "exit_code": self.exit_code}


class ConfigError(RdError, ValueError):
    code = "CONFIG_ERROR"
    exit_code = 2


class DataError(RdError):
    code = "DATA_ERROR"


class DataNotFound(DataError):
    code = "DATA_NOT_FOUND"


class MissingColumn(DataError):
    code = "MISSING_COLUMN"

    def __init__(self, column: str):
        super().__init__(f"column {column!r} not found in header")
        self.column = column


class NonNumeric(DataError):
    code = "NON_NUMERIC"

    def __init__(self, value: str, row: int, column: str):
        super().__init__(f"cannot parse {value!r} as a finite number (row {row}, column {column!r})")
        self.value = value
        self.row = row
        self.column = column


class InvalidTreatment(DataError):
    code = "INVALID_TREATMENT"

    def __init__(self, value: str, row: int, column: str):
        super().__init__(f"treatment must be 0 or 1, got {value!r} (row {row}, column {column!r})")
        self.value = value
        self.row = row
        self.column = column


class EmptyDataset(DataError):
    code = "EMPTY_DATASET"


class FuzzyWithoutTreatment(DataError):
    code = "FUZZY_WITHOUT_TREATMENT"


class EstimationError(RdError):
    code = "ESTIMATION_ERROR"


class InsufficientData(EstimationError):
    code = "INSUFFICIENT_DATA"


class SingularDesign(EstimationError):
    code = "SINGULAR_DESIGN"


class SharpInconsistent(EstimationError):
    code = "SHARP_INCONSISTENT"


class WeakOrNoFirstStage(EstimationError):
    code = "WEAK_OR_NO_FIRST_STAGE"


class DegenerateDensity(EstimationError):
    code = "DEGENERATE_DENSITY"


class InsufficientWindow(EstimationError):
    code = "INSUFFICIENT_WINDOW"


class InvalidP(RdError, ValueError):
    code = "INVALID_P"
    exit_code = 2


class InvalidSpec(ConfigError):
    code = "INVALID_SPEC"

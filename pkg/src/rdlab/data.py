"""Datasets, designs, CSV ingestion and assignment-rule validation."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import IO, Iterator, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    DataNotFound,
    EmptyDataset,
    FuzzyWithoutTreatment,
    InvalidTreatment,
    MissingColumn,
    NonNumeric,
)

KINDS = ("sharp", "fuzzy", "kink")
KERNELS = ("triangular", "uniform", "epanechnikov")
SIDES = ("above", "below")
MAX_ORDER = 2


@dataclass(frozen=True)
class Observation:
    x: float
    y: float
    d: int | None = None
    covariates: tuple[float, ...] = ()


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RdDataset:
    """Immutable column store of observations.

    Covariate cells that were blank in the source are stored as NaN; rows with
    a missing covariate are only dropped by analyses that use that covariate.
    """

    x: np.ndarray
    y: np.ndarray
    d: np.ndarray | None = None
    covariates: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()
    n_dropped_missing: int = 0

    def __post_init__(self):
        x = _readonly(self.x).reshape(-1)
        y = _readonly(self.y).reshape(-1)
        if x.shape != y.shape:
            raise ValueError("x and y must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("x and y must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.d is not None:
            d = _readonly(self.d).reshape(-1)
            if d.shape != x.shape or not np.all((d == 0) | (d == 1)):
                raise ValueError("treatment must be a 0/1 vector of length n")
            object.__setattr__(self, "d", d)
        names = tuple(self.covariate_names)
        object.__setattr__(self, "covariate_names", names)
        if self.covariates is None:
            cov = np.empty((x.size, len(names)))
        else:
            cov = np.array(self.covariates, dtype=float, copy=True).reshape(x.size, -1)
        if cov.shape[1] != len(names):
            raise ValueError("covariate matrix width must match covariate_names")
        if np.any(np.isinf(cov)):
            raise ValueError("covariates must be finite or missing")
        cov.setflags(write=False)
        object.__setattr__(self, "covariates", cov)

    @property
    def n(self) -> int:
        return int(self.x.size)

    @property
    def has_treatment(self) -> bool:
        return self.d is not None

    @property
    def rows(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(
                x=float(self.x[i]),
                y=float(self.y[i]),
                d=None if self.d is None else int(self.d[i]),
                covariates=tuple(float(v) for v in self.covariates[i]),
            )

    def covariate(self, name: str) -> np.ndarray:
        try:
            return self.covariates[:, self.covariate_names.index(name)]
        except ValueError:
            raise MissingColumn(name) from None

    def subset(self, mask: np.ndarray) -> "RdDataset":
        """Rows where ``mask`` is true, original order preserved."""
        mask = np.asarray(mask, dtype=bool)
        return RdDataset(
            x=self.x[mask],
            y=self.y[mask],
            d=None if self.d is None else self.d[mask],
            covariates=self.covariates[mask],
            covariate_names=self.covariate_names,
            n_dropped_missing=self.n_dropped_missing,
        )

    def with_outcome(self, y: np.ndarray) -> "RdDataset":
        return RdDataset(self.x, y, self.d, self.covariates, self.covariate_names, self.n_dropped_missing)

    def without_treatment(self) -> "RdDataset":
        return RdDataset(self.x, self.y, None, self.covariates, self.covariate_names, self.n_dropped_missing)

    def __eq__(self, other):
        if not isinstance(other, RdDataset):
            return NotImplemented
        same_d = (self.d is None and other.d is None) or (
            self.d is not None and other.d is not None and np.array_equal(self.d, other.d)
        )
        return (
            self.covariate_names == other.covariate_names
            and self.n_dropped_missing == other.n_dropped_missing
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and same_d
            and np.array_equal(self.covariates, other.covariates, equal_nan=True)
        )

    __hash__ = None

    def to_csv(self, stream: IO[str]) -> None:
        """Write the standard ``x,d,y,<covariates>`` schema, 17 significant digits."""
        writer = csv.writer(stream, lineterminator="\n")
        header = ["x"] + (["d"] if self.d is not None else []) + ["y"] + list(self.covariate_names)
        writer.writerow(header)
        for i in range(self.n):
            row = [_fmt(self.x[i])]
            if self.d is not None:
                row.append(str(int(self.d[i])))
            row.append(_fmt(self.y[i]))
            row.extend("" if math.isnan(v) else _fmt(v) for v in self.covariates[i])
            writer.writerow(row)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


BandwidthSpec = Union[float, str]


@dataclass(frozen=True)
class RdDesign:
    """Design parameters for one RD analysis.

    ``bandwidth`` is either a positive float (fixed half-window) or ``"cv"``
    for leave-one-out cross-validation. ``covariates`` lists the columns used
    when ``covariate_adjust`` is set; empty means every dataset covariate.
    """

    cutoff: float
    treated_side: str = "above"
    kind: str = "sharp"
    kernel: str = "triangular"
    order: int = 1
    bandwidth: BandwidthSpec = "cv"
    donut_radius: float = 0.0
    covariate_adjust: bool = False
    covariates: tuple[str, ...] = ()

    def __post_init__(self):
        if not math.isfinite(self.cutoff):
            raise ConfigError("cutoff must be finite")
        if self.treated_side not in SIDES:
            raise ConfigError(f"treated_side must be one of {SIDES}, got {self.treated_side!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if isinstance(self.order, bool) or not isinstance(self.order, (int, np.integer)) or not 0 <= self.order <= MAX_ORDER:
            raise ConfigError(f"order must be 0, 1 or 2, got {self.order!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "cv":
                raise ConfigError(f"bandwidth must be a positive number or 'cv', got {self.bandwidth!r}")
        elif not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ConfigError(f"fixed bandwidth must be > 0, got {self.bandwidth!r}")
        if not (math.isfinite(self.donut_radius) and self.donut_radius >= 0):
            raise ConfigError("donut_radius must be >= 0")
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "covariates", tuple(self.covariates))

    @property
    def fixed_bandwidth(self) -> float | None:
        return None if isinstance(self.bandwidth, str) else float(self.bandwidth)

    def replace(self, **changes) -> "RdDesign":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "treated_side": self.treated_side,
            "kind": self.kind,
            "kernel": self.kernel,
            "order": self.order,
            "bandwidth": self.bandwidth,
            "donut_radius": self.donut_radius,
            "covariate_adjust": self.covariate_adjust,
            "covariates": list(self.covariates),
        }


def treated_mask(x: np.ndarray, cutoff: float, treated_side: str) -> np.ndarray:
    """Assignment rule; ties at the cutoff belong to the treated side."""
    return x >= cutoff if treated_side == "above" else x <= cutoff


def right_mask(x: np.ndarray, cutoff: float, treated_side: str) -> np.ndarray:
    """Observations fitted on the right of the cutoff (ties follow treatment)."""
    return x >= cutoff if treated_side == "above" else x > cutoff


@dataclass(frozen=True)
class ColumnMapping:
    running: str
    outcome: str
    treatment: str | None = None
    covariates: tuple[str, ...] = ()


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise NonNumeric(cell, row, column) from None
    if not math.isfinite(v):
        raise NonNumeric(cell, row, column)
    return v


def load_dataset(source: Union[IO[str], str, os.PathLike], mapping: ColumnMapping) -> RdDataset:
    """Read a CSV (header required, blank cell = missing) into an RdDataset.

    Rows missing the running variable, the outcome, or the mapped treatment are
    dropped and counted. Row numbers in errors are 1-based data rows.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        try:
            with open(source, encoding="utf-8", newline="") as fh:
                text = fh.read()
        except FileNotFoundError:
            raise DataNotFound(f"data file not found: {os.fspath(source)}") from None
    if text.startswith("﻿"):
        text = text[1:]
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyDataset("input has no header row") from None

    wanted = [mapping.running, mapping.outcome]
    if mapping.treatment is not None:
        wanted.append(mapping.treatment)
    wanted.extend(mapping.covariates)
    for name in wanted:
        if name not in header:
            raise MissingColumn(name)
    ix = header.index(mapping.running)
    iy = header.index(mapping.outcome)
    idt = None if mapping.treatment is None else header.index(mapping.treatment)
    icov = [header.index(c) for c in mapping.covariates]

    xs, ys, ds, covs = [], [], [], []
    dropped = 0
    for r, rec in enumerate(reader, start=1):
        if not rec or all(not cell.strip() for cell in rec):
            continue
        rec = rec + [""] * (len(header) - len(rec))
        cx, cy = rec[ix].strip(), rec[iy].strip()
        cd = rec[idt].strip() if idt is not None else None
        if not cx or not cy or cd == "":
            dropped += 1
            continue
        xs.append(_parse_float(cx, r, mapping.running))
        ys.append(_parse_float(cy, r, mapping.outcome))
        if cd is not None:
            dv = _parse_float(cd, r, mapping.treatment)
            if dv not in (0.0, 1.0):
                raise InvalidTreatment(cd, r, mapping.treatment)
            ds.append(dv)
        row_cov = []
        for j, name in zip(icov, mapping.covariates):
            cell = rec[j].strip()
            row_cov.append(math.nan if not cell else _parse_float(cell, r, name))
        covs.append(row_cov)
    if not xs:
        raise EmptyDataset("no usable rows after dropping missing values")
    return RdDataset(
        x=np.array(xs),
        y=np.array(ys),
        d=np.array(ds) if idt is not None else None,
        covariates=np.array(covs, dtype=float).reshape(len(xs), len(icov)),
        covariate_names=tuple(mapping.covariates),
        n_dropped_missing=dropped,
    )


@dataclass(frozen=True)
class ValidationWarning:
    code: str
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message}


@dataclass(frozen=True)
class ValidationReport:
    n_dropped_missing: int
    cutoff_in_range: bool
    eligibility_consistency: float
    n_ties: int = 0
    warnings: tuple[ValidationWarning, ...] = field(default_factory=tuple)

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(w.code for w in self.warnings)

    def to_dict(self) -> dict:
        return {
            "n_dropped_missing": self.n_dropped_missing,
            "cutoff_in_range": self.cutoff_in_range,
            "eligibility_consistency": self.eligibility_consistency,
            "n_ties": self.n_ties,
            "warnings": [w.to_dict() for w in self.warnings],
        }


def eligibility_consistency(data: RdDataset, design: RdDesign) -> float:
    if data.d is None:
        return 1.0
    if data.n == 0:
        return 1.0
    rule = treated_mask(data.x, design.cutoff, design.treated_side)
    return float(np.count_nonzero(data.d == rule) / data.n)


def validate_design(data: RdDataset, design: RdDesign) -> ValidationReport:
    if design.kind == "fuzzy" and data.d is None:
        raise FuzzyWithoutTreatment("fuzzy design requires a treatment column")
    c = design.cutoff
    warnings: list[ValidationWarning] = []
    in_range = bool(data.n > 0 and data.x.min() < c < data.x.max())
    if not in_range:
        warnings.append(ValidationWarning("CUTOFF_OUT_OF_RANGE", f"cutoff {c!r} is not strictly inside the range of x"))
    consistency = eligibility_consistency(data, design)
    if consistency < 1.0:
        warnings.append(ValidationWarning("CROSSOVERS", "crossovers present; fuzzy design appropriate"))
        if design.kind == "sharp":
            warnings.append(ValidationWarning("SHARP_INCONSISTENT", "sharp design requested but treatment does not follow the assignment rule; use a fuzzy design"))
    n_ties = int(np.count_nonzero(data.x == c))
    if n_ties:
        warnings.append(ValidationWarning("TIES_AT_CUTOFF", f"{n_ties} observations exactly at the cutoff were assigned to the treated ({design.treated_side}) side"))
    if data.n_dropped_missing:
        warnings.append(ValidationWarning("ROWS_DROPPED", f"{data.n_dropped_missing} rows dropped for missing values"))
    return ValidationReport(
        n_dropped_missing=data.n_dropped_missing,
        cutoff_in_range=in_range,
        eligibility_consistency=consistency,
        n_ties=n_ties,
        warnings=tuple(warnings),
    )

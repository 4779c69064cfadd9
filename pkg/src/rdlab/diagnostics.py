"""Validity and robustness checks: density, balance, placebo, donut, sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .data import RdDataset, RdDesign, right_mask
from .errors import DegenerateDensity, InsufficientData, InvalidP, RdError
from .estimation import (
    RdEstimate,
    _wls,
    estimate,
    kernel_weight,
    normal_p_value,
    outcome_jump,
    resolve_bandwidth,
    slope_change,
)

CORRECTIONS = ("bonferroni", "benjamini_hochberg", "none")
DENSITY_SMOOTHING_BINS = 5


# --------------------------------------------------------------------------
# density (manipulation) test


@dataclass(frozen=True)
class DensityTestResult:
    theta: float
    se: float
    z: float
    p: float
    bin_width: float
    smoothing_bandwidth: float
    bin_edges: tuple[float, ...] = ()
    bin_counts: tuple[int, ...] = ()
    left_fit: tuple[float, float] = (math.nan, math.nan)
    right_fit: tuple[float, float] = (math.nan, math.nan)

    def to_dict(self, with_bins: bool = False) -> dict:
        out = {
            "theta": self.theta,
            "se": self.se,
            "z": self.z,
            "p": self.p,
            "bin_width": self.bin_width,
            "smoothing_bandwidth": self.smoothing_bandwidth,
        }
        if with_bins:
            out["bin_edges"] = list(self.bin_edges)
            out["bin_counts"] = list(self.bin_counts)
        return out


def density_test(data: RdDataset, c: float) -> DensityTestResult:
    """Test for a jump in the log density of x at ``c``.

    Bins of width ``2 * sd(x) / sqrt(n)`` have ``c`` as an edge. On each side a
    triangular local linear fit is run over the five nearest bin midpoints on
    log((count + 0.5) / (n * b)); the intercept variance uses the Poisson
    delta method with fitted counts.
    """
    x = data.x
    n = x.size
    if n < 50:
        raise InsufficientData(f"density test needs n >= 50, got {n}")
    sd = float(np.std(x, ddof=1))
    if sd == 0:
        raise DegenerateDensity("x has zero variance")
    b = 2.0 * sd / math.sqrt(n)
    k = np.floor((x - c) / b).astype(np.int64)
    k_lo, k_hi = int(k.min()), int(k.max())
    if k_lo == k_hi:
        raise DegenerateDensity("all observations fall in a single bin")
    counts = np.bincount(k - k_lo, minlength=k_hi - k_lo + 1)
    h = DENSITY_SMOOTHING_BINS * b

    def side_fit(ks: np.ndarray):
        cnt = np.array([counts[j - k_lo] if k_lo <= j <= k_hi else 0 for j in ks], dtype=float)
        if cnt.sum() == 0:
            raise InsufficientData("no observations within the smoothing window on one side of the cutoff")
        mid = (ks + 0.5) * b
        logd = np.log((cnt + 0.5) / (n * b))
        w = kernel_weight(mid / h, "triangular")
        X = np.column_stack([np.ones_like(mid), mid])
        fit = _wls(X, logd, w)
        keep = w > 0
        lam = np.exp(X[keep] @ fit.beta[:, 0]) * n * b
        s = fit.scores
        var = (fit.bread @ (s.T @ (s / lam[:, None])) @ fit.bread)[0, 0]
        return float(fit.beta[0, 0]), float(fit.beta[1, 0]), var

    m = DENSITY_SMOOTHING_BINS
    l0, l1, lv = side_fit(np.arange(-m, 0))
    r0, r1, rv = side_fit(np.arange(0, m))
    theta = r0 - l0
    se = math.sqrt(lv + rv)
    z = theta / se if se > 0 else 0.0
    p = float(2.0 * stats.norm.sf(abs(z)))
    edges = tuple(float(c + j * b) for j in range(k_lo, k_hi + 2))
    return DensityTestResult(
        theta=theta,
        se=se,
        z=z,
        p=p,
        bin_width=b,
        smoothing_bandwidth=h,
        bin_edges=edges,
        bin_counts=tuple(int(v) for v in counts),
        left_fit=(l0, l1),
        right_fit=(r0, r1),
    )


# --------------------------------------------------------------------------
# multiplicity


def adjust_pvalues(p: Sequence[float], method: str = "benjamini_hochberg", m: int | None = None) -> list[float]:
    """Bonferroni or Benjamini-Hochberg step-up adjustment, input order kept."""
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise InvalidP("p-values must lie in [0, 1]")
    m = p.size if m is None else int(m)
    if p.size == 0:
        return []
    if m < p.size:
        raise ValueError("m must be at least the number of p-values")
    if method == "none":
        return p.tolist()
    if method == "bonferroni":
        return np.minimum(1.0, m * p).tolist()
    if method != "benjamini_hochberg":
        raise ValueError(f"unknown correction {method!r}")
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, p.size + 1)
    ranked = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty_like(p)
    out[order] = np.minimum(1.0, ranked)
    return out.tolist()


# --------------------------------------------------------------------------
# sweeps and balance


@dataclass(frozen=True)
class SweepRow:
    value: float
    estimate: RdEstimate | None = None
    error: str | None = None
    message: str | None = None
    p_adjusted: float | None = None
    flagged: bool | None = None

    @property
    def ok(self) -> bool:
        return self.estimate is not None

    @property
    def p_raw(self) -> float | None:
        return None if self.estimate is None else self.estimate.p_value

    def to_dict(self) -> dict:
        out = {"value": self.value}
        if self.estimate is not None:
            out["estimate"] = self.estimate.to_dict()
        else:
            out["error"] = {"code": self.error, "message": self.message}
        if self.p_adjusted is not None:
            out["p_adjusted"] = self.p_adjusted
        if self.flagged is not None:
            out["flagged"] = self.flagged
        return out


@dataclass(frozen=True)
class SweepResult:
    parameter: str
    rows: tuple[SweepRow, ...] = ()

    def __post_init__(self):
        vals = [r.value for r in self.rows]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep parameter values must be strictly increasing")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def to_dict(self) -> dict:
        return {"parameter": self.parameter, "rows": [r.to_dict() for r in self.rows]}


def _row(value: float, fn) -> SweepRow:
    try:
        return SweepRow(value=float(value), estimate=fn())
    except RdError as exc:
        return SweepRow(value=float(value), error=exc.code, message=str(exc))
    except np.linalg.LinAlgError as exc:
        return SweepRow(value=float(value), error="SINGULAR_DESIGN", message=str(exc))


def _sorted_unique(values: Sequence[float]) -> list[float]:
    return sorted({float(v) for v in values})


@dataclass(frozen=True)
class BalanceRow:
    name: str
    estimate: RdEstimate | None
    p_raw: float | None
    p_adjusted: float | None
    error: str | None = None
    message: str | None = None

    def to_dict(self) -> dict:
        out = {"name": self.name, "p_raw": self.p_raw, "p_adjusted": self.p_adjusted}
        if self.estimate is not None:
            out["estimate"] = self.estimate.to_dict()
        else:
            out["error"] = {"code": self.error, "message": self.message}
        return out


@dataclass(frozen=True)
class BalanceTable:
    correction: str
    rows: tuple[BalanceRow, ...] = ()

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def to_dict(self) -> dict:
        return {"correction": self.correction, "rows": [r.to_dict() for r in self.rows]}


def covariate_balance(
    data: RdDataset,
    design: RdDesign,
    correction: str = "benjamini_hochberg",
    h: float | None = None,
    covariates: Sequence[str] | None = None,
) -> BalanceTable:
    """Cutoff jump in each covariate, estimated like the main outcome.

    All covariates share the main bandwidth. Failed rows keep their error code
    and are left out of the multiplicity adjustment.
    """
    if correction not in CORRECTIONS:
        raise ValueError(f"unknown correction {correction!r}")
    names = list(data.covariate_names if covariates is None else covariates)
    if not names:
        return BalanceTable(correction=correction)
    if h is None:
        h = resolve_bandwidth(data, design)
    plain = design.replace(covariate_adjust=False)
    results = []
    for name in names:
        try:
            results.append((name, outcome_jump(data, plain, h, target=name), None))
        except RdError as exc:
            results.append((name, None, exc))
    raw = [est.p_value for _, est, _ in results if est is not None]
    adj = iter(adjust_pvalues(raw, correction))
    rows = []
    for name, est, exc in results:
        if est is None:
            rows.append(BalanceRow(name, None, None, None, error=exc.code, message=str(exc)))
        else:
            rows.append(BalanceRow(name, est, est.p_value, next(adj)))
    return BalanceTable(correction=correction, rows=tuple(rows))


def _placebo_estimate(data: RdDataset, design: RdDesign, c_placebo: float, h: float) -> RdEstimate:
    right_of_true = right_mask(data.x, design.cutoff, design.treated_side)
    side = right_of_true if c_placebo > design.cutoff else ~right_of_true
    sub = data.subset(side)
    moved = design.replace(cutoff=c_placebo)
    if design.kind == "kink":
        return slope_change(sub, moved, h)
    return outcome_jump(sub, moved, h)


def placebo_cutoffs(data: RdDataset, design: RdDesign, cutoffs: Sequence[float], h: float | None = None) -> SweepResult:
    """Re-estimate at artificial cutoffs using only data on their side of c.

    Away from the true cutoff the statistic is the outcome level jump (slope
    change for kink designs); at the true cutoff the row is the main estimate.
    """
    values = _sorted_unique(cutoffs)
    if not values:
        return SweepResult("cutoff")
    if h is None:
        h = resolve_bandwidth(data, design)
    rows = []
    for cp in values:
        if cp == design.cutoff:
            rows.append(_row(cp, lambda: estimate(data, design, h)))
        else:
            rows.append(_row(cp, lambda cp=cp: _placebo_estimate(data, design, cp, h)))
    return SweepResult("cutoff", tuple(rows))


def donut_sweep(data: RdDataset, design: RdDesign, radii: Sequence[float], h: float | None = None) -> SweepResult:
    values = _sorted_unique(radii)
    if any(r < 0 for r in values):
        raise ValueError("donut radii must be >= 0")
    if not values:
        return SweepResult("donut_radius")
    if h is None:
        h = resolve_bandwidth(data, design)
    rows = [_row(r, lambda r=r: estimate(data, design.replace(donut_radius=r), h)) for r in values]
    return SweepResult("donut_radius", tuple(rows))


@dataclass(frozen=True)
class BandwidthSweep:
    bandwidths: SweepResult
    orders: SweepResult

    def to_dict(self) -> dict:
        return {"bandwidths": self.bandwidths.to_dict(), "orders": self.orders.to_dict()}


def bandwidth_sweep(data: RdDataset, design: RdDesign, hs: Sequence[float], h: float | None = None) -> BandwidthSweep:
    """Re-estimate over ``hs`` and at polynomial orders 1 and 2 at the main h."""
    values = _sorted_unique(hs)
    if any(v <= 0 for v in values):
        raise ValueError("bandwidths must be > 0")
    rows = tuple(_row(v, lambda v=v: estimate(data, design, v)) for v in values)
    if h is None:
        h = resolve_bandwidth(data, design)
    orders = tuple(_row(p, lambda p=p: estimate(data, design.replace(order=p), h)) for p in (1, 2))
    return BandwidthSweep(SweepResult("bandwidth", rows), SweepResult("order", orders))


def default_scan_grid(data: RdDataset, design: RdDesign, h: float) -> list[float]:
    """19 interior quantiles of x whose full window [g - h, g + h] holds data
    on one side of the cutoff only and stays inside the observed range."""
    qs = np.quantile(data.x, np.arange(1, 20) / 20.0)
    lo, hi = float(data.x.min()), float(data.x.max())
    return [float(q) for q in qs if abs(q - design.cutoff) > h and lo <= q - h and q + h <= hi]


def exposure_discontinuity_scan(
    data: RdDataset,
    design: RdDesign,
    grid: Sequence[float] | None = None,
    h: float | None = None,
    alpha: float = 0.05,
) -> SweepResult:
    """Local linear jumps in P(D = 1 | x) at grid points away from the cutoff.

    Each point uses only data on its own side of the true cutoff; points with a
    BH-adjusted p below ``alpha`` are flagged.
    """
    if data.d is None:
        raise InsufficientData("exposure scan requires a treatment column")
    if h is None:
        h = resolve_bandwidth(data, design)
    values = [g for g in _sorted_unique(default_scan_grid(data, design, h) if grid is None else grid) if g != design.cutoff]
    if not values:
        return SweepResult("grid_point")
    right_of_true = right_mask(data.x, design.cutoff, design.treated_side)
    lin = design.replace(order=1, kind="sharp", covariate_adjust=False)
    rows = []
    for g in values:
        sub = data.subset(right_of_true if g > design.cutoff else ~right_of_true)
        rows.append(_row(g, lambda sub=sub, g=g: outcome_jump(sub, lin.replace(cutoff=g), h, target="treatment")))
    raw = [r.p_raw for r in rows if r.ok]
    adj = iter(adjust_pvalues(raw, "benjamini_hochberg"))
    out = []
    for r in rows:
        if r.ok:
            pa = next(adj)
            out.append(SweepRow(r.value, r.estimate, p_adjusted=pa, flagged=pa < alpha))
        else:
            out.append(r)
    return SweepResult("grid_point", tuple(out))


__all__ = [
    "BalanceRow",
    "BalanceTable",
    "BandwidthSweep",
    "DensityTestResult",
    "SweepResult",
    "SweepRow",
    "adjust_pvalues",
    "bandwidth_sweep",
    "covariate_balance",
    "default_scan_grid",
    "density_test",
    "donut_sweep",
    "exposure_discontinuity_scan",
    "normal_p_value",
    "placebo_cutoffs",
]

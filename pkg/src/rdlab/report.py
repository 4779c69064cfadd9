"""Full analysis pipeline and its JSON report."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from typing import Any, Mapping

import numpy as np

from . import __version__
from .data import ColumnMapping, RdDataset, RdDesign, ValidationReport, load_dataset, validate_design
from .diagnostics import (
    CORRECTIONS,
    BalanceTable,
    BandwidthSweep,
    DensityTestResult,
    SweepResult,
    bandwidth_sweep,
    covariate_balance,
    density_test,
    donut_sweep,
    exposure_discontinuity_scan,
    placebo_cutoffs,
)
from .errors import ConfigError, RdError
from .estimation import RdEstimate, estimate, resolve_bandwidth
from .local_randomization import DEFAULT_MAX_PERMUTATIONS, LrResult, lr_window_estimate
from .plots import binned_scatter, density_plot

SCHEMA_VERSION = "1.0"
DONUT_FRACTIONS = (0.0, 0.05, 0.1, 0.2)
BANDWIDTH_MULTIPLIERS = (0.5, 0.75, 1.0, 1.25, 1.5, 2.0)
PLACEBO_OFFSETS = (-1.0, -0.5, 0.5, 1.0)


# --------------------------------------------------------------------------
# JSON output


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k), ensure_ascii=False)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [_encode(v, indent, level + 1) for v in obj]
        return "[" + pad + ("," + pad).join(items) + end + "]"
    if hasattr(obj, "to_dict"):
        return _encode(obj.to_dict(), indent, level)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON with insertion key order, 17 significant digits, non-finite as null."""
    return _encode(obj, indent, 0) + "\n"


# --------------------------------------------------------------------------
# configuration


def _as_list(value, name: str) -> list:
    if value is None:
        return []
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, (list, tuple)):
        return list(value)
    raise ConfigError(f"{name} must be a list or a comma-separated string")


def _as_float(value, name: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be a number")
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite")
    return v


@dataclass(frozen=True)
class PipelineConfig:
    data: str
    cutoff: float
    running: str = "x"
    outcome: str = "y"
    treatment: str | None = None
    covariates: tuple[str, ...] = ()
    treated_side: str = "above"
    design: str = "sharp"
    kernel: str = "triangular"
    order: int = 1
    bandwidth: float | str = "cv"
    donut: float | None = None
    placebos: tuple[float, ...] | None = None
    covariate_adjust: bool = False
    correction: str = "benjamini_hochberg"
    seed: int = 0
    lr_window: float | None = None
    max_permutations: int = DEFAULT_MAX_PERMUTATIONS
    bins: str = "auto"
    out: str | None = None
    format: str = "json"

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any], base_dir: str | None = None) -> "PipelineConfig":
        """Build a config from a parsed document, validating types.

        A relative ``data`` path is resolved against ``base_dir`` (the config
        file's directory) when given.
        """
        cfg = {k.replace("-", "_"): v for k, v in raw.items() if v is not None}
        unknown = set(cfg) - set(cls.keys())
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        for req in ("data", "cutoff"):
            if req not in cfg:
                raise ConfigError(f"missing required setting {req!r}")
        data = str(cfg["data"])
        if base_dir and not os.path.isabs(data):
            data = os.path.join(base_dir, data)
        cfg["data"] = data
        cfg["cutoff"] = _as_float(cfg["cutoff"], "cutoff")
        cfg["covariates"] = tuple(str(c) for c in _as_list(cfg.get("covariates"), "covariates"))
        if "placebos" in cfg:
            cfg["placebos"] = tuple(_as_float(v, "placebos") for v in _as_list(cfg["placebos"], "placebos"))
        if "bandwidth" in cfg and cfg["bandwidth"] != "cv":
            cfg["bandwidth"] = _as_float(cfg["bandwidth"], "bandwidth")
        for key in ("donut", "lr_window"):
            if key in cfg:
                cfg[key] = _as_float(cfg[key], key)
        for key in ("order", "seed", "max_permutations"):
            if key in cfg:
                v = cfg[key]
                if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                    raise ConfigError(f"{key} must be an integer")
                try:
                    cfg[key] = int(v)
                except (TypeError, ValueError):
                    raise ConfigError(f"{key} must be an integer, got {v!r}") from None
        if "covariate_adjust" in cfg and not isinstance(cfg["covariate_adjust"], bool):
            raise ConfigError("covariate_adjust must be true or false")
        if cfg.get("correction", "benjamini_hochberg") not in CORRECTIONS:
            raise ConfigError(f"correction must be one of {CORRECTIONS}")
        if cfg.get("format", "json") != "json":
            raise ConfigError("only the json output format is supported")
        if cfg.get("max_permutations", 1) < 1:
            raise ConfigError("max_permutations must be >= 1")
        return cls(**cfg)

    def rd_design(self) -> RdDesign:
        return RdDesign(
            cutoff=self.cutoff,
            treated_side=self.treated_side,
            kind=self.design,
            kernel=self.kernel,
            order=self.order,
            bandwidth=self.bandwidth,
            covariate_adjust=self.covariate_adjust,
            covariates=self.covariates if self.covariate_adjust else (),
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


# --------------------------------------------------------------------------
# assumption matrix

_CORE_ROWS = (
    ("continuous_assignment", "assignment rule",
     "Eligibility is set by a continuous pre-exposure variable with a clearly defined cutoff", "testable"),
    ("cutoff_unique_to_exposure", "assignment rule",
     "No other exposure is assigned by the same cutoff", "theoretical only"),
    ("no_other_discontinuities", "assignment rule",
     "Exposure probability has no jumps away from the cutoff", "testable"),
    ("no_manipulation", "manipulation",
     "Units cannot sort themselves across the cutoff; the cutoff is set independently of their values", "indirectly testable"),
    ("balance_observed", "exchangeability",
     "Units near the cutoff are comparable in measured characteristics", "testable"),
    ("balance_unobserved", "exchangeability",
     "Units near the cutoff are comparable in unmeasured characteristics", "not testable"),
    ("outcome_continuity", "exchangeability",
     "Without exposure, the expected outcome would not change at the cutoff", "testable"),
)

_FUZZY_ROWS = (
    ("relevance", "Crossing the cutoff shifts the probability of exposure", "testable"),
    ("monotonicity", "Crossing the cutoff never discourages exposure for anyone (no defiers)", "theoretical only"),
    ("exclusion", "The cutoff affects the outcome only through exposure", "theoretical only"),
)


def _status(concern: bool | None) -> str:
    if concern is None:
        return "not_run"
    return "concern" if concern else "pass"


def _sweep_flags(sweep: SweepResult | dict | None, skip: float | None = None, alpha: float = 0.05) -> tuple[int, int]:
    if not isinstance(sweep, SweepResult):
        return 0, 0
    rows = [r for r in sweep if r.ok and r.value != skip]
    hits = sum(1 for r in rows if (r.flagged if r.flagged is not None else r.p_raw < alpha))
    return hits, len(rows)


def assumption_matrix(report: "AnalysisReport") -> dict:
    """One entry per design condition: testability, status and the evidence used.

    Untestable conditions are carried with status ``not_testable``.
    """
    alpha = 0.05
    v = report.validation
    rows = []
    for key, group, text, testability in _CORE_ROWS:
        evidence: dict = {}
        concern: bool | None = None
        if testability in ("theoretical only", "not testable"):
            rows.append({"key": key, "group": group, "condition": text, "testability": testability,
                         "status": "not_testable", "evidence": evidence})
            continue
        if key == "continuous_assignment":
            evidence = {"cutoff_in_range": v.cutoff_in_range, "distinct_x_fraction": report.distinct_x_fraction,
                        "n_ties_at_cutoff": v.n_ties}
            concern = (not v.cutoff_in_range) or report.distinct_x_fraction < 0.5
        elif key == "no_other_discontinuities":
            scan_hits, scan_n = _sweep_flags(report.scan)
            pl_hits, pl_n = _sweep_flags(report.placebo, skip=report.design.cutoff, alpha=alpha)
            evidence = {"scan_flagged": scan_hits, "scan_points": scan_n,
                        "placebo_rejections": pl_hits, "placebo_cutoffs": pl_n}
            if scan_n + pl_n:
                concern = scan_hits + pl_hits > 0
        elif key == "no_manipulation":
            dt = report.density
            if isinstance(dt, DensityTestResult):
                evidence = {"density_p": dt.p}
                concern = dt.p < alpha
        elif key == "balance_observed":
            bt = report.balance
            ok = [r for r in bt.rows if r.p_adjusted is not None] if bt is not None else []
            if ok:
                evidence = {"correction": bt.correction, "min_p_adjusted": min(r.p_adjusted for r in ok),
                            "n_covariates": len(bt.rows)}
                concern = any(r.p_adjusted < alpha for r in ok)
        elif key == "outcome_continuity":
            donut = [r for r in report.donut if r.ok] if report.donut is not None else []
            if donut and report.estimate is not None:
                base = report.estimate
                shifts = [abs(r.estimate.tau - base.tau) / base.se for r in donut if base.se > 0]
                evidence = {"max_donut_shift_in_se": max(shifts) if shifts else 0.0}
                concern = bool(shifts) and max(shifts) > 2.0
        rows.append({"key": key, "group": group, "condition": text, "testability": testability,
                     "status": _status(concern), "evidence": evidence})

    fuzzy = []
    if report.design.kind == "fuzzy":
        fs = report.estimate.first_stage if report.estimate is not None else None
        for key, text, testability in _FUZZY_ROWS:
            if key == "relevance" and fs is not None:
                fuzzy.append({"key": key, "condition": text, "testability": testability,
                              "status": _status(fs.weak),
                              "evidence": {"f_statistic": fs.f_statistic, "weak": fs.weak}})
            else:
                fuzzy.append({"key": key, "condition": text, "testability": testability,
                              "status": "not_testable", "evidence": {}})
    return {"core": rows, "fuzzy": fuzzy}


# --------------------------------------------------------------------------
# pipeline


def _error_entry(exc: Exception) -> dict:
    code = getattr(exc, "code", "SINGULAR_DESIGN")
    return {"error": {"code": code, "message": str(exc)}}


def _attempt(fn):
    try:
        return fn()
    except (RdError, np.linalg.LinAlgError) as exc:
        return _error_entry(exc)


@dataclass
class AnalysisReport:
    config: PipelineConfig
    design: RdDesign
    validation: ValidationReport
    bandwidth: float
    bandwidth_rule: str
    estimate: RdEstimate
    density: DensityTestResult | dict | None = None
    balance: BalanceTable | None = None
    placebo: SweepResult | None = None
    donut: SweepResult | None = None
    bandwidths: BandwidthSweep | None = None
    scan: SweepResult | dict | None = None
    local_randomization: LrResult | dict | None = None
    plots: dict = field(default_factory=dict)
    input_sha256: str = ""
    n_rows: int = 0
    distinct_x_fraction: float = 1.0
    generated_at: str = ""

    def to_dict(self) -> dict:
        def d(v):
            if v is None:
                return None
            if isinstance(v, dict):
                return v
            if isinstance(v, DensityTestResult):
                return v.to_dict()
            return v.to_dict()

        design = self.design.to_dict()
        design["bandwidth_selected"] = self.bandwidth
        design["bandwidth_rule"] = self.bandwidth_rule
        return {
            "schema_version": SCHEMA_VERSION,
            "generated_at": self.generated_at,
            "provenance": {
                "toolkit": "rdlab",
                "version": __version__,
                "input_sha256": self.input_sha256,
                "n_rows_used": self.n_rows,
                "seed": self.config.seed,
            },
            "config": self.config.to_dict(),
            "design": design,
            "validation": self.validation.to_dict(),
            "estimate": self.estimate.to_dict(),
            "diagnostics": {
                "density_test": d(self.density),
                "covariate_balance": d(self.balance),
                "placebo_cutoffs": d(self.placebo),
                "donut": d(self.donut),
                "bandwidth_sensitivity": d(self.bandwidths),
                "exposure_scan": d(self.scan),
            },
            "local_randomization": d(self.local_randomization),
            "assumptions": assumption_matrix(self),
            "plots": {k: d(v) for k, v in self.plots.items()},
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 16), b""):
                h.update(block)
    except OSError:
        return ""
    return h.hexdigest()


def default_placebos(data: RdDataset, c: float, h: float) -> list[float]:
    lo, hi = float(data.x.min()), float(data.x.max())
    return sorted({c, *(c + o * h for o in PLACEBO_OFFSETS if lo < c + o * h < hi)})


def run_pipeline(config: PipelineConfig | Mapping[str, Any], now: datetime | None = None) -> AnalysisReport:
    """Validate, pick the bandwidth, estimate, run every diagnostic, build plots.

    Diagnostic failures are recorded in place; failures of loading, design
    validation or the main estimate propagate as ``RdError``.
    """
    if not isinstance(config, PipelineConfig):
        config = PipelineConfig.from_mapping(config)
    design = config.rd_design()
    mapping = ColumnMapping(
        running=config.running,
        outcome=config.outcome,
        treatment=config.treatment,
        covariates=config.covariates,
    )
    data = load_dataset(config.data, mapping)
    validation = validate_design(data, design)
    h = resolve_bandwidth(data, design)
    main = estimate(data, design, h)
    c = design.cutoff

    placebos = default_placebos(data, c, h) if config.placebos is None else sorted({c, *config.placebos})
    radii = [f * h for f in DONUT_FRACTIONS]
    if config.donut is not None:
        radii.append(config.donut)
    half = h / 2.0 if config.lr_window is None else config.lr_window

    plots: dict = {"outcome": _attempt(lambda: binned_scatter(data, design, "outcome", config.bins, h))}
    if data.has_treatment:
        plots["treatment"] = _attempt(lambda: binned_scatter(data, design, "treatment", config.bins, h))
    for name in data.covariate_names:
        plots[f"covariate:{name}"] = _attempt(lambda name=name: binned_scatter(data, design, name, config.bins, h))
    plots["density"] = _attempt(lambda: density_plot(data, c))

    return AnalysisReport(
        config=config,
        design=design,
        validation=validation,
        bandwidth=h,
        bandwidth_rule="cv" if design.fixed_bandwidth is None else "fixed",
        estimate=main,
        density=_attempt(lambda: density_test(data, c)),
        balance=covariate_balance(data, design, config.correction, h=h),
        placebo=placebo_cutoffs(data, design, placebos, h=h),
        donut=donut_sweep(data, design, radii, h=h),
        bandwidths=bandwidth_sweep(data, design, [m * h for m in BANDWIDTH_MULTIPLIERS], h=h),
        scan=exposure_discontinuity_scan(data, design, h=h) if data.has_treatment else {"error": {"code": "NOT_RUN", "message": "no treatment column"}},
        local_randomization=_attempt(lambda: lr_window_estimate(
            data, c, (c - half, c + half), config.max_permutations, config.seed, design.treated_side)),
        plots=plots,
        input_sha256=_file_digest(config.data),
        n_rows=data.n,
        distinct_x_fraction=float(np.unique(data.x).size / data.n),
        generated_at=(now or datetime.now(timezone.utc)).isoformat(timespec="seconds"),
    )


__all__ = ["AnalysisReport", "PipelineConfig", "assumption_matrix", "default_placebos", "dumps", "run_pipeline"]

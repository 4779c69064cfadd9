"""Seeded data-generating processes and a Monte Carlo harness.

Randomness comes from numpy's counter-based Philox generator keyed through
``SeedSequence``; ``(spec, seed)`` therefore fixes the output on every
platform. Replication ``r`` of a Monte Carlo run with master seed ``s`` uses
the 64-bit seed ``derive_seed(s, r)``.

Every family is a parameterisation of one generic model::

    y = intercept + slope*(x-c) + curvature*(x-c)**2
        + slope_change*(x-c)*T + tau*D + noise_sd*e

where ``T`` is the assignment indicator (ties at ``c`` are treated) and ``D``
the treatment received. Family-specific steps (density manipulation, heaping,
fuzzy compliance, covariates) are switched on by parameters.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .data import RdDataset, RdDesign, treated_mask
from .diagnostics import covariate_balance, density_test, exposure_discontinuity_scan, placebo_cutoffs
from .errors import InvalidSpec, RdError
from .estimation import Z95, estimate_fuzzy, normal_p_value, outcome_jump, slope_change

FAMILIES = (
    "sharp_cash_transfer",
    "fuzzy_obstetrician",
    "manipulation",
    "no_manipulation",
    "outcome_jump",
    "null_flat",
    "kink",
    "heaped",
    "custom",
)

_BASE = {
    "cutoff": 0.0,
    "treated_side": "above",
    "x_dist": "normal",
    "x_mean": 0.0,
    "x_sd": 1.0,
    "x_low": -1.0,
    "x_high": 1.0,
    "intercept": 0.5,
    "slope": 0.5,
    "curvature": 0.25,
    "slope_change": 0.0,
    # sharp | fuzzy | smooth | randomized
    "treatment_model": "sharp",
    "baseline_low": 0.05,
    "baseline_high": 0.6,
    "baseline_scale": 0.5,
    "smooth_slope": 1.5,
    "manip_fraction": 0.0,
    "manip_band_sd": 0.1,
    "heap_fraction": 0.0,
    "heap_shift": 0.0,
    "covariate_names": [],
    "covariate_means": None,
    "covariate_sds": None,
    "covariate_slopes": None,
    "covariate_jumps": None,
}

# (true_tau, noise_sd, compliance_jump, parameter overrides)
FAMILY_DEFAULTS: dict[str, tuple[float, float, float, dict]] = {
    "sharp_cash_transfer": (5.0, 5.0, 1.0, {
        "cutoff": 30.0, "x_mean": 30.0, "x_sd": 10.0, "intercept": 50.0, "slope": 0.3, "curvature": 0.0,
    }),
    "fuzzy_obstetrician": (0.5, 1.0, 0.5, {
        "cutoff": 259.0, "treated_side": "below", "x_mean": 266.0, "x_sd": 14.0,
        "intercept": 8.5, "slope": 0.02, "curvature": 0.0, "treatment_model": "fuzzy",
        "baseline_scale": 7.0,
    }),
    "manipulation": (0.0, 1.0, 1.0, {"curvature": 0.0, "manip_fraction": 0.3}),
    "no_manipulation": (0.0, 1.0, 1.0, {"curvature": 0.0}),
    "outcome_jump": (2.0, 1.0, 1.0, {}),
    "null_flat": (0.0, 1.0, 1.0, {"x_dist": "uniform", "treatment_model": "smooth"}),
    "kink": (1.5, 0.5, 1.0, {"x_dist": "uniform", "slope": 1.0, "curvature": 0.0}),
    "heaped": (2.0, 1.0, 1.0, {"heap_fraction": 0.05, "heap_shift": 1.5}),
    "custom": (2.0, 1.0, 1.0, {}),
}

# Assignment-variable templates for birth-cohort settings
PRESETS: dict[str, tuple[str, dict]] = {
    "poverty-30": ("sharp_cash_transfer", {}),
    "gestage-259": ("fuzzy_obstetrician", {}),
    "gestage-224": ("fuzzy_obstetrician", {"parameters": {"cutoff": 224.0, "x_mean": 238.0, "x_sd": 18.0}}),
    "birthweight-2500": ("outcome_jump", {
        "true_tau": 0.3, "noise_sd": 1.2,
        "parameters": {"cutoff": 2500.0, "treated_side": "below", "x_mean": 2900.0, "x_sd": 550.0,
                       "intercept": 11.0, "slope": 0.0008, "curvature": 0.0},
    }),
    "birthweight-1500": ("outcome_jump", {
        "true_tau": 0.3, "noise_sd": 1.2,
        "parameters": {"cutoff": 1500.0, "treated_side": "below", "x_mean": 1700.0, "x_sd": 450.0,
                       "intercept": 10.5, "slope": 0.0008, "curvature": 0.0},
    }),
    "birthweight-4000": ("outcome_jump", {
        "true_tau": -0.2, "noise_sd": 1.2,
        "parameters": {"cutoff": 4000.0, "x_mean": 3500.0, "x_sd": 500.0,
                       "intercept": 11.5, "slope": 0.0008, "curvature": 0.0},
    }),
    "birthweight-2500-covariates": ("outcome_jump", {
        "true_tau": 0.3, "noise_sd": 1.2,
        "parameters": {"cutoff": 2500.0, "treated_side": "below", "x_mean": 2900.0, "x_sd": 550.0,
                       "intercept": 11.0, "slope": 0.0008, "curvature": 0.0,
                       "covariate_names": ["maternal_age", "education_years", "prepregnancy_bmi", "household_income"],
                       "covariate_means": [32.0, 14.0, 22.5, 30.0],
                       "covariate_sds": [4.5, 3.0, 3.5, 12.0],
                       "covariate_slopes": [0.1, 0.1, -0.1, 0.15],
                       "covariate_jumps": [0.0, 0.0, 0.8, 0.0]},
    }),
    "maternal-age-35": ("custom", {
        "true_tau": 0.4, "noise_sd": 1.0,
        "parameters": {"cutoff": 35.0, "x_mean": 31.0, "x_sd": 5.0, "intercept": 1.0, "slope": 0.02, "curvature": 0.0},
    }),
    "maternal-age-18": ("custom", {
        "true_tau": -0.3, "noise_sd": 1.0,
        "parameters": {"cutoff": 18.0, "x_mean": 22.0, "x_sd": 5.0, "intercept": 1.0, "slope": 0.02, "curvature": 0.0},
    }),
    "calendar-time": ("custom", {
        "true_tau": 1.0, "noise_sd": 2.0,
        "parameters": {"cutoff": 0.0, "x_dist": "uniform", "x_low": -365.0, "x_high": 365.0,
                       "intercept": 10.0, "slope": 0.002, "curvature": 0.0},
    }),
}


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process description.

    ``true_tau``, ``noise_sd`` and ``compliance_jump`` default to the family
    values when None; ``parameters`` overrides individual model knobs. For the
    kink family ``true_tau`` is the slope change at the cutoff.
    """

    family: str
    n: int = 2000
    true_tau: float | None = None
    noise_sd: float | None = None
    compliance_jump: float | None = None
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise InvalidSpec(f"n must be a positive integer, got {self.n!r}")
        if self.noise_sd is not None and not self.noise_sd > 0:
            raise InvalidSpec("noise_sd must be > 0")
        if self.compliance_jump is not None and not 0 < self.compliance_jump <= 1:
            raise InvalidSpec("compliance_jump must lie in (0, 1]")
        unknown = set(self.parameters) - set(_BASE)
        if unknown:
            raise InvalidSpec(f"unknown parameters {sorted(unknown)}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "parameters", dict(self.parameters))

    @classmethod
    def preset(cls, name: str, n: int = 2000, **overrides) -> "DgpSpec":
        try:
            family, kw = PRESETS[name]
        except KeyError:
            raise InvalidSpec(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        kw = {**kw, **overrides}
        kw["parameters"] = {**PRESETS[name][1].get("parameters", {}), **overrides.get("parameters", {})}
        return cls(family=family, n=n, **kw)

    def resolved(self) -> dict:
        tau, noise, comp, over = FAMILY_DEFAULTS[self.family]
        p = {**_BASE, **over, **self.parameters}
        p["true_tau"] = tau if self.true_tau is None else float(self.true_tau)
        p["noise_sd"] = noise if self.noise_sd is None else float(self.noise_sd)
        p["compliance_jump"] = comp if self.compliance_jump is None else float(self.compliance_jump)
        if p["x_dist"] not in ("normal", "uniform"):
            raise InvalidSpec(f"x_dist must be 'normal' or 'uniform', got {p['x_dist']!r}")
        if p["treated_side"] not in ("above", "below"):
            raise InvalidSpec("treated_side must be 'above' or 'below'")
        if p["treatment_model"] not in ("sharp", "fuzzy", "smooth", "randomized"):
            raise InvalidSpec(f"unknown treatment_model {p['treatment_model']!r}")
        if not 0 <= p["manip_fraction"] <= 1 or not 0 <= p["heap_fraction"] < 1:
            raise InvalidSpec("manip_fraction must be in [0, 1] and heap_fraction in [0, 1)")
        if p["x_dist"] == "uniform" and not p["x_low"] < p["x_high"]:
            raise InvalidSpec("x_low must be below x_high")
        if p["x_dist"] == "normal" and not p["x_sd"] > 0:
            raise InvalidSpec("x_sd must be > 0")
        k = len(p["covariate_names"])
        for key, default in (("covariate_means", 0.0), ("covariate_sds", 1.0), ("covariate_slopes", 0.0), ("covariate_jumps", 0.0)):
            vals = [default] * k if p[key] is None else [float(v) for v in p[key]]
            if len(vals) != k:
                raise InvalidSpec(f"{key} must have one entry per covariate")
            p[key] = vals
        if self.family == "kink":
            p["slope_change"] = p["true_tau"]
            p["jump"] = 0.0
        else:
            p["jump"] = p["true_tau"]
        return p

    @property
    def cutoff(self) -> float:
        return float(self.resolved()["cutoff"])

    @property
    def treated_side(self) -> str:
        return self.resolved()["treated_side"]

    @property
    def tau(self) -> float:
        return self.resolved()["true_tau"]

    def design(self, **kw) -> RdDesign:
        """Design matching this DGP's cutoff, side and natural kind."""
        kind = {"fuzzy_obstetrician": "fuzzy", "kink": "kink"}.get(self.family, "sharp")
        if self.resolved()["treatment_model"] == "fuzzy" and self.family != "kink":
            kind = "fuzzy"
        base = {"cutoff": self.cutoff, "treated_side": self.treated_side, "kind": kind}
        base.update(kw)
        return RdDesign(**base)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "true_tau": self.true_tau,
            "noise_sd": self.noise_sd,
            "compliance_jump": self.compliance_jump,
            "parameters": dict(self.parameters),
        }


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & (2**64 - 1))))


def derive_seed(seed: int, rep: int) -> int:
    """64-bit seed for replication ``rep``; independent of every other rep."""
    state = np.random.SeedSequence([int(seed) & (2**64 - 1), int(rep)]).generate_state(1, np.uint64)
    return int(state[0])


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def generate(spec: DgpSpec, seed: int) -> RdDataset:
    """Draw a dataset from ``spec``; deterministic in ``(spec, seed)``."""
    p = spec.resolved()
    rng = make_rng(seed)
    n = spec.n
    c = float(p["cutoff"])
    side = p["treated_side"]
    orient = 1.0 if side == "above" else -1.0
    n_heap = int(round(p["heap_fraction"] * n))
    n_reg = n - n_heap

    # draw order is part of the determinism contract; append new draws at the end
    if p["x_dist"] == "normal":
        x = p["x_mean"] + p["x_sd"] * rng.standard_normal(n_reg)
        x_scale = p["x_sd"]
    else:
        x = rng.uniform(p["x_low"], p["x_high"], n_reg)
        x_scale = (p["x_high"] - p["x_low"]) / 2.0
    e = rng.standard_normal(n)
    u_treat = rng.random(n)
    u_manip = rng.random(n_reg)
    k = len(p["covariate_names"])
    e_cov = rng.standard_normal((n, k))
    perm = rng.permutation(n)

    if p["manip_fraction"] > 0:
        width = p["manip_band_sd"] * float(np.std(x, ddof=1))
        if side == "above":
            band = (x >= c - width) & (x < c)
        else:
            band = (x <= c + width) & (x > c)
        move = band & (u_manip < p["manip_fraction"])
        x = np.where(move, x + orient * width, x)

    x = np.concatenate([x, np.full(n_heap, c)])
    t = treated_mask(x, c, side).astype(float)
    z = (x - c) / x_scale

    model = p["treatment_model"]
    if model == "sharp":
        d = t
    elif model == "fuzzy":
        jump = p["compliance_jump"]
        g = p["baseline_low"] + (p["baseline_high"] - p["baseline_low"]) * _logistic(orient * (x - c) / p["baseline_scale"])
        prob = np.where(t == 1, jump + (1 - jump) * g, (1 - jump) * g)
        d = (u_treat < prob).astype(float)
    elif model == "smooth":
        d = (u_treat < _logistic(p["smooth_slope"] * z)).astype(float)
    else:
        t = np.zeros(n)
        t[perm[: n // 2]] = 1.0
        d = t

    xc = x - c
    y = (
        p["intercept"]
        + p["slope"] * xc
        + p["curvature"] * xc * xc
        + p["slope_change"] * xc * t
        + p["jump"] * d
        + p["noise_sd"] * e
    )
    if n_heap:
        y[n_reg:] += p["heap_shift"]

    cov = np.empty((n, k))
    for j in range(k):
        cov[:, j] = p["covariate_means"][j] + p["covariate_sds"][j] * (
            p["covariate_slopes"][j] * z + p["covariate_jumps"][j] * t + e_cov[:, j]
        )
    return RdDataset(x=x, y=y, d=d, covariates=cov, covariate_names=tuple(p["covariate_names"]))


# --------------------------------------------------------------------------
# Monte Carlo harness

ANALYSES = ("sharp", "fuzzy", "kink", "density_test", "placebo", "balance", "scan")


@dataclass(frozen=True)
class McSummary:
    reps: int
    mean_tau: float
    sd_tau: float
    mean_se: float
    coverage_95: float
    rejection_rate: float
    failures: int
    analysis: str = ""
    locations: tuple[float | str, ...] = ()
    rejection_by_location: tuple[float, ...] = ()
    flag_rate_by_location: tuple[float, ...] = ()
    taus: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        out = {
            "analysis": self.analysis,
            "reps": self.reps,
            "mean_tau": self.mean_tau,
            "sd_tau": self.sd_tau,
            "mean_se": self.mean_se,
            "coverage_95": self.coverage_95,
            "rejection_rate": self.rejection_rate,
            "failures": self.failures,
        }
        if self.locations:
            out["locations"] = list(self.locations)
            out["rejection_by_location"] = list(self.rejection_by_location)
            if self.flag_rate_by_location:
                out["flag_rate_by_location"] = list(self.flag_rate_by_location)
        return out


@dataclass
class _Rep:
    taus: list = field(default_factory=list)
    ses: list = field(default_factory=list)
    pvals: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    any_reject: bool = False
    failed: bool = False


def _run_rep(spec: DgpSpec, design: RdDesign, analysis: str, seed: int, truth: float, opts: dict) -> _Rep:
    data = generate(spec, seed)
    rep = _Rep()
    try:
        if analysis in ("sharp", "fuzzy", "kink"):
            fn = {"sharp": outcome_jump, "fuzzy": estimate_fuzzy, "kink": slope_change}[analysis]
            est = fn(data, design, design.fixed_bandwidth)
            rep.taus, rep.ses, rep.pvals = [est.tau], [est.se], [est.p_value]
        elif analysis == "density_test":
            res = density_test(data, design.cutoff)
            rep.taus, rep.ses, rep.pvals = [res.theta], [res.se], [res.p]
        elif analysis == "placebo":
            sweep = placebo_cutoffs(data, design, opts["placebos"], h=design.fixed_bandwidth)
            for row in sweep:
                if not row.ok:
                    rep.failed = True
                    rep.taus.append(math.nan), rep.ses.append(math.nan), rep.pvals.append(math.nan)
                else:
                    rep.taus.append(row.estimate.tau), rep.ses.append(row.estimate.se), rep.pvals.append(row.estimate.p_value)
        elif analysis == "balance":
            table = covariate_balance(data, design, opts.get("correction", "benjamini_hochberg"), h=design.fixed_bandwidth)
            for row in table.rows:
                if row.estimate is None:
                    rep.failed = True
                    rep.taus.append(math.nan), rep.ses.append(math.nan), rep.pvals.append(math.nan)
                else:
                    rep.taus.append(row.estimate.tau), rep.ses.append(row.estimate.se), rep.pvals.append(row.p_raw)
                    rep.any_reject |= row.p_adjusted < 0.05
        elif analysis == "scan":
            sweep = exposure_discontinuity_scan(data, design, opts["grid"], h=design.fixed_bandwidth)
            for row in sweep:
                if not row.ok:
                    rep.failed = True
                    rep.taus.append(math.nan), rep.ses.append(math.nan), rep.pvals.append(math.nan), rep.flags.append(math.nan)
                else:
                    rep.taus.append(row.estimate.tau), rep.ses.append(row.estimate.se), rep.pvals.append(row.p_raw)
                    rep.flags.append(float(row.flagged))
            rep.any_reject = any(f == 1.0 for f in rep.flags)
    except RdError:
        return _Rep(failed=True)
    if analysis not in ("balance", "scan"):
        rep.any_reject = any(p < 0.05 for p in rep.pvals if not math.isnan(p))
    return rep


def monte_carlo(
    spec: DgpSpec,
    design: RdDesign,
    analysis: str,
    reps: int,
    seed: int,
    *,
    placebos: Sequence[float] | None = None,
    grid: Sequence[float] | None = None,
    correction: str = "benjamini_hochberg",
    workers: int = 1,
) -> McSummary:
    """Replicate ``analysis`` on ``reps`` fresh draws of ``spec``.

    Coverage is measured against the DGP's true effect for the estimator
    analyses and against zero for the test analyses. Rejection is p < 0.05 for
    H0: effect = 0; for ``balance`` and ``scan`` it is any adjusted rejection.
    Failed replications are counted and skipped. ``design`` should carry a
    fixed bandwidth; with ``"cv"`` every replication re-selects it.
    """
    if analysis not in ANALYSES:
        raise InvalidSpec(f"unknown analysis {analysis!r}; choose from {ANALYSES}")
    if reps < 1:
        raise InvalidSpec("reps must be >= 1")
    if analysis == "placebo" and not placebos:
        raise InvalidSpec("placebo analysis needs placebo cutoffs")
    if analysis == "scan" and not grid:
        raise InvalidSpec("scan analysis needs a grid")
    truth = spec.tau if analysis in ("sharp", "fuzzy", "kink") else 0.0
    opts = {"placebos": placebos, "grid": grid, "correction": correction}
    seeds = [derive_seed(seed, r) for r in range(reps)]

    def one(s):
        return _run_rep(spec, design, analysis, s, truth, opts)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]

    if analysis in ("placebo", "scan", "balance"):
        width = max((len(r.taus) for r in results), default=0)
    else:
        width = 1
    T = np.full((reps, width), np.nan)
    S = np.full((reps, width), np.nan)
    P = np.full((reps, width), np.nan)
    F = np.full((reps, width), np.nan)
    for i, r in enumerate(results):
        if r.taus:
            T[i, : len(r.taus)] = r.taus
            S[i, : len(r.ses)] = r.ses
            P[i, : len(r.pvals)] = r.pvals
        if r.flags:
            F[i, : len(r.flags)] = r.flags
    failures = sum(r.failed for r in results)
    ok = np.isfinite(T)
    if not ok.any():
        return McSummary(reps, math.nan, math.nan, math.nan, 0.0, 0.0, failures, analysis)
    t, s = T[ok], S[ok]
    covered = np.abs(t - truth) <= Z95 * s
    done = [r for r in results if r.taus and not all(math.isnan(v) for v in r.taus)]
    rejection = float(np.mean([r.any_reject for r in done])) if done else 0.0

    locations: tuple = ()
    by_loc: tuple = ()
    flag_loc: tuple = ()
    if analysis in ("placebo", "scan", "balance"):
        if analysis == "placebo":
            locations = tuple(sorted({float(v) for v in placebos}))
        elif analysis == "scan":
            locations = tuple(sorted({float(v) for v in grid if float(v) != design.cutoff}))
        else:
            locations = tuple(generate(spec, seeds[0]).covariate_names)
        with np.errstate(invalid="ignore"):
            by_loc = tuple(float(np.sum(P[np.isfinite(P[:, j]), j] < 0.05) / max(1, np.isfinite(P[:, j]).sum())) for j in range(width))
            if analysis == "scan":
                flag_loc = tuple(float(np.nansum(F[:, j]) / max(1, np.isfinite(F[:, j]).sum())) for j in range(width))

    return McSummary(
        reps=reps,
        mean_tau=float(np.mean(t)),
        sd_tau=float(np.std(t, ddof=1)) if t.size > 1 else 0.0,
        mean_se=float(np.mean(s)),
        coverage_95=float(np.mean(covered)),
        rejection_rate=rejection,
        failures=int(failures),
        analysis=analysis,
        locations=locations,
        rejection_by_location=by_loc,
        flag_rate_by_location=flag_loc,
        taus=tuple(float(v) for v in t) if width == 1 else (),
    )


def difference_in_means(data: RdDataset) -> tuple[float, float]:
    """Treated-minus-control mean of y by d, with the Neyman standard error."""
    if data.d is None:
        raise InvalidSpec("difference in means requires a treatment column")
    t = data.d == 1
    y1, y0 = data.y[t], data.y[~t]
    diff = float(y1.mean() - y0.mean())
    se = math.sqrt(y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size)
    return diff, se


@dataclass(frozen=True)
class EfficiencyResult:
    var_rd: float
    var_rct: float
    ratio: float
    reps: int

    def to_dict(self) -> dict:
        return {"var_rd": self.var_rd, "var_rct": self.var_rct, "ratio": self.ratio, "reps": self.reps}


def efficiency_ratio(spec: DgpSpec, design: RdDesign, reps: int, seed: int) -> EfficiencyResult:
    """Monte Carlo variance of the RD estimator over that of a randomised trial.

    The trial variant reuses the DGP at equal n with treatment assigned by
    complete randomisation and estimates the effect by difference in means.
    """
    rct = DgpSpec(spec.family, spec.n, spec.true_tau, spec.noise_sd, spec.compliance_jump,
                  {**spec.parameters, "treatment_model": "randomized"})
    rd_t, rct_t = [], []
    for r in range(reps):
        s = derive_seed(seed, r)
        rd_t.append(outcome_jump(generate(spec, s), design, design.fixed_bandwidth).tau)
        rct_t.append(difference_in_means(generate(rct, s))[0])
    v_rd = float(np.var(rd_t, ddof=1))
    v_rct = float(np.var(rct_t, ddof=1))
    return EfficiencyResult(v_rd, v_rct, v_rd / v_rct, reps)


__all__ = [
    "ANALYSES",
    "DgpSpec",
    "EfficiencyResult",
    "FAMILIES",
    "McSummary",
    "PRESETS",
    "derive_seed",
    "difference_in_means",
    "efficiency_ratio",
    "generate",
    "make_rng",
    "monte_carlo",
    "normal_p_value",
]

"""Kernel-weighted local polynomial RD estimators and bandwidth selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import linalg, stats

from .data import RdDataset, RdDesign, eligibility_consistency, right_mask, treated_mask
from .errors import InsufficientData, SharpInconsistent, SingularDesign, WeakOrNoFirstStage

Z95 = float(stats.norm.ppf(0.975))
WEAK_F = 10.0
# |first-stage jump| below this makes the Wald ratio undefined
MIN_JUMP = 1e-8
# condition-number guard on the column-scaled weighted design
_RCOND = 1e-10

Target = Union[str, int]


def kernel_weight(u, kernel: str = "triangular"):
    """Kernel weight at scaled distance ``u``; zero outside ``|u| <= 1``.

    Works elementwise on arrays and returns a float for scalar input.
    """
    a = np.abs(np.asarray(u, dtype=float))
    inside = a <= 1.0
    if kernel == "triangular":
        w = 1.0 - a
    elif kernel == "uniform":
        w = np.ones_like(a)
    elif kernel == "epanechnikov":
        w = 0.75 * (1.0 - a * a)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    w = np.where(inside, w, 0.0)
    return float(w) if w.ndim == 0 else w


def normal_p_value(tau: float, se: float) -> float:
    """Two-sided normal p-value of ``tau / se``.

    The standard error is floored at 1e-12 * max(1, |tau|) so that exact fits
    (rounding-level jump and se) report p = 1 rather than noise.
    """
    floor = 1e-12 * max(1.0, abs(tau))
    return float(2.0 * stats.norm.sf(abs(tau) / max(se, floor)))


@dataclass(frozen=True)
class PolyFit:
    coefficients: np.ndarray
    robust_covariance: np.ndarray
    n_effective: int
    side: str
    bandwidth: float

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def predict(self, xc: np.ndarray) -> np.ndarray:
        """Evaluate the fitted polynomial at centered points ``x - c``."""
        return np.polynomial.polynomial.polyval(np.asarray(xc, dtype=float), self.coefficients)


@dataclass(frozen=True)
class FirstStage:
    jump: float
    se: float
    f_statistic: float
    weak: bool

    def to_dict(self) -> dict:
        return {"jump": self.jump, "se": self.se, "f_statistic": self.f_statistic, "weak": self.weak}


@dataclass(frozen=True)
class RdEstimate:
    tau: float
    se: float
    ci_low: float
    ci_high: float
    n_left: int
    n_right: int
    bandwidth_used: float
    kind: str
    first_stage: FirstStage | None = None
    itt: float | None = None

    @classmethod
    def from_tau(cls, tau, se, *, n_left, n_right, h, kind, first_stage=None, itt=None):
        tau, se = float(tau), float(se)
        return cls(
            tau=tau,
            se=se,
            ci_low=tau - Z95 * se,
            ci_high=tau + Z95 * se,
            n_left=int(n_left),
            n_right=int(n_right),
            bandwidth_used=float(h),
            kind=kind,
            first_stage=first_stage,
            itt=None if itt is None else float(itt),
        )

    @property
    def p_value(self) -> float:
        return normal_p_value(self.tau, self.se)

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "tau": self.tau,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "n_left": self.n_left,
            "n_right": self.n_right,
            "bandwidth_used": self.bandwidth_used,
            "first_stage": None if self.first_stage is None else self.first_stage.to_dict(),
        }
        if self.itt is not None:
            out["itt"] = self.itt
        return out


# --------------------------------------------------------------------------
# weighted least squares core


@dataclass(frozen=True)
class _Wls:
    beta: np.ndarray  # k x m
    bread: np.ndarray  # (X'WX)^-1
    scores: np.ndarray  # rows w_i * X_i
    resid: np.ndarray  # n x m
    n_eff: int

    @property
    def dof(self) -> float:
        k = self.beta.shape[0]
        return self.n_eff / (self.n_eff - k)

    def cov(self, a: int = 0, b: int | None = None) -> np.ndarray:
        """HC1 sandwich covariance between coefficients of targets a and b."""
        b = a if b is None else b
        s = self.scores
        meat = s.T @ (s * (self.resid[:, a] * self.resid[:, b])[:, None])
        return self.dof * (self.bread @ meat @ self.bread)


def _wls(X: np.ndarray, Y: np.ndarray, w: np.ndarray) -> _Wls:
    if Y.ndim == 1:
        Y = Y[:, None]
    keep = w > 0
    X, Y, w = X[keep], Y[keep], w[keep]
    n, k = X.shape
    if n <= k:
        raise InsufficientData(f"{n} weighted observations for {k} parameters")
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    scale = np.sqrt(np.sum(Xw * Xw, axis=0))
    if np.any(scale == 0):
        raise SingularDesign("design matrix has an all-zero column")
    q, r = np.linalg.qr(Xw / scale)
    sv = np.linalg.svd(r, compute_uv=False)
    if sv[-1] <= _RCOND * sv[0]:
        raise SingularDesign("collinear or degenerate local design")
    beta = linalg.solve_triangular(r, q.T @ (Y * sw[:, None])) / scale[:, None]
    rinv = linalg.solve_triangular(r, np.eye(k))
    bread = (rinv @ rinv.T) / np.outer(scale, scale)
    resid = Y - X @ beta
    return _Wls(beta=beta, bread=bread, scores=X * w[:, None], resid=resid, n_eff=n)


def _target_values(data: RdDataset, target: Target) -> np.ndarray:
    if target == "outcome":
        return data.y
    if target == "treatment":
        if data.d is None:
            raise InsufficientData("treatment column required")
        return data.d
    if isinstance(target, (int, np.integer)) and not isinstance(target, bool):
        return data.covariates[:, int(target)]
    if isinstance(target, str):
        return data.covariate(target)
    raise ValueError(f"unknown fit target {target!r}")


def _side_mask(data: RdDataset, design: RdDesign, side: str) -> np.ndarray:
    right = right_mask(data.x, design.cutoff, design.treated_side)
    return right if side == "right" else ~right


def _window(data: RdDataset, design: RdDesign, side: str, h: float) -> np.ndarray:
    dist = np.abs(data.x - design.cutoff)
    return _side_mask(data, design, side) & (dist <= h) & (dist >= design.donut_radius)


def _fit_side(data: RdDataset, design: RdDesign, side: str, h: float, targets: Sequence[Target], order: int | None = None):
    order = design.order if order is None else order
    Y = np.column_stack([_target_values(data, t) for t in targets])
    mask = _window(data, design, side, h) & np.all(np.isfinite(Y), axis=1)
    xc = data.x[mask] - design.cutoff
    w = kernel_weight(xc / h, design.kernel)
    n_pos = int(np.count_nonzero(w > 0))
    if n_pos < order + 2:
        raise InsufficientData(f"{n_pos} weighted observations on the {side} side within h={h:g}; need {order + 2}")
    X = np.vander(xc, order + 1, increasing=True)
    return _wls(X, Y[mask], w)


def fit_local_wls(data: RdDataset, design: RdDesign, side: str, h: float, target: Target = "outcome") -> PolyFit:
    """Kernel-weighted polynomial fit of ``target`` on ``x - c`` for one side.

    Uses observations with ``|x - c| <= h`` outside the donut. Coefficients are
    intercept first; the covariance is the HC1 sandwich.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    fit = _fit_side(data, design, side, h, [target])
    return PolyFit(
        coefficients=fit.beta[:, 0].copy(),
        robust_covariance=fit.cov(0),
        n_effective=fit.n_eff,
        side=side,
        bandwidth=float(h),
    )


def _orientation(design: RdDesign) -> float:
    return 1.0 if design.treated_side == "above" else -1.0


def _pooled(data: RdDataset, design: RdDesign, h: float, targets: Sequence[Target], order: int):
    """Pooled fit with side-specific polynomials plus additive covariates."""
    names = design.covariates or data.covariate_names
    Z = np.column_stack([data.covariate(c) for c in names]) if names else np.empty((data.n, 0))
    Y = np.column_stack([_target_values(data, t) for t in targets])
    dist = np.abs(data.x - design.cutoff)
    mask = (dist <= h) & (dist >= design.donut_radius) & np.all(np.isfinite(Y), axis=1) & np.all(np.isfinite(Z), axis=1)
    right = right_mask(data.x, design.cutoff, design.treated_side)[mask]
    xc = data.x[mask] - design.cutoff
    w = kernel_weight(xc / h, design.kernel)
    counts = [int(np.count_nonzero((w > 0) & ~right)), int(np.count_nonzero((w > 0) & right))]
    if min(counts) < order + 2:
        raise InsufficientData(f"in-window counts {counts}; need {order + 2} per side")
    P = np.vander(xc, order + 1, increasing=True)
    X = np.column_stack([P, P * right[:, None], Z[mask]])
    return _wls(X, Y[mask], w), counts


def resolve_bandwidth(data: RdDataset, design: RdDesign) -> float:
    h = design.fixed_bandwidth
    return h if h is not None else select_bandwidth_cv(data, design)


def _jump(data: RdDataset, design: RdDesign, h: float, target: Target, coef: int, kind: str) -> RdEstimate:
    """Oriented discontinuity in coefficient ``coef`` (0 level, 1 slope)."""
    sign = _orientation(design)
    if design.covariate_adjust and (design.covariates or data.covariate_names):
        fit, (n_l, n_r) = _pooled(data, design, h, [target], design.order)
        j = design.order + 1 + coef
        tau = sign * fit.beta[j, 0]
        var = fit.cov(0)[j, j]
    else:
        left = _fit_side(data, design, "left", h, [target])
        right = _fit_side(data, design, "right", h, [target])
        tau = sign * (right.beta[coef, 0] - left.beta[coef, 0])
        var = right.cov(0)[coef, coef] + left.cov(0)[coef, coef]
        n_l, n_r = left.n_eff, right.n_eff
    return RdEstimate.from_tau(tau, math.sqrt(max(var, 0.0)), n_left=n_l, n_right=n_r, h=h, kind=kind)


def outcome_jump(data: RdDataset, design: RdDesign, h: float | None = None, target: Target = "outcome") -> RdEstimate:
    """Level discontinuity in ``target`` at the cutoff, without any check on d."""
    h = resolve_bandwidth(data, design) if h is None else h
    return _jump(data, design, h, target, 0, "sharp")


def slope_change(data: RdDataset, design: RdDesign, h: float | None = None, target: Target = "outcome") -> RdEstimate:
    if design.order < 1:
        raise InsufficientData("kink estimation needs order >= 1")
    h = resolve_bandwidth(data, design) if h is None else h
    return _jump(data, design, h, target, 1, "kink")


def estimate_sharp(data: RdDataset, design: RdDesign, h: float | None = None) -> RdEstimate:
    if data.d is not None and eligibility_consistency(data, design) < 1.0:
        raise SharpInconsistent("treatment does not follow the assignment rule; use a fuzzy design")
    return outcome_jump(data, design, h)


def estimate_kink(data: RdDataset, design: RdDesign, h: float | None = None) -> RdEstimate:
    return slope_change(data, design, h)


def estimate_fuzzy(data: RdDataset, design: RdDesign, h: float | None = None) -> RdEstimate:
    """Wald ratio of outcome and treatment jumps with a delta-method se.

    Both jumps share one bandwidth and kernel. The first-stage F statistic is
    the squared z of the treatment jump.
    """
    if data.d is None:
        raise WeakOrNoFirstStage("fuzzy estimation requires a treatment column")
    h = resolve_bandwidth(data, design) if h is None else h
    sign = _orientation(design)
    targets = ["outcome", "treatment"]
    if design.covariate_adjust and (design.covariates or data.covariate_names):
        fit, (n_l, n_r) = _pooled(data, design, h, targets, design.order)
        j = design.order + 1
        jy, jd = sign * fit.beta[j, 0], sign * fit.beta[j, 1]
        v_y, v_d, c_yd = fit.cov(0)[j, j], fit.cov(1)[j, j], fit.cov(0, 1)[j, j]
    else:
        left = _fit_side(data, design, "left", h, targets)
        right = _fit_side(data, design, "right", h, targets)
        jy = sign * (right.beta[0, 0] - left.beta[0, 0])
        jd = sign * (right.beta[0, 1] - left.beta[0, 1])
        v_y = right.cov(0)[0, 0] + left.cov(0)[0, 0]
        v_d = right.cov(1)[0, 0] + left.cov(1)[0, 0]
        c_yd = right.cov(0, 1)[0, 0] + left.cov(0, 1)[0, 0]
        n_l, n_r = left.n_eff, right.n_eff
    if abs(jd) < MIN_JUMP:
        raise WeakOrNoFirstStage(f"first-stage jump {jd:.3g} is zero; the Wald ratio is undefined")
    tau = jy / jd
    var = (v_y - 2.0 * tau * c_yd + tau * tau * v_d) / (jd * jd)
    se_d = math.sqrt(max(v_d, 0.0))
    f_stat = (jd / se_d) ** 2 if se_d > 0 else math.inf
    first = FirstStage(jump=float(jd), se=se_d, f_statistic=float(f_stat), weak=bool(f_stat < WEAK_F))
    return RdEstimate.from_tau(tau, math.sqrt(max(var, 0.0)), n_left=n_l, n_right=n_r, h=h, kind="fuzzy", first_stage=first, itt=jy)


def estimate(data: RdDataset, design: RdDesign, h: float | None = None) -> RdEstimate:
    """Dispatch on ``design.kind``."""
    if design.kind == "sharp":
        return estimate_sharp(data, design, h)
    if design.kind == "fuzzy":
        return estimate_fuzzy(data, design, h)
    return estimate_kink(data, design, h)


# --------------------------------------------------------------------------
# bandwidth selection


def bandwidth_grid(data: RdDataset, design: RdDesign, points: int = 20) -> np.ndarray:
    """Geometric grid from max|x - c|/50 to max|x - c|/2."""
    r = float(np.max(np.abs(data.x - design.cutoff)))
    if r <= 0:
        raise InsufficientData("all observations sit at the cutoff")
    return np.geomspace(r / 50.0, r / 2.0, points)


def _side_cv_errors(s: np.ndarray, y: np.ndarray, s_max: float, grid: np.ndarray, kernel: str, order: int):
    """Squared boundary-prediction errors for points with s <= s_max.

    Each point is predicted from strictly farther points within h on its own
    side, so the fit mimics estimation at the cutoff. Returns a (points x grid)
    array with inf where a fit is unavailable.
    """
    idx = np.argsort(s, kind="stable")
    s, y = s[idx], y[idx]
    n_eval = int(np.searchsorted(s, s_max, side="right"))
    hi_all = np.searchsorted(s, s + grid[-1], side="right")
    p = order + 1
    out = np.full((n_eval, grid.size), np.inf)
    for i in range(n_eval):
        lo = int(np.searchsorted(s, s[i], side="right"))
        hi = int(hi_all[i])
        if hi - lo < order + 2:
            continue
        t = s[lo:hi] - s[i]
        yy = y[lo:hi]
        U = t[None, :] / grid[:, None]
        W = kernel_weight(U, kernel)
        npos = np.count_nonzero(W > 0, axis=1)
        powers = [np.ones_like(U)]
        for _ in range(2 * order):
            powers.append(powers[-1] * U)
        M = np.stack([np.sum(W * pk, axis=1) for pk in powers], axis=1)
        N = np.stack([np.sum(W * powers[k] * yy[None, :], axis=1) for k in range(p)], axis=1)
        A = np.empty((grid.size, p, p))
        for a in range(p):
            for b in range(p):
                A[:, a, b] = M[:, a + b]
        ok = npos >= order + 2
        if p > 1:
            ok &= np.linalg.cond(A) < 1.0 / _RCOND
        if not np.any(ok):
            continue
        beta = np.linalg.solve(A[ok], N[ok][:, :, None])[:, 0, 0]
        out[i, ok] = (y[i] - beta) ** 2
    return out


def cv_objective(data: RdDataset, design: RdDesign, grid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out boundary CV criterion over ``grid``.

    Evaluated on observations within the median distance of the cutoff. An
    h whose prediction fails for any evaluation point scores inf.
    """
    grid = bandwidth_grid(data, design) if grid is None else np.asarray(grid, dtype=float)
    dist = np.abs(data.x - design.cutoff)
    s_max = float(np.median(dist))
    right = right_mask(data.x, design.cutoff, design.treated_side)
    errs = [
        _side_cv_errors(dist[m], data.y[m], s_max, grid, design.kernel, design.order)
        for m in (~right, right)
    ]
    errs = np.vstack(errs)
    if errs.shape[0] == 0:
        raise InsufficientData("no evaluation points for cross-validation")
    return grid, errs.mean(axis=0)


def select_bandwidth_cv(data: RdDataset, design: RdDesign) -> float:
    h = design.fixed_bandwidth
    if h is not None:
        return h
    need = 4 * (design.order + 2)
    if data.n < need:
        raise InsufficientData(f"cross-validation needs at least {need} observations, got {data.n}")
    grid, obj = cv_objective(data, design)
    if not np.any(np.isfinite(obj)):
        raise InsufficientData("no bandwidth on the grid admits a fit at every evaluation point")
    return float(grid[int(np.argmin(obj))])


__all__ = [
    "FirstStage",
    "PolyFit",
    "RdEstimate",
    "bandwidth_grid",
    "cv_objective",
    "estimate",
    "estimate_fuzzy",
    "estimate_kink",
    "estimate_sharp",
    "fit_local_wls",
    "kernel_weight",
    "normal_p_value",
    "outcome_jump",
    "resolve_bandwidth",
    "select_bandwidth_cv",
    "slope_change",
    "treated_mask",
]

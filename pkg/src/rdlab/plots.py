"""Plot data for RD figures: binned scatters, fitted curves, density bins.

Only data is computed here. ``to_svg`` renders a bare-bones static chart for
quick inspection; anything nicer is left to external tools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union
from xml.sax.saxutils import escape

import numpy as np

from .data import RdDataset, RdDesign, right_mask
from .diagnostics import density_test
from .errors import InsufficientData, RdError
from .estimation import _target_values, fit_local_wls, resolve_bandwidth

K_MIN, K_MAX = 5, 60
CURVE_POINTS = 50

Bins = Union[int, str]


@dataclass(frozen=True)
class Bin:
    low: float
    high: float
    center: float
    mean: float
    count: int

    def to_dict(self) -> dict:
        return {"low": self.low, "high": self.high, "center": self.center, "mean": self.mean, "count": self.count}


@dataclass(frozen=True)
class BinnedPlot:
    variable: str
    cutoff: float
    left: tuple[Bin, ...]
    right: tuple[Bin, ...]
    fitted_left: tuple[tuple[float, float], ...] = ()
    fitted_right: tuple[tuple[float, float], ...] = ()
    bin_rule: str = "fixed"

    @property
    def n_bins_left(self) -> int:
        return len(self.left)

    @property
    def n_bins_right(self) -> int:
        return len(self.right)

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "cutoff": self.cutoff,
            "bin_rule": self.bin_rule,
            "n_bins_left": self.n_bins_left,
            "n_bins_right": self.n_bins_right,
            "left": [b.to_dict() for b in self.left],
            "right": [b.to_dict() for b in self.right],
            "fitted_left": [list(p) for p in self.fitted_left],
            "fitted_right": [list(p) for p in self.fitted_right],
        }


def _bin_side(x: np.ndarray, v: np.ndarray, lo: float, hi: float, k: int) -> tuple[Bin, ...]:
    edges = np.linspace(lo, hi, k + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, k - 1)
    counts = np.bincount(idx, minlength=k)
    sums = np.bincount(idx, weights=v, minlength=k)
    out = []
    for j in range(k):
        mean = sums[j] / counts[j] if counts[j] else math.nan
        out.append(Bin(float(edges[j]), float(edges[j + 1]), float(0.5 * (edges[j] + edges[j + 1])), float(mean), int(counts[j])))
    return tuple(out)


def _side_range(x: np.ndarray, c: float, is_right: bool) -> tuple[float, float]:
    lo, hi = (c, float(x.max())) if is_right else (float(x.min()), c)
    if not hi > lo:
        raise InsufficientData("a side of the cutoff has no spread in x to bin")
    return lo, hi


def bin_criterion(x: np.ndarray, v: np.ndarray, lo: float, hi: float, k: int) -> float:
    """Integrated-squared-error proxy for ``k`` evenly spaced bins.

    Mean within-bin squared deviation (residual noise plus within-bin bias) plus
    the mean squared increment between adjacent non-empty bin means (which
    grows with the sampling noise of sparse bins).
    """
    bins = _bin_side(x, v, lo, hi, k)
    edges = np.linspace(lo, hi, k + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, k - 1)
    means = np.array([b.mean for b in bins])
    within = float(np.mean((v - means[idx]) ** 2))
    filled = means[np.isfinite(means)]
    steps = float(np.mean(np.diff(filled) ** 2)) if filled.size > 1 else 0.0
    return within + steps


def choose_bins(x: np.ndarray, v: np.ndarray, lo: float, hi: float) -> int:
    ks = range(K_MIN, K_MAX + 1)
    scores = [bin_criterion(x, v, lo, hi, k) for k in ks]
    return list(ks)[int(np.argmin(scores))]


def _parse_bins(bins: Bins) -> int | None:
    if isinstance(bins, str):
        if bins in ("auto", "data_driven"):
            return None
        if bins.startswith("fixed:"):
            bins = int(bins.split(":", 1)[1])
        else:
            raise ValueError(f"bins must be fixed:K, an integer, or 'auto'; got {bins!r}")
    k = int(bins)
    if k < 2:
        raise ValueError("need at least 2 bins per side")
    return k


def binned_scatter(
    data: RdDataset,
    design: RdDesign,
    variable="outcome",
    bins: Bins = "auto",
    h: float | None = None,
    fit: bool = True,
) -> BinnedPlot:
    """Per-side bin means of ``variable`` against x.

    Each side of the cutoff is cut into evenly spaced bins covering its full
    observed range, so no bin straddles the cutoff; empty bins stay in the
    output with a NaN mean. ``bins`` is a per-side count, ``"fixed:K"``, or
    ``"auto"`` for the data-driven rule of ``choose_bins``. Fitted curves come
    from the local polynomial fit at bandwidth ``h`` (the design's bandwidth
    when None).
    """
    k_fixed = _parse_bins(bins)
    v_all = _target_values(data, variable)
    ok = np.isfinite(v_all)
    c = design.cutoff
    if ok.sum() == 0:
        raise InsufficientData(f"no finite values of {variable!r}")
    right = right_mask(data.x, c, design.treated_side)
    sides = {}
    for name, is_right in (("left", False), ("right", True)):
        mask = ok & (right if is_right else ~right)
        if not mask.any():
            raise InsufficientData(f"no observations on the {name} side of the cutoff")
        x, v = data.x[mask], v_all[mask]
        lo, hi = _side_range(x, c, is_right)
        k = choose_bins(x, v, lo, hi) if k_fixed is None else k_fixed
        sides[name] = _bin_side(x, v, lo, hi, k)

    curves = {"left": (), "right": ()}
    if fit:
        if h is None:
            h = resolve_bandwidth(data, design)
        for name, is_right in (("left", False), ("right", True)):
            try:
                pf = fit_local_wls(data, design, name, h, target=variable)
            except (RdError, np.linalg.LinAlgError):
                continue
            xs_side = data.x[(right if is_right else ~right) & ok]
            lo = c if is_right else max(c - h, float(xs_side.min()))
            hi = min(c + h, float(xs_side.max())) if is_right else c
            grid = np.linspace(lo, hi, CURVE_POINTS)
            curves[name] = tuple((float(g), float(yh)) for g, yh in zip(grid, pf.predict(grid - c)))

    return BinnedPlot(
        variable=str(variable),
        cutoff=float(c),
        left=sides["left"],
        right=sides["right"],
        fitted_left=curves["left"],
        fitted_right=curves["right"],
        bin_rule="auto" if k_fixed is None else "fixed",
    )


@dataclass(frozen=True)
class DensityPlot:
    cutoff: float
    bin_width: float
    centers: tuple[float, ...]
    counts: tuple[int, ...]
    densities: tuple[float, ...]
    fitted_left: tuple[tuple[float, float], ...]
    fitted_right: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "bin_width": self.bin_width,
            "centers": list(self.centers),
            "counts": list(self.counts),
            "densities": list(self.densities),
            "fitted_left": [list(p) for p in self.fitted_left],
            "fitted_right": [list(p) for p in self.fitted_right],
        }


def density_plot(data: RdDataset, c: float) -> DensityPlot:
    """Histogram bins of the density test with its fitted density near ``c``."""
    res = density_test(data, c)
    edges = np.asarray(res.bin_edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    counts = np.asarray(res.bin_counts)
    dens = counts / (data.n * res.bin_width)
    h = res.smoothing_bandwidth

    def curve(fit, lo, hi):
        g = np.linspace(lo, hi, 11)
        return tuple((float(c + u), float(math.exp(fit[0] + fit[1] * u))) for u in g)

    return DensityPlot(
        cutoff=float(c),
        bin_width=res.bin_width,
        centers=tuple(float(v) for v in centers),
        counts=tuple(int(v) for v in counts),
        densities=tuple(float(v) for v in dens),
        fitted_left=curve(res.left_fit, -h, 0.0),
        fitted_right=curve(res.right_fit, 0.0, h),
    )


def to_svg(plot: BinnedPlot, width: int = 480, height: int = 320) -> str:
    """Minimal SVG: bin means as dots, fitted curves as lines, cutoff dashed."""
    pts = [(b.center, b.mean) for b in plot.left + plot.right if b.count]
    curve_pts = list(plot.fitted_left) + list(plot.fitted_right)
    xs = [p[0] for p in pts + curve_pts] + [plot.cutoff]
    ys = [p[1] for p in pts + curve_pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 20

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<title>{escape(plot.variable)}</title>",
        f'<line x1="{sx(plot.cutoff):.2f}" y1="{pad}" x2="{sx(plot.cutoff):.2f}" y2="{height - pad}" stroke="grey" stroke-dasharray="4 3"/>',
    ]
    for cx, cy in pts:
        parts.append(f'<circle cx="{sx(cx):.2f}" cy="{sy(cy):.2f}" r="2.5" fill="black"/>')
    for seg in (plot.fitted_left, plot.fitted_right):
        if seg:
            path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in seg)
            parts.append(f'<polyline points="{path}" fill="none" stroke="steelblue" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


__all__ = ["Bin", "BinnedPlot", "DensityPlot", "bin_criterion", "binned_scatter", "choose_bins", "density_plot", "to_svg"]

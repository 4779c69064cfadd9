import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdlab.data import RdDesign
from rdlab.errors import InsufficientData
from rdlab.plots import K_MAX, K_MIN, bin_criterion, binned_scatter, choose_bins, density_plot, to_svg
from rdlab.simulation import DgpSpec, generate

from conftest import make_dataset


def obstetrician():
    spec = DgpSpec("fuzzy_obstetrician", n=3000)
    return generate(spec, 11), spec.design(bandwidth=10.0)


class TestBinnedScatter:
    @pytest.mark.parametrize("k", [20, 40, 100])
    def test_fixed_counts(self, k):
        data, design = obstetrician()
        plot = binned_scatter(data, design, "treatment", bins=k)
        assert plot.n_bins_left == plot.n_bins_right == k
        c = design.cutoff
        assert all(b.high <= c for b in plot.left)
        assert all(b.low >= c for b in plot.right)
        right = data.x > c
        assert sum(b.count for b in plot.left) == np.count_nonzero(~right)
        assert sum(b.count for b in plot.right) == np.count_nonzero(right)

    def test_fixed_string_form(self):
        data, design = obstetrician()
        assert binned_scatter(data, design, bins="fixed:7").n_bins_left == 7

    def test_constant_y(self):
        x = np.linspace(-1, 1, 101)
        plot = binned_scatter(make_dataset(x, np.full(101, 2.5)), RdDesign(cutoff=0.0, bandwidth=0.5), bins=10)
        assert all(b.mean == pytest.approx(2.5) for b in plot.left + plot.right)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), k=st.integers(2, 30))
    def test_weighted_mean_identity(self, seed, k):
        r = np.random.default_rng(seed)
        x = r.normal(size=300)
        y = r.normal(size=300) * 10 + x
        data = make_dataset(x, y)
        plot = binned_scatter(data, RdDesign(cutoff=0.0, bandwidth=0.8), bins=k, fit=False)
        for side, mask in ((plot.left, x < 0), (plot.right, x >= 0)):
            filled = [b for b in side if b.count]
            wmean = sum(b.mean * b.count for b in filled) / sum(b.count for b in filled)
            assert wmean == pytest.approx(y[mask].mean(), abs=1e-10)

    def test_auto_in_range(self):
        data, design = obstetrician()
        plot = binned_scatter(data, design, "outcome", bins="auto")
        assert K_MIN <= plot.n_bins_left <= K_MAX and K_MIN <= plot.n_bins_right <= K_MAX
        assert plot.bin_rule == "auto"

    def test_auto_minimises_criterion(self, rng):
        x = rng.uniform(0, 1, 2000)
        y = np.sin(6 * x) + 0.3 * rng.normal(size=2000)
        k = choose_bins(x, y, 0.0, 1.0)
        scores = {j: bin_criterion(x, y, 0.0, 1.0, j) for j in range(K_MIN, K_MAX + 1)}
        assert scores[k] == min(scores.values())

    def test_fitted_curve_from_main_fit(self):
        x = np.linspace(-1, 1, 201)
        y = 1 + 2 * x + (x >= 0)
        plot = binned_scatter(make_dataset(x, y), RdDesign(cutoff=0.0, bandwidth=0.5), bins=10)
        xs, ys = np.array(plot.fitted_right).T
        np.testing.assert_allclose(ys, 2 + 2 * xs, atol=1e-10)
        assert xs.min() == 0.0 and xs.max() == pytest.approx(0.5)

    def test_empty_side(self):
        x = np.linspace(0.1, 1, 20)
        with pytest.raises(InsufficientData):
            binned_scatter(make_dataset(x, x), RdDesign(cutoff=0.0, bandwidth=0.5), bins=5)

    def test_bad_bins(self):
        data, design = obstetrician()
        with pytest.raises(ValueError):
            binned_scatter(data, design, bins=1)
        with pytest.raises(ValueError):
            binned_scatter(data, design, bins="many")


class TestFigureShapes:
    def test_cash_transfer_zero_to_one(self):
        spec = DgpSpec("sharp_cash_transfer", n=3000)
        plot = binned_scatter(generate(spec, 1), spec.design(bandwidth=10.0), "treatment", bins=20, fit=False)
        assert all(b.mean == 0.0 for b in plot.left if b.count)
        assert all(b.mean == 1.0 for b in plot.right if b.count)

    def test_obstetrician_partial(self):
        data, design = obstetrician()
        plot = binned_scatter(data, design, "treatment", bins=20, fit=False)
        near_treated = plot.left[-1].mean
        near_control = plot.right[0].mean
        assert 0 < near_control < near_treated < 1

    def test_manipulation_density(self):
        dp = density_plot(generate(DgpSpec("manipulation", n=5000), 2), 0.0)
        centers = np.array(dp.centers)
        dens = np.array(dp.densities)
        below = dens[(centers < 0) & (centers > -0.1)].mean()
        above = dens[(centers > 0) & (centers < 0.1)].mean()
        assert above > 1.5 * below
        assert sum(dp.counts) == 5000


def test_svg():
    data, design = obstetrician()
    svg = to_svg(binned_scatter(data, design, "treatment", bins=10))
    assert svg.startswith("<svg") and svg.count("<circle") == 20 and "<polyline" in svg

import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdlab.errors import InsufficientWindow
from rdlab.local_randomization import lr_window_estimate

from conftest import make_dataset


def brute_force_p(y_control, y_treated):
    y = np.concatenate([y_control, y_treated])
    n_t = len(y_treated)
    obs = np.mean(y_treated) - np.mean(y_control)
    hits = total = 0
    for idx in itertools.combinations(range(y.size), n_t):
        mask = np.zeros(y.size, bool)
        mask[list(idx)] = True
        stat = y[mask].mean() - y[~mask].mean()
        hits += abs(stat) >= abs(obs) - 1e-9
        total += 1
    return hits / total


class TestWindowEstimate:
    def test_worked_three_plus_three(self):
        data = make_dataset([-0.3, -0.2, -0.1, 0.1, 0.2, 0.3], [0, 0, 0, 1, 1, 1])
        res = lr_window_estimate(data, 0.0, (-1.0, 1.0))
        assert res.exact
        assert res.n_permutations == 20
        assert res.p_fisher == pytest.approx(0.1)
        assert res.diff_means == pytest.approx(1.0)
        assert (res.n_left, res.n_right) == (3, 3)

    def test_constant_outcome(self):
        data = make_dataset(np.linspace(-1, 1, 10), np.full(10, 4.2))
        res = lr_window_estimate(data, 0.0, (-1.0, 1.0))
        assert res.diff_means == 0.0 and res.p_fisher == 1.0 and res.exact

    def test_one_sided_window(self):
        data = make_dataset(np.linspace(-1, 1, 10), np.arange(10.0))
        with pytest.raises(InsufficientWindow):
            lr_window_estimate(data, 0.0, (0.1, 1.0))

    def test_singleton_side(self):
        data = make_dataset([-0.5, 0.1, 0.2, 0.3], [1, 2, 3, 4])
        with pytest.raises(InsufficientWindow):
            lr_window_estimate(data, 0.0, (-1.0, 1.0))

    def test_window_restricts(self):
        data = make_dataset([-5, -0.3, -0.2, 0.1, 0.2, 7], [100, 0, 0, 1, 1, -100])
        res = lr_window_estimate(data, 0.0, (-1.0, 1.0))
        assert (res.n_left, res.n_right) == (2, 2)

    def test_treated_below(self):
        data = make_dataset([-0.3, -0.2, -0.1, 0.1, 0.2, 0.3], [1, 1, 1, 0, 0, 0])
        res = lr_window_estimate(data, 0.0, (-1.0, 1.0), treated_side="below")
        assert res.diff_means == pytest.approx(1.0)

    def test_sampled_mode(self, rng):
        x = rng.uniform(-1, 1, 60)
        data = make_dataset(x, rng.normal(size=60) + (x >= 0))
        res = lr_window_estimate(data, 0.0, (-1.0, 1.0), max_permutations=2000, seed=3)
        assert not res.exact and res.n_permutations == 2000
        assert res.p_fisher >= 1 / 2000
        again = lr_window_estimate(data, 0.0, (-1.0, 1.0), max_permutations=2000, seed=3)
        assert again == res

    def test_shift_invariance(self, rng):
        x = rng.uniform(-1, 1, 40)
        y = rng.normal(size=40)
        a = lr_window_estimate(make_dataset(x, y), 0.0, (-1.0, 1.0), max_permutations=500, seed=1)
        b = lr_window_estimate(make_dataset(x, y + 1e3), 0.0, (-1.0, 1.0), max_permutations=500, seed=1)
        assert b.diff_means == pytest.approx(a.diff_means, abs=1e-9)
        assert b.p_fisher == a.p_fisher

    @settings(max_examples=60, deadline=None)
    @given(n_c=st.integers(2, 6), n_t=st.integers(2, 6), seed=st.integers(0, 10**6))
    def test_matches_brute_force_and_is_seed_free(self, n_c, n_t, seed):
        r = np.random.default_rng(seed)
        yc = r.integers(0, 4, n_c).astype(float)
        yt = r.integers(0, 4, n_t).astype(float)
        x = np.concatenate([-r.uniform(0.01, 1, n_c), r.uniform(0.0, 1, n_t)])
        data = make_dataset(x, np.concatenate([yc, yt]))
        a = lr_window_estimate(data, 0.0, (-1.0, 1.0), seed=1)
        perm = r.permutation(x.size)
        y = np.concatenate([yc, yt])
        b = lr_window_estimate(make_dataset(x[perm], y[perm]), 0.0, (-1.0, 1.0), seed=99)
        assert a.exact
        assert a.p_fisher == pytest.approx(brute_force_p(yc, yt), abs=1e-12)
        assert a.p_fisher == b.p_fisher

    @pytest.mark.parametrize("size", [4, 7, 12])
    def test_budget_at_combination_count_enumerates(self, size):
        r = np.random.default_rng(size)
        x = np.linspace(-1, 1, size) + 0.01
        data = make_dataset(x, r.normal(size=size))
        n_t = int(np.sum(x >= 0))
        total = comb(size, n_t)
        at = lr_window_estimate(data, 0.0, (-2.0, 2.0), max_permutations=total, seed=5)
        above = lr_window_estimate(data, 0.0, (-2.0, 2.0), max_permutations=10 * total, seed=6)
        assert at.exact and above.exact
        assert at.p_fisher == above.p_fisher
        below = lr_window_estimate(data, 0.0, (-2.0, 2.0), max_permutations=total - 1, seed=5)
        assert not below.exact

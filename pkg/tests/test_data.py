import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdlab.data import ColumnMapping, RdDataset, RdDesign, load_dataset, treated_mask, validate_design
from rdlab.errors import (
    ConfigError,
    DataNotFound,
    EmptyDataset,
    FuzzyWithoutTreatment,
    InvalidTreatment,
    MissingColumn,
    NonNumeric,
)

from conftest import make_dataset

XDY = ColumnMapping(running="x", outcome="y", treatment="d")


class TestLoadDataset:
    def test_three_rows(self):
        data = load_dataset(io.StringIO("x,d,y\n-1,0,2.5\n0.5,1,3\n2,1,4\n"), XDY)
        assert data.n == 3
        assert data.n_dropped_missing == 0
        np.testing.assert_array_equal(data.x, [-1, 0.5, 2])
        np.testing.assert_array_equal(data.d, [0, 1, 1])

    def test_blank_outcome_dropped(self):
        data = load_dataset(io.StringIO("x,d,y\n-1,0,2.5\n0.5,1,\n2,1,4\n"), XDY)
        assert data.n == 2
        assert data.n_dropped_missing == 1
        np.testing.assert_array_equal(data.y, [2.5, 4])

    def test_missing_column(self):
        with pytest.raises(MissingColumn) as err:
            load_dataset(io.StringIO("x,d,y\n1,1,1\n"), ColumnMapping("x", "y", covariates=("z",)))
        assert err.value.column == "z"

    def test_non_numeric_location(self):
        with pytest.raises(NonNumeric) as err:
            load_dataset(io.StringIO("x,y\n1,2\n3,abc\n"), ColumnMapping("x", "y"))
        assert (err.value.row, err.value.column) == (2, "y")

    @pytest.mark.parametrize("cell", ["nan", "inf", "1,5"])
    def test_locale_and_nonfinite_rejected(self, cell):
        text = f'x,y\n1,2\n"{cell}",3\n'
        with pytest.raises(NonNumeric):
            load_dataset(io.StringIO(text), ColumnMapping("x", "y"))

    def test_invalid_treatment(self):
        with pytest.raises(InvalidTreatment):
            load_dataset(io.StringIO("x,d,y\n1,2,1\n"), XDY)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            load_dataset(io.StringIO("x,y\n,1\n"), ColumnMapping("x", "y"))
        with pytest.raises(EmptyDataset):
            load_dataset(io.StringIO(""), ColumnMapping("x", "y"))

    def test_file_not_found(self, tmp_path):
        with pytest.raises(DataNotFound) as err:
            load_dataset(tmp_path / "missing.csv", XDY)
        assert err.value.code == "DATA_NOT_FOUND"
        assert err.value.exit_code == 3

    def test_quoted_fields_bom_and_covariate_missing(self):
        text = '﻿x,y,"age"\n"1.5",2,30\n2,3,\n'
        data = load_dataset(io.StringIO(text), ColumnMapping("x", "y", covariates=("age",)))
        assert data.n == 2
        assert data.n_dropped_missing == 0
        assert np.isnan(data.covariate("age")[1])

    def test_drop_preserves_order(self):
        text = "x,y\n" + "\n".join(f"{i},{'' if i % 3 == 0 else i * 2}" for i in range(10)) + "\n"
        data = load_dataset(io.StringIO(text), ColumnMapping("x", "y"))
        assert list(data.x) == [i for i in range(10) if i % 3]
        assert data.n_dropped_missing == 4

    def test_deterministic_and_roundtrip(self):
        data = make_dataset([0.1, -0.3, 2.0 / 3.0], [1e-20, 5.0, -3.25], d=[1, 0, 1])
        buf = io.StringIO()
        data.to_csv(buf)
        again = load_dataset(io.StringIO(buf.getvalue()), XDY)
        assert again == data
        assert load_dataset(io.StringIO(buf.getvalue()), XDY) == again


class TestDataset:
    def test_immutable(self):
        data = make_dataset([1, 2], [3, 4])
        with pytest.raises(ValueError):
            data.x[0] = 5.0

    def test_rejects_nonbinary_treatment(self):
        with pytest.raises(ValueError):
            make_dataset([1, 2], [3, 4], d=[0, 0.5])

    def test_rows(self):
        data = make_dataset([1, 2], [3, 4], d=[0, 1], covariates=[[7], [8]], names=("a",))
        rows = list(data.rows)
        assert rows[1].x == 2 and rows[1].d == 1 and rows[1].covariates == (8.0,)


class TestDesign:
    @pytest.mark.parametrize(
        "kw",
        [
            {"order": 3},
            {"order": -1},
            {"bandwidth": 0.0},
            {"bandwidth": "silverman"},
            {"donut_radius": -0.1},
            {"kernel": "gaussian"},
            {"treated_side": "left"},
            {"kind": "rdit"},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            RdDesign(cutoff=0.0, **kw)

    def test_defaults(self):
        d = RdDesign(cutoff=1.0)
        assert (d.kernel, d.order, d.bandwidth, d.kind) == ("triangular", 1, "cv", "sharp")
        assert d.fixed_bandwidth is None
        assert RdDesign(cutoff=1.0, bandwidth=2.0).fixed_bandwidth == 2.0


class TestValidateDesign:
    def test_sharp_consistent(self):
        x = np.linspace(-1, 1, 21)
        data = make_dataset(x, x, d=(x >= 0.05).astype(float))
        rep = validate_design(data, RdDesign(cutoff=0.05))
        assert rep.eligibility_consistency == 1.0
        assert rep.warnings == ()
        assert rep.cutoff_in_range

    def test_fuzzy_eighty_percent(self):
        x = np.linspace(-1, 1, 10)
        d = (x >= 0).astype(float)
        d[[0, 9]] = 1 - d[[0, 9]]
        rep = validate_design(make_dataset(x, x, d=d), RdDesign(cutoff=0.0, kind="fuzzy"))
        assert rep.eligibility_consistency == pytest.approx(0.8)
        assert any(w.message == "crossovers present; fuzzy design appropriate" for w in rep.warnings)

    def test_cutoff_out_of_range(self):
        rep = validate_design(make_dataset([1, 2, 3], [1, 2, 3]), RdDesign(cutoff=0.0))
        assert not rep.cutoff_in_range
        assert "CUTOFF_OUT_OF_RANGE" in rep.codes

    def test_fuzzy_without_treatment(self):
        with pytest.raises(FuzzyWithoutTreatment):
            validate_design(make_dataset([1, 2, 3], [1, 2, 3]), RdDesign(cutoff=2.0, kind="fuzzy"))

    def test_ties_reported(self):
        rep = validate_design(make_dataset([-1, 0, 1], [1, 2, 3], d=[0, 1, 1]), RdDesign(cutoff=0.0))
        assert rep.n_ties == 1
        assert "TIES_AT_CUTOFF" in rep.codes

    def test_tie_rule_below(self):
        x = np.array([-1.0, 0.0, 1.0])
        np.testing.assert_array_equal(treated_mask(x, 0.0, "below"), [True, True, False])
        np.testing.assert_array_equal(treated_mask(x, 0.0, "above"), [False, True, True])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=40), st.randoms(use_true_random=False))
    def test_consistency_permutation_invariant(self, xs, rnd):
        x = np.array(xs)
        d = (x >= 0.0).astype(float)
        perm = list(range(len(xs)))
        rnd.shuffle(perm)
        design = RdDesign(cutoff=0.0)
        assert validate_design(make_dataset(x[perm], x[perm], d=d[perm]), design).eligibility_consistency == 1.0

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from causalaid._resources import data_path
from causalaid.tabular import (SCHEMAS, Period, StudyFrame, Table, TableError, aggregate,
                               binarize_treatment, drop_missing, fill_forward, filter_rows,
                               join, load_csv, per_capita_normalize, write_csv)

ANALYSIS = ["MarketPrices", "SorghumProduction", "Fatalities", "Displacement", "Population",
            "Cash", "GAM"]
SIMPLE = {"district": "categorical", "date": "date", "Cash": "numeric", "GAM": "numeric"}


def write(tmp_path, text, name="in.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def frame_table(columns, kinds):
    return Table(pd.DataFrame(columns), kinds)


def linear_percentile(sorted_values, p):
    # closest-ranks linear interpolation, written out by hand
    h = (len(sorted_values) - 1) * p / 100.0
    lo = math.floor(h)
    hi = min(lo + 1, len(sorted_values) - 1)
    return sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo])


def numbers_table(values, y=None):
    values = np.asarray(values, float)
    y = np.full(len(values), 0.5) if y is None else y
    return frame_table({"T": values, "Y": y}, {"T": "numeric", "Y": "numeric"})


class TestLoad:
    def test_well_formed(self, tmp_path):
        path = write(tmp_path, "district,date,Cash,GAM\nA,2020-01,1,0.1\nA,2020-02,2,0.2\n"
                               "B,2020-01-15,3,0.3\n")
        t = load_csv(path, SIMPLE)
        assert t.n_rows == 3
        assert sum(t.missing_counts().values()) == 0
        assert t.frame["date"].iloc[2] == pd.Timestamp("2020-01-15")

    def test_na_cell_is_missing_row_kept(self, tmp_path):
        path = write(tmp_path, "district,date,Cash,GAM\nA,2020-01,n/a,0.1\nA,2020-02,2,0.2\n")
        t = load_csv(path, SIMPLE)
        assert t.n_rows == 2
        assert t.missing_counts()["Cash"] == 1

    def test_bundled_country_file(self):
        t = load_csv(data_path("somalia_districts_annual.csv"), "district_annual")
        assert t.n_rows == 399
        assert drop_missing(t, ANALYSIS).n_rows == 378

    @pytest.mark.parametrize("text, message", [
        ("", "empty"),
        ("district,date,Cash,Cash,GAM\n", "duplicate"),
        ("district,date,Cash\nA,2020-01,1\n", "missing required"),
    ])
    def test_rejects(self, tmp_path, text, message):
        with pytest.raises(TableError, match=message):
            load_csv(write(tmp_path, text), SIMPLE)

    def test_extra_columns_kept_as_categorical(self, tmp_path):
        path = write(tmp_path, "district,date,Cash,GAM,note\nA,2020-01,1,0.1,x\n")
        t = load_csv(path, SIMPLE)
        assert t.kinds["note"] == "categorical"

    def test_unknown_schema(self, tmp_path):
        with pytest.raises(TableError, match="unknown schema"):
            load_csv(write(tmp_path, "a\n1\n"), "nope")

    def test_write_roundtrip(self, tmp_path):
        t = load_csv(data_path("somalia_districts_annual.csv"), "district_annual")
        back = load_csv(write_csv(t, tmp_path / "out.csv"), "district_annual")
        pd.testing.assert_frame_equal(back.frame, t.frame)

    def test_load_summary(self):
        t = load_csv(data_path("somalia_districts_annual.csv"), "district_annual")
        text = t.summary.to_text()
        assert "rows_read: 399" in text
        assert sum(t.summary.missing.values()) == 21


class TestAggregate:
    def test_annual_mean(self):
        months = pd.date_range("2020-01-01", periods=12, freq="MS")
        gam = np.linspace(0.1, 0.32, 12)
        t = frame_table({"district": ["A"] * 12, "date": months, "GAM": gam},
                        {"district": "categorical", "date": "date", "GAM": "numeric"})
        out = aggregate(t, ["district"], Period.ANNUAL, {"GAM": "mean"})
        assert out.n_rows == 1
        assert out.frame["GAM"].iloc[0] == pytest.approx(sum(gam) / 12, abs=1e-15)
        assert out.frame["date"].iloc[0] == pd.Timestamp("2020-01-01")

    def test_sum_skips_missing(self):
        t = frame_table({"district": ["A"] * 3, "date": pd.to_datetime(["2020-01-01"] * 3),
                         "Cash": [10.0, np.nan, 20.0]},
                        {"district": "categorical", "date": "date", "Cash": "numeric"})
        out = aggregate(t, ["district"], "monthly", {"Cash": "sum"})
        assert out.frame["Cash"].tolist() == [30.0]

    def test_all_missing_group_stays_missing(self):
        t = frame_table({"district": ["A"] * 2, "date": pd.to_datetime(["2020-01-01"] * 2),
                         "Cash": [np.nan, np.nan]},
                        {"district": "categorical", "date": "date", "Cash": "numeric"})
        out = aggregate(t, ["district"], "monthly", {"Cash": "sum"})
        assert np.isnan(out.frame["Cash"].iloc[0])

    def test_seasonal_carry_forward(self):
        t = frame_table({"district": ["A", "A"],
                         "date": pd.to_datetime(["2020-01-01", "2020-07-01"]),
                         "SorghumProduction": [100.0, 250.0]},
                        {"district": "categorical", "date": "date",
                         "SorghumProduction": "numeric"})
        out = aggregate(t, ["district"], "monthly", {"SorghumProduction": "last"},
                        carry_forward=["SorghumProduction"])
        assert out.n_rows == 7
        assert out.frame["SorghumProduction"].tolist() == [100.0] * 6 + [250.0]

    def test_carry_forward_needs_monthly(self):
        t = frame_table({"d": ["A"], "date": pd.to_datetime(["2020-01-01"]), "v": [1.0]},
                        {"d": "categorical", "date": "date", "v": "numeric"})
        with pytest.raises(TableError, match="monthly"):
            aggregate(t, ["d"], "annual", {"v": "last"}, carry_forward=["v"])

    def test_missing_aggregator(self):
        t = frame_table({"d": ["A"], "date": pd.to_datetime(["2020-01-01"]), "v": [1.0]},
                        {"d": "categorical", "date": "date", "v": "numeric"})
        with pytest.raises(TableError, match="no aggregator"):
            aggregate(t, ["d"], "annual", {})

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("AB"), st.integers(0, 40),
                              st.one_of(st.none(), st.floats(-1e3, 1e3))),
                    min_size=1, max_size=40),
           st.sampled_from(["annual", "monthly"]),
           st.sampled_from(["mean", "sum", "last"]))
    def test_idempotent(self, rows, period, agg):
        dates = pd.Timestamp("2018-01-01") + pd.to_timedelta([r[1] * 19 for r in rows], "D")
        t = frame_table({"d": [r[0] for r in rows], "date": dates,
                         "v": [np.nan if r[2] is None else r[2] for r in rows]},
                        {"d": "categorical", "date": "date", "v": "numeric"})
        once = aggregate(t, ["d"], period, {"v": agg})
        twice = aggregate(once, ["d"], period, {"v": agg})
        pd.testing.assert_frame_equal(once.frame, twice.frame)


class TestNormalize:
    def kinds(self):
        return {"district": "categorical", "date": "date", "Cash": "numeric",
                "GAM": "numeric", "Population": "numeric"}

    def test_ratio(self):
        t = frame_table({"district": ["A"], "date": pd.to_datetime(["2020-01-01"]),
                         "Cash": [500.0], "GAM": [0.2], "Population": [10000.0]}, self.kinds())
        out = per_capita_normalize(t, ["Cash"], "Population")
        assert out.frame["Cash"].iloc[0] == 0.05
        assert out.frame["GAM"].iloc[0] == 0.2

    def test_refuses_twice(self):
        t = frame_table({"district": ["A"], "date": pd.to_datetime(["2020-01-01"]),
                         "Cash": [500.0], "GAM": [0.2], "Population": [10000.0]}, self.kinds())
        once = per_capita_normalize(t, ["Cash"], "Population")
        with pytest.raises(TableError, match="already normalized"):
            per_capita_normalize(once, ["Cash"], "Population")

    def test_normalize_then_aggregate(self):
        t = frame_table({"district": ["A", "A"],
                         "date": pd.to_datetime(["2020-01-01", "2020-02-01"]),
                         "Cash": [100.0, 300.0], "GAM": [0.1, 0.1],
                         "Population": [1000.0, 2000.0]}, self.kinds())
        out = aggregate(per_capita_normalize(t, ["Cash"], "Population"), ["district"],
                        "annual", {"Cash": "mean", "GAM": "mean", "Population": "last"})
        # mean of ratios (0.1, 0.15), not ratio of means (200 / 1500)
        assert out.frame["Cash"].iloc[0] == pytest.approx(0.125, abs=1e-15)

    @pytest.mark.parametrize("pop, message", [(0.0, "positive"), (np.nan, "missing")])
    def test_bad_population(self, pop, message):
        t = frame_table({"district": ["A"], "date": pd.to_datetime(["2020-01-01"]),
                         "Cash": [5.0], "GAM": [0.2], "Population": [pop]}, self.kinds())
        with pytest.raises(TableError, match=message):
            per_capita_normalize(t, ["Cash"], "Population")


class TestJoinFilter:
    def test_outer_join_and_filter(self):
        kinds = {"d": "categorical", "a": "numeric"}
        left = frame_table({"d": ["A", "B"], "a": [1.0, 2.0]}, kinds)
        right = frame_table({"d": ["B", "C"], "b": [3.0, 4.0]},
                            {"d": "categorical", "b": "numeric"})
        both = join(left, right, ["d"])
        assert both.n_rows == 3
        assert filter_rows(both, "d", "B").frame[["a", "b"]].values.tolist() == [[2.0, 3.0]]

    def test_overlapping_columns_rejected(self):
        kinds = {"d": "categorical", "a": "numeric"}
        t = frame_table({"d": ["A"], "a": [1.0]}, kinds)
        with pytest.raises(TableError):
            join(t, t, ["d"])

    def test_fill_forward(self):
        t = frame_table({"d": ["A"] * 3, "date": pd.date_range("2020-01-01", periods=3,
                                                               freq="MS"),
                         "s": [1.0, np.nan, np.nan]},
                        {"d": "categorical", "date": "date", "s": "numeric"})
        assert fill_forward(t, ["s"], ["d"]).frame["s"].tolist() == [1.0, 1.0, 1.0]


class TestBinarize:
    def test_median_no_band(self):
        f = binarize_treatment(numbers_table(np.arange(1, 101)), "T", 50, band=0,
                               outcome_col="Y")
        assert f.threshold_value == 50.5
        assert (f.n_treated, f.n_control) == (50, 50)

    def test_median_band(self):
        values = list(range(1, 101))
        lo, hi = linear_percentile(values, 45), linear_percentile(values, 55)
        expected = sum(lo <= v <= hi for v in values)
        assert expected == 10
        f = binarize_treatment(numbers_table(values), "T", 50, band=5, outcome_col="Y")
        assert f.excluded_count == expected
        assert f.n_treated == sum(v > hi for v in values)
        assert f.n_control == sum(v < lo for v in values)

    def test_study_thresholds_oracle(self):
        rng = np.random.default_rng(3)
        values = rng.gamma(2.0, 3.0, size=250)
        s = sorted(values)
        for p in (35, 50, 75):
            f = binarize_treatment(numbers_table(values), "T", p, band=0, outcome_col="Y")
            assert f.threshold_value == pytest.approx(linear_percentile(s, p), rel=1e-12)
            assert f.n_treated == sum(v >= f.threshold_value for v in values)

    def test_drops_missing_rows(self):
        values = np.arange(1.0, 21.0)
        values[3] = np.nan
        f = binarize_treatment(numbers_table(values), "T", 50, band=0, outcome_col="Y")
        assert f.dropped_missing == 1
        assert f.n == 19

    def test_degenerate(self):
        with pytest.raises(TableError, match="identical"):
            binarize_treatment(numbers_table(np.ones(10)), "T", 50, outcome_col="Y")

    def test_outcome_out_of_range(self):
        t = numbers_table(np.arange(10.0), y=np.linspace(0, 2, 10))
        with pytest.raises(TableError, match="outside"):
            binarize_treatment(t, "T", 50, band=0, outcome_col="Y")

    def test_starved_arm(self):
        values = np.r_[np.zeros(9), 1.0]
        with pytest.raises(TableError, match="too few rows"):
            binarize_treatment(numbers_table(values), "T", 95, band=0, outcome_col="Y")

    @pytest.mark.parametrize("p", [0, 100, -3])
    def test_bad_percentile(self, p):
        with pytest.raises(TableError):
            binarize_treatment(numbers_table(np.arange(10.0)), "T", p, outcome_col="Y")

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=6, max_size=60),
           st.floats(5, 95))
    def test_band_zero_partitions(self, values, p):
        values = np.asarray(values)
        try:
            f = binarize_treatment(numbers_table(values), "T", p, band=0, outcome_col="Y")
        except TableError:
            return
        assert f.n_treated + f.n_control == len(values)
        assert f.excluded_count == 0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 30), min_size=10, max_size=80), st.floats(10, 90),
           st.floats(0, 9), st.floats(0, 9))
    def test_band_monotone(self, values, p, b1, b2):
        small, large = sorted((b1, b2))
        t = numbers_table(values)
        try:
            a = binarize_treatment(t, "T", p, band=small, outcome_col="Y")
            b = binarize_treatment(t, "T", p, band=large, outcome_col="Y")
        except TableError:
            assume(False)
        assert b.n_treated + b.n_control <= a.n_treated + a.n_control


class TestStudyFrame:
    def test_read_only(self):
        f = StudyFrame.from_arrays([0, 0, 1, 1], [0.1, 0.2, 0.3, 0.4])
        with pytest.raises(ValueError):
            f.outcome[0] = 1.0

    def test_rejects_non_binary(self):
        with pytest.raises(TableError, match="binary"):
            StudyFrame.from_arrays([0, 2, 1, 1], [0.1, 0.2, 0.3, 0.4])

    def test_rejects_missing(self):
        with pytest.raises(TableError, match="missing"):
            StudyFrame.from_arrays([0, 0, 1, 1], [0.1, np.nan, 0.3, 0.4])

    def test_subset_keeps_metadata(self):
        f = StudyFrame.from_arrays([0, 0, 1, 1, 1], np.arange(5.0), np.arange(5.0)[:, None],
                                   ("Z",), threshold_percentile=50.0)
        sub = f.subset([0, 1, 2, 3])
        assert sub.n == 4
        assert sub.threshold_percentile == 50.0
        assert sub.covariate_names == ("Z",)


def test_schemas_cover_study_columns():
    cols = set()
    for s in SCHEMAS.values():
        cols.update(s.aggregators)
    assert cols >= set(ANALYSIS) | {"ENSO", "SPI"}

import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import columns, daily_columns, group
from lockdown_did.index import (
    DEFAULT_BASELINE,
    DailySeries,
    IndexConstructionError,
    SpendFilter,
    aggregate_daily,
    aggregate_daily_sharded,
    build_index,
    monthly_totals,
    moving_average,
    normalize_baseline,
    pearson,
    prior_year_dates,
    validate_against_benchmark,
    yoy_deseason,
    yoy_growth,
)
from lockdown_did.ingest import Channel
from lockdown_did.series import DatedSeries, read_series_csv, write_series_csv

D = dt.date


# --- aggregation -----------------------------------------------------------

def test_aggregate_sums_and_zero_days():
    cols = columns([(D(2020, 3, 15), 1000, "A"), (D(2020, 3, 15), 2000, "A"), (D(2020, 3, 17), 5, "B")])
    s = aggregate_daily(cols, group("A"), span=(D(2020, 3, 14), D(2020, 3, 17)))
    assert list(s.values) == [0, 3000, 0, 0]
    assert s[D(2020, 3, 15)] == 3000


def test_aggregate_category_filter():
    rows = [
        (D(2020, 3, 1), 120, "A", "food_beverage"),
        (D(2020, 3, 1), 999, "A", "retail"),
        (D(2020, 3, 2), 340, "A", "food_beverage"),
        (D(2020, 3, 2), 777, "A", "retail"),
        (D(2020, 3, 2), 55, "A", "food_beverage"),
    ]
    s = aggregate_daily(columns(rows), group("A"), SpendFilter(category="food_beverage"), (D(2020, 3, 1), D(2020, 3, 2)))
    assert int(s.values.sum()) == 120 + 340 + 55
    assert list(s.values) == [120, 395]


def test_aggregate_channel_filter():
    rows = [(D(2020, 3, 1), 10, "A", "retail", Channel.ONLINE), (D(2020, 3, 1), 7, "A", "retail", Channel.OFFLINE)]
    s = aggregate_daily(columns(rows), group("A"), SpendFilter(channel=Channel.OFFLINE), (D(2020, 3, 1), D(2020, 3, 1)))
    assert list(s.values) == [7]


def test_aggregate_empty_span_errors():
    with pytest.raises(ValueError):
        aggregate_daily(columns([(D(2020, 3, 1), 1, "A")]), group("A"), span=(D(2020, 3, 2), D(2020, 3, 1)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60), st.integers(1, 10**6), st.sampled_from("ABC")), max_size=200), st.integers(1, 7))
def test_sharded_aggregation_equals_single_pass(rows, n_shards):
    cols = columns([(D(2020, 1, 1) + dt.timedelta(days=d), a, auth) for d, a, auth in rows] or [(D(2020, 1, 1), 1, "A")])
    g = group("A", "B")
    span = (D(2020, 1, 1), D(2020, 3, 1))
    one = aggregate_daily(cols, g, span=span)
    many = aggregate_daily_sharded(cols, g, span=span, n_shards=n_shards)
    assert one.values.tobytes() == many.values.tobytes()


def test_daily_series_rejects_floats_and_negatives():
    with pytest.raises(TypeError):
        DailySeries("A", D(2020, 1, 1), np.array([1.5]))
    with pytest.raises(ValueError):
        DailySeries("A", D(2020, 1, 1), np.array([-1]))


# --- moving average --------------------------------------------------------

@pytest.mark.parametrize("k", [7, 14, 28])
def test_ma_constant(k):
    s = DatedSeries(D(2020, 1, 1), np.full(40, 3.25))
    ma = moving_average(s, k)
    assert ma.start == D(2020, 1, 1) + dt.timedelta(days=k - 1)
    assert np.all(ma.values == 3.25)


def test_ma_one_to_seven():
    ma = moving_average(DailySeries("A", D(2020, 1, 1), np.arange(1, 8)), 7)
    assert ma.get(D(2020, 1, 7)) == 4.0
    assert len(ma) == 1


def test_ma_random_fixture_brute_force():
    vals = np.random.default_rng(7).integers(0, 10_000, 20)
    ma = moving_average(DailySeries("A", D(2020, 1, 1), vals), 7)
    for i in (6, 12, 19):
        assert ma.get(D(2020, 1, 1) + dt.timedelta(days=i)) == pytest.approx(sum(int(v) for v in vals[i - 6 : i + 1]) / 7, abs=1e-9)


def test_ma_rejects_bad_windows():
    s = DatedSeries(D(2020, 1, 1), np.ones(10))
    with pytest.raises(ValueError):
        moving_average(s, 5)
    with pytest.raises(ValueError):
        moving_average(s, 14)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 40, elements=finite), arrays(np.float64, 40, elements=finite), finite, finite, st.sampled_from([7, 14, 28]))
def test_ma_linear(x, y, a, b, k):
    sx, sy = DatedSeries(D(2020, 1, 1), x), DatedSeries(D(2020, 1, 1), y)
    lhs = moving_average(DatedSeries(D(2020, 1, 1), a * x + b * y), k).values
    rhs = a * moving_average(sx, k).values + b * moving_average(sy, k).values
    scale = max(1.0, np.abs(a * x).max(initial=0) + np.abs(b * y).max(initial=0))
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-9 * scale)


@settings(max_examples=60, deadline=None)
@given(arrays(np.int64, st.integers(28, 60), elements=st.integers(0, 10**9)), st.sampled_from([7, 14, 28]))
def test_ma_bounds(x, k):
    ma = moving_average(DailySeries("A", D(2020, 1, 1), x), k).values
    for i, v in enumerate(ma):
        w = x[i : i + k]
        assert w.min() <= v <= w.max()


# --- YoY and normalization -------------------------------------------------

def test_prior_year_dates_leap_rule():
    assert prior_year_dates(D(2020, 2, 29)) == (D(2019, 2, 28), D(2019, 3, 1))
    assert prior_year_dates(D(2020, 3, 1)) == (D(2019, 3, 1),)


def test_yoy_leap_day_example():
    prior = DatedSeries(D(2019, 2, 28), np.array([10.0, 14.0]))
    cur = DatedSeries(D(2020, 2, 29), np.array([6.0]))
    assert yoy_deseason(cur, prior).values[0] == 0.5


def test_yoy_identical_is_one():
    vals = np.random.default_rng(1).random(30) + 0.5
    r = yoy_deseason(DatedSeries(D(2020, 4, 1), vals), DatedSeries(D(2019, 4, 1), vals))
    assert np.all(r.values == 1.0)


def test_yoy_zero_denominator_flagged_gap():
    prior = DatedSeries(D(2019, 4, 1), np.array([2.0, 0.0, 4.0]))
    cur = DatedSeries(D(2020, 4, 1), np.array([1.0, 1.0, 1.0]))
    r = yoy_deseason(cur, prior)
    assert r.values[0] == 0.5 and math.isnan(r.values[1]) and r.values[2] == 0.25
    assert r.metadata["gaps"] == ["2020-04-02"]


def test_yoy_missing_prior_date_errors():
    with pytest.raises(IndexConstructionError):
        yoy_deseason(DatedSeries(D(2020, 4, 1), np.ones(3)), DatedSeries(D(2019, 4, 2), np.ones(3)))


def test_normalize_examples():
    base = (D(2020, 1, 8), D(2020, 1, 28))
    const = normalize_baseline(DatedSeries(D(2020, 1, 1), np.full(40, 2.5)), base)
    assert np.all(const.values == 1.0)
    vals = np.full(40, 2.0)
    vals[35] = 3.0
    out = normalize_baseline(DatedSeries(D(2020, 1, 1), vals), base)
    assert out.values[35] == 1.5


def test_normalize_sixty_day_fixture():
    vals = np.random.default_rng(3).lognormal(0, 0.4, 60)
    out = normalize_baseline(DatedSeries(D(2020, 1, 1), vals), DEFAULT_BASELINE)
    assert abs(math.fsum(out.window(*DEFAULT_BASELINE)) / 21 - 1.0) <= 1e-12


def test_normalize_errors():
    s = DatedSeries(D(2020, 1, 10), np.ones(30))
    with pytest.raises(IndexConstructionError):
        normalize_baseline(s, DEFAULT_BASELINE)
    gap = np.ones(40)
    gap[10] = np.nan
    with pytest.raises(IndexConstructionError):
        normalize_baseline(DatedSeries(D(2020, 1, 1), gap), DEFAULT_BASELINE)
    with pytest.raises(IndexConstructionError):
        normalize_baseline(DatedSeries(D(2020, 1, 1), np.zeros(40)), DEFAULT_BASELINE)


# --- build_index -----------------------------------------------------------

def _two_years(rng, scale=1):
    """Daily amounts 2018-12-01 .. 2020-06-30 with a repeated-year structure."""
    start = D(2018, 12, 1)
    n = (D(2020, 6, 30) - start).days + 1
    return start, (rng.integers(100, 10_000, n) * scale).astype(np.int64)


def test_identical_years_give_unit_index():
    base_year = np.random.default_rng(5).integers(100, 10_000, 366)
    days = [D(2019, 1, 1) + dt.timedelta(days=i) for i in range(365)]
    rows = [(d, int(base_year[i]), "A") for i, d in enumerate(days)]
    rows += [(d.replace(year=2020), int(base_year[i]), "A") for i, d in enumerate(days) if d.month < 7]
    idx = build_index(columns(rows), group("A"), span=(D(2020, 1, 8), D(2020, 2, 27)))
    assert np.allclose(idx.values, 1.0, rtol=0, atol=1e-12)


def test_scaling_current_year_leaves_index_unchanged():
    start, amounts = _two_years(np.random.default_rng(11))
    cur = np.array([start + dt.timedelta(days=i) >= D(2019, 12, 1) for i in range(len(amounts))])
    doubled = np.where(cur, amounts * 2, amounts)
    a = build_index(daily_columns(start, amounts), group("A"))
    b = build_index(daily_columns(start, doubled), group("A"))
    assert np.allclose(a.values, b.values, rtol=1e-12, atol=0)


def test_build_index_window_choices_and_baseline():
    start, amounts = _two_years(np.random.default_rng(2))
    for k in (7, 14, 28):
        idx = build_index(daily_columns(start, amounts), group("A"), window=k)
        assert idx.window_days == k
        assert abs(idx.baseline_mean() - 1.0) <= 1e-12


def test_build_index_needs_prior_year_data():
    start = D(2019, 6, 1)
    amounts = np.full((D(2020, 6, 1) - start).days, 100)
    with pytest.raises(IndexConstructionError):
        build_index(daily_columns(start, amounts), group("A"))


def test_series_csv_round_trip(tmp_path):
    vals = np.array([1.0, np.nan, 0.1 + 0.2, 1e-300])
    s = DatedSeries(D(2020, 1, 1), vals)
    p = tmp_path / "s.csv"
    write_series_csv(s, p, metadata={"geography": "X"})
    back = read_series_csv(p)
    assert back.start == s.start
    assert np.array_equal(back.values, vals, equal_nan=True)
    assert p.read_text().splitlines()[2] == "2020-01-02,,gap"
    assert (tmp_path / "s.json").exists()


# --- benchmark validation --------------------------------------------------

def test_monthly_totals_and_growth():
    cols = columns([(D(2019, 1, 5), 100, "A"), (D(2019, 1, 20), 50, "A"), (D(2020, 1, 3), 300, "A")])
    totals = monthly_totals(cols)
    assert totals[(2019, 1)] == 150 and totals[(2020, 1)] == 300
    assert yoy_growth(totals)[(2020, 1)] == 1.0


def test_pearson_identities():
    x = np.random.default_rng(0).normal(size=12)
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)
    assert pearson(x, 3.0 * x - 2.0) == pytest.approx(1.0, abs=1e-12)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError):
        pearson([1, 1, 1], [1, 2, 3])


def test_validate_requires_three_months():
    growth = {(2020, 1): 0.1, (2020, 2): 0.2}
    with pytest.raises(ValueError):
        validate_against_benchmark(None, growth, own_growth=growth)


def test_validate_windows():
    own = {(2019, m): 0.01 * m for m in range(1, 13)}
    bench = {k: 2 * v + 0.3 for k, v in own.items()}
    rep = validate_against_benchmark(None, bench, [((2019, 1), (2019, 6)), ((2019, 7), (2019, 12))], own_growth=own)
    assert [w["n_months"] for w in rep.windows] == [6, 6]
    assert all(abs(w["pearson"] - 1.0) < 1e-12 for w in rep.windows)
    assert rep.to_json()["windows"][0]["start"] == "2019-01"

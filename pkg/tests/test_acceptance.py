"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import datetime as dt
import statistics
import time
from collections import Counter
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

import golden
from conftest import OFFLINE, PLANTED, mc_config, small_config
from lockdown_did.estimator import (
    DYNAMIC,
    STATIC,
    PanelUnit,
    build_unit_panel,
    cluster_cov,
    format_table,
    run_did,
    stars_for,
    table_rows,
    wls_fit,
)
from lockdown_did.index import (
    aggregate_daily,
    aggregate_daily_sharded,
    build_index,
    pearson,
    validate_against_benchmark,
)
from lockdown_did.ingest import (
    AMOUNT_CAP_PENCE,
    CardType,
    Channel,
    Role,
    Transaction,
    filter_transactions,
    parse_geo_lookup,
    parse_population,
    parse_transactions,
    resolve_geography,
)
from lockdown_did.pipeline import SPEND_INDEX, RunOptions, dataset_from_scenario, estimate_all, estimate_pair
from lockdown_did.series import DatedSeries
from lockdown_did.synth import amount_calibration_sample, gen_scenario, oracle_ols, oracle_sandwich

BASELINE = (dt.date(2020, 1, 8), dt.date(2020, 1, 28))


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def check(n, detail=""):
        try:
            yield
        except BaseException:
            with capsys.disabled():
                print(f"\nFAIL criterion {n} {detail}")
            raise
        with capsys.disabled():
            print(f"\nPASS criterion {n} {detail}")

    return check


# --- 1 ---------------------------------------------------------------------

def test_criterion_01_golden_index(criterion):
    expect = golden.oracle_index()
    frozen = {
        dt.date(2020, 2, 27): 0.4901612610315241,
        dt.date(2020, 2, 29): 0.7178483699693177,
        dt.date(2020, 3, 1): 237.81865411362708,
    }
    with criterion(1, "golden fixture, 3 checkpoints within 1e-9, < 1 s"):
        assert expect[dt.date(2020, 2, 27)] == Fraction(113753880240, 232074399353)
        for d, v in frozen.items():
            assert abs(float(expect[d]) - v) <= 1e-15
        t0 = time.perf_counter()
        parsed = parse_transactions(golden.csv_text().encode())
        kept = filter_transactions(parsed.records)
        pop = parse_population(golden.POPULATION_TEXT.encode())
        tagged = resolve_geography(kept.kept, parse_geo_lookup(golden.GEO_TEXT.encode(), pop))
        idx = build_index(tagged, pop.group("E1", ["E1"], Role.TREATMENT), window=golden.WINDOW)
        elapsed = time.perf_counter() - t0
        assert parsed.errors == [] and kept.drops == Counter(currency=1, over_cap=1)
        for d, v in frozen.items():
            assert abs(idx.get(d) - v) <= 1e-9, d
        assert elapsed < 1.0


# --- 2 ---------------------------------------------------------------------

def _baseline_mean(s):
    return float(np.mean(s.window(*BASELINE)))


def test_criterion_02_baseline_normalization(criterion, planted_data):
    with criterion(2, "every index has baseline mean 1 within 1e-12"):
        n = 0
        data = planted_data
        for pair in data.plan().pairs:
            for g in (pair.treatment, pair.control):
                singles = [data.population.group(a, [a], g.role) for a in sorted(g.authorities)]
                for grp in [g, *singles]:
                    for flt in (None, OFFLINE):
                        for k in (7, 14, 28):
                            s = build_index(data.transactions, grp, flt, k)
                            assert abs(_baseline_mean(s) - 1.0) <= 1e-12
                            n += 1
        assert n == 96  # 2 events x 8 group/authority series x 2 filters x 3 windows


# --- 3 ---------------------------------------------------------------------

def test_criterion_03_oracle_equivalence(criterion):
    with criterion(3, "100 instances, coef and sandwich within 1e-8, < 5 s"):
        rng = np.random.default_rng(20200730)
        t0 = time.perf_counter()
        worst_b = worst_v = 0.0
        for _ in range(100):
            n, k = int(rng.integers(12, 80)), int(rng.integers(2, 8))
            X = rng.normal(size=(n, k))
            y = X @ rng.normal(size=k) + rng.normal(size=n)
            w = rng.uniform(0.1, 5.0, n)
            g = rng.integers(0, int(rng.integers(2, 10)), n)
            fit = wls_fit(X, y, w)
            worst_b = max(worst_b, np.max(np.abs(fit.coef - oracle_ols(X, y, w))))
            for variant in ("cr0", "cr1"):
                a = cluster_cov(X, fit.residuals, w, g, variant)
                b = oracle_sandwich(X, fit.residuals, w, g, variant)
                worst_v = max(worst_v, np.max(np.abs(a - b)))
        elapsed = time.perf_counter() - t0
        assert worst_b <= 1e-8 and worst_v <= 1e-8
        assert elapsed < 5.0


# --- 4 ---------------------------------------------------------------------

def test_criterion_04_exact_recovery(criterion):
    with criterion(4, "noiseless planted and null scenarios within 1e-10, < 10 s"):
        t0 = time.perf_counter()
        planted = gen_scenario(small_config(planted_effects=PLANTED))
        null = gen_scenario(small_config())
        for sc, zero in ((planted, False), (null, True)):
            results, _ = estimate_all(dataset_from_scenario(sc), SPEND_INDEX, DYNAMIC, RunOptions())
            assert [r.event for r in results] == ["Alpha", "Beta"]
            for r in results:
                truth = sc.ground_truth["induced_index_effects"][r.event]["offline"]["dynamic"]
                assert sorted(r.interaction_names) == sorted(f"Treat*After_{w}" for w in truth)
                for w, v in truth.items():
                    est = r.coefficients[f"Treat*After_{w}"]
                    assert abs(est - v) <= 1e-10
                    if zero:
                        assert abs(est) < 1e-10
        assert any(abs(v) > 0.01 for v in planted.ground_truth["induced_index_effects"]["Alpha"]["offline"]["dynamic"].values())
        assert time.perf_counter() - t0 < 10.0


# --- 5 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_coverage(criterion):
    with criterion(5, "200 seeds, per-week coverage of +-2 SE >= 0.90, < 2 min"):
        t0 = time.perf_counter()
        # the noiseless twin is seed-invariant, so truth is measured once
        truth = gen_scenario(mc_config(0)).ground_truth["induced_index_effects"]["Alpha"]["offline"]["dynamic"]
        options = RunOptions(cluster_key="authority")
        hits = []
        for seed in range(200):
            data = dataset_from_scenario(gen_scenario(mc_config(seed), truth=False))
            r = estimate_pair(data, data.plan().pairs[0], SPEND_INDEX, DYNAMIC, options)
            row = []
            for w, v in truth.items():
                name = f"Treat*After_{w}"
                row.append(abs(r.coefficients[name] - v) <= 2 * r.standard_errors[name])
            hits.append(row)
        coverage = np.mean(hits, axis=0)
        elapsed = time.perf_counter() - t0
        assert coverage.min() >= 0.90
        assert elapsed < 120.0


# --- 6 ---------------------------------------------------------------------

def _random_units(rng, n_treat=3, n_ctrl=3, pre=4, post=4, shock=None, shift=0.0):
    ann = dt.date(2020, 7, 30)
    start = ann - dt.timedelta(days=7 * pre)
    n = 7 * (pre + post)
    units = []
    for i in range(n_treat + n_ctrl):
        vals = rng.normal(size=n) + (shock if shock is not None else 0.0) + (shift if i < n_treat else 0.0)
        units.append(PanelUnit(f"u{i}", i < n_treat, DatedSeries(start, vals), float(rng.uniform(0.5, 3.0)), f"u{i}"))
    return build_unit_panel(units, ann, pre, post)


def test_criterion_06_fixed_effect_absorption(criterion):
    with criterion(6, "day shocks and treated shifts absorbed within 1e-9"):
        for seed in range(20):
            shock = np.random.default_rng(1000 + seed).normal(scale=10.0, size=56)
            base, shocked, shifted = (
                _random_units(np.random.default_rng(seed), **kw) for kw in ({}, {"shock": shock}, {"shift": 7.5})
            )
            for spec in (STATIC, DYNAMIC):
                a, b, c = run_did(base, spec), run_did(shocked, spec), run_did(shifted, spec)
                for name in a.interaction_names:
                    assert abs(a.coefficients[name] - b.coefficients[name]) <= 1e-9
                for name in a.names:
                    expect = a.coefficients[name] + (7.5 if name == "Treat" else 0.0)
                    assert abs(c.coefficients[name] - expect) <= 1e-9


# --- 7 ---------------------------------------------------------------------

def test_criterion_07_table_shape(criterion, planted_data):
    with criterion(7, "After_-3..-1,1..4 rows, blank After_4 for a 3-week event, star thresholds"):
        results, _ = estimate_all(planted_data, SPEND_INDEX, DYNAMIC, RunOptions(cluster_key="authority"))
        alpha, beta = results
        assert alpha.interaction_names == [f"Treat*After_{w}" for w in (-3, -2, -1, 1, 2, 3, 4)]
        assert beta.interaction_names == [f"Treat*After_{w}" for w in (-3, -2, -1, 1, 2, 3)]
        assert "Treat*After_0" not in alpha.names
        lines = format_table(results).splitlines()
        terms = [ln.split(",")[0] for ln in lines if ln.startswith("Treat*")]
        assert terms == table_rows(4, 4)
        after4 = next(ln for ln in lines if ln.startswith("Treat*After_4,")).split(",")
        assert after4[1] != "" and after4[2] == ""
        cases = [(0.0009, "***"), (0.001, "**"), (0.0099, "**"), (0.01, "*"), (0.0499, "*"), (0.05, ""), (0.2, "")]
        assert all(stars_for(p) == mark for p, mark in cases)
        for r in results:
            for name in r.names:
                assert r.stars[name] == stars_for(r.p_values[name])


# --- 8 ---------------------------------------------------------------------

def _txn(amount, currency="GBP", card=CardType.CONSUMER_CREDIT):
    return Transaction("a", dt.date(2020, 3, 1), amount, currency, card, Channel.OFFLINE, "retail", "M1 4")


def test_criterion_08_filters_and_amounts(criterion):
    with criterion(8, "cap, currency and card filters; amount median/mean within 10% at n=100k"):
        assert AMOUNT_CAP_PENCE == 5_000_000
        rows = [
            _txn(AMOUNT_CAP_PENCE + 1),
            _txn(AMOUNT_CAP_PENCE),
            _txn(10_000_000),
            _txn(1500, "USD"),
            _txn(1500, "EUR"),
            _txn(1500, card=CardType.OTHER),
            _txn(1500),
        ]
        res = filter_transactions(rows)
        assert [t.amount for t in res.kept] == [AMOUNT_CAP_PENCE, 1500]
        assert res.drops == Counter(over_cap=2, currency=2, card_type=1)
        a = amount_calibration_sample(0)
        assert a.shape == (100_000,)
        assert abs(np.median(a) - 1500) <= 150
        assert abs(a.mean() - 3900) <= 390


# --- 9 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_09_throughput_and_determinism(criterion):
    with criterion(9, "1M transactions aggregated in < 5 s; sharded == single-pass"):
        sc = gen_scenario(small_config(n_accounts={"treatment": 460, "control": 460}), truth=False)
        cols = sc.transactions
        assert len(cols) >= 1_000_000
        data = dataset_from_scenario(sc)
        groups = [g for p in data.plan().pairs for g in (p.treatment, p.control)]
        span = (cols.first_date, cols.last_date)
        t0 = time.perf_counter()
        single = [aggregate_daily(cols, g, flt, span) for g in groups for flt in (None, OFFLINE)]
        elapsed = time.perf_counter() - t0
        assert elapsed < 5.0
        sharded = [aggregate_daily_sharded(cols, g, flt, span, n_shards=4) for g in groups for flt in (None, OFFLINE)]
        for a, b in zip(single, sharded):
            assert a.values.tobytes() == b.values.tobytes()
        members = {cols.authorities.index(a) for g in groups for a in g.authorities}
        in_groups = np.isin(cols.authority, sorted(members))
        assert int(sum(s.values.sum() for s in single[::2])) == int(cols.amount[in_groups].sum())


# --- 10 --------------------------------------------------------------------

def test_criterion_10_pearson_harness(criterion):
    with criterion(10, "corr identities and a 6-month fixture within 1e-12"):
        x = np.random.default_rng(7).normal(size=24)
        assert abs(pearson(x, x) - 1.0) <= 1e-12
        for a, b in ((2.5, -1.0), (0.01, 3.0), (1e3, 0.0)):
            assert abs(pearson(x, a * x + b) - 1.0) <= 1e-12
        own = {(2020, m): v for m, v in zip(range(1, 7), [0.031, 0.027, -0.104, -0.362, -0.281, -0.155])}
        bench = {(2020, m): v for m, v in zip(range(1, 7), [0.045, 0.012, -0.087, -0.395, -0.240, -0.170])}
        expect = statistics.correlation([own[k] for k in sorted(own)], [bench[k] for k in sorted(own)])
        rep = validate_against_benchmark(None, bench, [((2020, 1), (2020, 6))], own_growth=own)
        assert rep.windows[0]["n_months"] == 6
        assert abs(rep.windows[0]["pearson"] - expect) <= 1e-12

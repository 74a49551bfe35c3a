"""Synthetic scenarios with planted lockdown effects, and brute-force oracles.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence(seed, spawn_key=(stream, index))``. Each data kind has a
fixed stream id (see ``STREAM_*``) and transaction/case streams are further
split per authority, so any authority's data can be regenerated alone.

With ``noise_scale == 0`` the generator is deterministic: every authority
emits a fixed number of transactions per day, all of the same amount, so
index series within a treatment or control side are identical and the
dynamic regression reproduces the planted path exactly. With
``noise_scale > 0`` transaction counts are Poisson around the same
expectation (times a log-normal day shock of that scale) and amounts are
log-normal with the configured median and mean.
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .epi import case_rate
from .index import DEFAULT_BASELINE, SpendFilter, build_index
from .ingest import (
    CaseRecord,
    Channel,
    LockdownEvent,
    PopulationTable,
    Role,
    TransactionColumns,
    WatchlistCategory,
    date_to_day,
    day_to_date,
)
from .series import DatedSeries

STREAM_POPULATION = 0
STREAM_TRANSACTIONS = 1
STREAM_CASES = 2
STREAM_AMOUNTS = 3

PLANTABLE_WEEKS = frozenset({-3, -2, -1, 1, 2, 3, 4})
CATEGORIES = ("food_beverage", "retail", "travel", "entertainment")
CATEGORY_SHARES = (0.4, 0.35, 0.1, 0.15)
OFFLINE_SHARE = 0.7
SECTORS_PER_AUTHORITY = 3


class ScenarioError(ValueError):
    pass


def rng_for(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, index))))


def lognormal_params(median: float, mean: float) -> tuple[float, float]:
    """``(mu, sigma)`` of the log-normal with the given median and mean."""
    if not 0 < median < mean:
        raise ScenarioError("log-normal needs 0 < median < mean")
    return math.log(median), math.sqrt(2.0 * math.log(mean / median))


def sample_amounts(rng: np.random.Generator, n: int, median: float = 1500, mean: float = 3900) -> np.ndarray:
    """Integer pence amounts (at least 1p) from the calibrated log-normal."""
    mu, sigma = lognormal_params(median, mean)
    return np.maximum(np.rint(rng.lognormal(mu, sigma, n)), 1).astype(np.int64)


def amount_calibration_sample(seed: int, n: int = 100_000, median: float = 1500, mean: float = 3900) -> np.ndarray:
    """Standalone amount draw on its own stream, for checking the calibration."""
    return sample_amounts(rng_for(seed, STREAM_AMOUNTS), n, median, mean)


@dataclass(frozen=True)
class EventSpec:
    name: str
    announcement_date: dt.date
    n_treated: int = 3
    n_control: int = 3


def _default_events() -> list[EventSpec]:
    return [
        EventSpec("Alpha", dt.date(2020, 7, 30)),
        # ends 22 days after announcement: three complete post weeks
        EventSpec("Beta", dt.date(2020, 9, 16)),
        EventSpec("Gamma", dt.date(2020, 9, 11), n_treated=1, n_control=0),
    ]


def _default_shock() -> list[tuple[dt.date, float]]:
    return [
        (dt.date(2020, 3, 1), 1.0),
        (dt.date(2020, 3, 23), 0.55),
        (dt.date(2020, 5, 15), 0.7),
        (dt.date(2020, 7, 15), 0.9),
        (dt.date(2020, 10, 31), 0.85),
    ]


def _default_case_curve() -> list[tuple[dt.date, float]]:
    return [
        (dt.date(2020, 2, 15), 0.0),
        (dt.date(2020, 4, 10), 8.0),
        (dt.date(2020, 6, 20), 1.0),
        (dt.date(2020, 10, 31), 20.0),
    ]


@dataclass
class ScenarioConfig:
    seed: int = 20200730
    start: dt.date = dt.date(2018, 12, 1)
    end: dt.date = dt.date(2020, 10, 7)
    events: list[EventSpec] = field(default_factory=_default_events)
    n_accounts: dict[str, int] = field(default_factory=lambda: {"treatment": 120, "control": 120})
    txn_rate: float = 0.25
    amount_median: float = 1500.0
    amount_mean: float = 3900.0
    group_offsets: dict[str, float] = field(default_factory=lambda: {"treatment": 1.0, "control": 1.0})
    common_shock: list[tuple[dt.date, float]] = field(default_factory=_default_shock)
    weekday_pattern: tuple[float, ...] = (0.9, 0.95, 1.0, 1.0, 1.1, 1.25, 0.8)
    annual_amplitude: float = 0.08
    planted_effects: dict[int, float] = field(default_factory=dict)
    planted_case_effects: dict[int, float] = field(default_factory=dict)
    noise_scale: float = 0.0
    case_curve: list[tuple[dt.date, float]] = field(default_factory=_default_case_curve)
    cases_start: dt.date = dt.date(2020, 1, 1)
    population_range: tuple[int, int] = (80_000, 400_000)
    pre_weeks: int = 4
    post_weeks: int = 4
    window_days: int = 7
    baseline: tuple[dt.date, dt.date] = DEFAULT_BASELINE

    def __post_init__(self):
        self.planted_effects = {int(k): float(v) for k, v in self.planted_effects.items()}
        self.planted_case_effects = {int(k): float(v) for k, v in self.planted_case_effects.items()}
        bad = (set(self.planted_effects) | set(self.planted_case_effects)) - PLANTABLE_WEEKS
        if bad:
            raise ScenarioError(f"planted weeks must be in {sorted(PLANTABLE_WEEKS)}, got {sorted(bad)}")
        if self.end <= self.start:
            raise ScenarioError(f"degenerate span {self.start}..{self.end}")
        if self.noise_scale < 0:
            raise ScenarioError("noise_scale must be non-negative")
        if not self.events:
            raise ScenarioError("at least one event is required")

    def to_json(self) -> dict:
        def enc(v):
            if isinstance(v, dt.date):
                return v.isoformat()
            if isinstance(v, dict):
                return {str(k): enc(x) for k, x in sorted(v.items(), key=lambda kv: str(kv[0]))}
            if isinstance(v, (list, tuple)):
                return [enc(x) for x in v]
            return v

        return enc(asdict(self))

    @classmethod
    def from_json(cls, data: Mapping) -> "ScenarioConfig":
        data = dict(data)

        def d(x):
            return dt.date.fromisoformat(x) if isinstance(x, str) else x

        for key in ("start", "end", "cases_start"):
            if key in data:
                data[key] = d(data[key])
        if "events" in data:
            data["events"] = [
                EventSpec(e["name"], d(e["announcement_date"]), e.get("n_treated", 3), e.get("n_control", 3))
                for e in data["events"]
            ]
        for key in ("common_shock", "case_curve"):
            if key in data:
                data[key] = [(d(a), float(b)) for a, b in data[key]]
        for key in ("baseline", "population_range", "weekday_pattern"):
            if key in data:
                data[key] = tuple(d(x) if key == "baseline" else x for x in data[key])
        return cls(**data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def noiseless(self) -> "ScenarioConfig":
        twin = ScenarioConfig.from_json(self.to_json())
        twin.noise_scale = 0.0
        return twin


@dataclass
class Authority:
    code: str
    event: str
    role: Role
    region: str
    population: int
    sectors: tuple[str, ...]


@dataclass
class Scenario:
    config: ScenarioConfig
    authorities: list[Authority]
    transactions: TransactionColumns
    account: np.ndarray
    cases: list[CaseRecord]
    lockdowns: list[LockdownEvent]
    population: PopulationTable
    geo_lookup: dict[str, str]
    ground_truth: dict

    @property
    def sector_of(self) -> np.ndarray:
        """Cardholder sector code per transaction row (index into the authority's sectors)."""
        return self.account % SECTORS_PER_AUTHORITY


# ---------------------------------------------------------------------------
# deterministic shapes
# ---------------------------------------------------------------------------

def _interp(points: Sequence[tuple[dt.date, float]], days: np.ndarray) -> np.ndarray:
    xs = np.array([date_to_day(d) for d, _ in points], dtype=np.float64)
    ys = np.array([v for _, v in points], dtype=np.float64)
    return np.interp(days.astype(np.float64), xs, ys)


def _seasonal(cfg: ScenarioConfig, days: np.ndarray) -> np.ndarray:
    # 1970-01-01 was a Thursday (weekday index 3)
    weekday = (days + 3) % 7
    doy = np.array([day_to_date(int(d)).timetuple().tm_yday for d in days])
    annual = 1.0 + cfg.annual_amplitude * np.sin(2.0 * np.pi * doy / 365.25)
    return np.asarray(cfg.weekday_pattern)[weekday] * annual


def _effect_multiplier(effects: Mapping[int, float], days: np.ndarray, announcement: dt.date, cfg: ScenarioConfig):
    rel = days - date_to_day(announcement)
    week = np.floor_divide(rel, 7) + 1
    in_window = (rel >= -7 * cfg.pre_weeks) & (rel < 7 * cfg.post_weeks)
    mult = np.ones(days.shape[0])
    for w, delta in effects.items():
        mult[in_window & (week == w)] *= 1.0 + delta
    return mult


def _authority_table(cfg: ScenarioConfig) -> list[Authority]:
    rng = rng_for(cfg.seed, STREAM_POPULATION)
    out = []
    idx = 0
    for e_i, ev in enumerate(cfg.events):
        for role, n in ((Role.TREATMENT, ev.n_treated), (Role.CONTROL, ev.n_control)):
            for _ in range(n):
                letters = chr(ord("A") + idx // 26) + chr(ord("A") + idx % 26)
                sectors = tuple(f"{letters}{1 + e_i % 9} {s}" for s in range(SECTORS_PER_AUTHORITY))
                pop = int(rng.integers(cfg.population_range[0], cfg.population_range[1] + 1))
                out.append(Authority(f"A{idx:03d}", ev.name, role, f"R{e_i + 1}", pop, sectors))
                idx += 1
    return out


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _authority_transactions(cfg, a_idx, auth, event, days, base):
    """Columns (day, amount, account, category, channel) for one authority."""
    role = auth.role.value
    n_acc = int(cfg.n_accounts[role])
    level = n_acc * cfg.txn_rate * cfg.group_offsets.get(role, 1.0)
    mult = base
    if auth.role is Role.TREATMENT and cfg.planted_effects:
        mult = base * _effect_multiplier(cfg.planted_effects, days, event, cfg)
    if cfg.noise_scale == 0:
        count = int(round(level))
        counts = np.full(days.shape[0], count, dtype=np.int64)
        amount_day = np.rint(cfg.amount_mean * mult).astype(np.int64)
        day_col = np.repeat(days, counts)
        amount = np.repeat(amount_day, counts)
        account = np.tile(np.arange(count, dtype=np.int64), days.shape[0])
        category = account % len(CATEGORIES)
        channel = (account % 10 < round(10 * OFFLINE_SHARE)).astype(np.int8)
        return day_col, amount, account, category, channel
    rng = rng_for(cfg.seed, STREAM_TRANSACTIONS, a_idx)
    s = cfg.noise_scale
    shock = np.exp(s * rng.standard_normal(days.shape[0]) - 0.5 * s * s)
    counts = rng.poisson(level * mult * shock)
    n = int(counts.sum())
    day_col = np.repeat(days, counts)
    amount = sample_amounts(rng, n, cfg.amount_median, cfg.amount_mean)
    account = rng.integers(0, n_acc, n)
    category = rng.choice(len(CATEGORIES), size=n, p=CATEGORY_SHARES)
    channel = (rng.random(n) < OFFLINE_SHARE).astype(np.int8)
    return day_col, amount, account, category, channel


def _authority_cases(cfg, a_idx, auth, event, days):
    expected = auth.population / 100_000 * _interp(cfg.case_curve, days)
    if auth.role is Role.TREATMENT and cfg.planted_case_effects:
        expected = expected * _effect_multiplier(cfg.planted_case_effects, days, event, cfg)
    if cfg.noise_scale == 0:
        return np.rint(expected).astype(np.int64)
    rng = rng_for(cfg.seed, STREAM_CASES, a_idx)
    s = cfg.noise_scale
    return rng.poisson(expected * np.exp(s * rng.standard_normal(days.shape[0]) - 0.5 * s * s))


def _generate(cfg: ScenarioConfig, with_truth: bool) -> Scenario:
    auths = _authority_table(cfg)
    events = {e.name: e for e in cfg.events}
    days = np.arange(date_to_day(cfg.start), date_to_day(cfg.end) + 1, dtype=np.int64)
    base = _seasonal(cfg, days) * _interp(cfg.common_shock, days)
    parts = []
    for i, a in enumerate(auths):
        cols = _authority_transactions(cfg, i, a, events[a.event].announcement_date, days, base)
        parts.append(cols + (np.full(cols[0].shape[0], i, dtype=np.int32),))
    day, amount, account, category, channel, authority = (np.concatenate(c) for c in zip(*parts))
    txns = TransactionColumns(
        day=day,
        amount=amount,
        authority=authority,
        authorities=tuple(a.code for a in auths),
        category=category.astype(np.int32),
        categories=CATEGORIES,
        channel=channel.astype(np.int8),
    )
    case_days = np.arange(date_to_day(max(cfg.cases_start, cfg.start)), date_to_day(cfg.end) + 1, dtype=np.int64)
    cases = []
    for i, a in enumerate(auths):
        counts = _authority_cases(cfg, i, a, events[a.event].announcement_date, case_days)
        cases.extend(CaseRecord(a.code, day_to_date(int(d)), int(c)) for d, c in zip(case_days, counts))
    lockdowns = [
        LockdownEvent(
            ev.name,
            ev.announcement_date,
            tuple(a.code for a in auths if a.event == ev.name and a.role is Role.TREATMENT),
            tuple(a.code for a in auths if a.event == ev.name and a.role is Role.CONTROL),
            WatchlistCategory.INTERVENTION,
        )
        for ev in cfg.events
    ]
    population = PopulationTable({a.code: a.population for a in auths}, {a.code: a.region for a in auths})
    geo = {s: a.code for a in auths for s in a.sectors}
    scenario = Scenario(cfg, auths, txns, account.astype(np.int64), cases, lockdowns, population, geo, {})
    if with_truth:
        twin = scenario if cfg.noise_scale == 0 else _generate(cfg.noiseless(), with_truth=False)
        scenario.ground_truth = induced_effects(twin)
    return scenario


def gen_scenario(config: ScenarioConfig | None = None, *, truth: bool = True) -> Scenario:
    """Generate a full dataset plus the ground truth measured on its noiseless twin.

    ``truth=False`` skips the twin (the noiseless twin does not depend on
    the seed, so Monte Carlo loops can measure it once).
    """
    return _generate(config or ScenarioConfig(), with_truth=truth)


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

def window_effects(treat: DatedSeries, control: DatedSeries, announcement: dt.date, pre_weeks: int, post_weeks: int):
    """Week-mean treated-minus-control gaps relative to the base week.

    Returns ``(dynamic, static, post_weeks_used)``. On a balanced two-group
    panel with day dummies these are exactly the DiD interaction
    coefficients, because each day's pair of observations collapses to the
    single difference ``treat - control``.
    """
    post = min(
        post_weeks,
        ((treat.end - announcement).days + 1) // 7,
        ((control.end - announcement).days + 1) // 7,
    )
    first = announcement - dt.timedelta(days=7 * pre_weeks)
    last = announcement + dt.timedelta(days=7 * post - 1)
    gap = treat.window(first, last) - control.window(first, last)
    rel = np.arange(-7 * pre_weeks, 7 * post)
    week = np.floor_divide(rel, 7) + 1
    base = math.fsum(gap[week == 0]) / 7
    dynamic = {int(w): math.fsum(gap[week == w]) / 7 - base for w in np.unique(week) if w != 0}
    after = rel >= 0
    static = math.fsum(gap[after]) / int(after.sum()) - math.fsum(gap[~after]) / int((~after).sum())
    return dynamic, static, post


def induced_effects(scenario: Scenario, filters: Sequence[SpendFilter] | None = None) -> dict:
    """Ground-truth effects on the index and case-rate scales for every paired event."""
    cfg = scenario.config
    filters = filters or [SpendFilter(), SpendFilter(channel=Channel.OFFLINE)]
    index_fx, case_fx, windows = {}, {}, {}
    for ev in scenario.lockdowns:
        if not ev.control_authorities:
            continue
        groups = [
            scenario.population.group(ev.name, ev.treated_authorities, Role.TREATMENT),
            scenario.population.group(f"{ev.name} (control)", ev.control_authorities, Role.CONTROL),
        ]
        index_fx[ev.name] = {}
        for f in filters:
            t, c = (build_index(scenario.transactions, g, f, cfg.window_days, cfg.baseline) for g in groups)
            dyn, stat, post = window_effects(t, c, ev.announcement_date, cfg.pre_weeks, cfg.post_weeks)
            index_fx[ev.name][f.label] = {"dynamic": {str(k): v for k, v in dyn.items()}, "static": stat}
        t, c = (case_rate(scenario.cases, g, cfg.window_days) for g in groups)
        dyn, stat, _ = window_effects(t, c, ev.announcement_date, cfg.pre_weeks, cfg.post_weeks)
        case_fx[ev.name] = {"dynamic": {str(k): v for k, v in dyn.items()}, "static": stat}
        windows[ev.name] = {"pre_weeks": cfg.pre_weeks, "post_weeks": post}
    return {
        "planted_effects": {str(k): v for k, v in sorted(cfg.planted_effects.items())},
        "planted_case_effects": {str(k): v for k, v in sorted(cfg.planted_case_effects.items())},
        "induced_index_effects": index_fx,
        "induced_case_effects": case_fx,
        "windows": windows,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
    }


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def transactions_csv(scenario: Scenario) -> str:
    tx = scenario.transactions
    codes = tx.authorities
    auth_sectors = [a.sectors for a in scenario.authorities]
    date_str = {}
    lines = ["account_id,date,amount_pence,currency,card_type,channel,category,cardholder_sector,merchant_authority\n"]
    chan = ("online", "offline")
    sector_idx = scenario.sector_of
    for d, amt, a, cat, ch, acc, s in zip(
        tx.day.tolist(),
        tx.amount.tolist(),
        tx.authority.tolist(),
        tx.category.tolist(),
        tx.channel.tolist(),
        scenario.account.tolist(),
        sector_idx.tolist(),
    ):
        ds = date_str.get(d)
        if ds is None:
            ds = date_str[d] = day_to_date(d).isoformat()
        code = codes[a]
        lines.append(
            f"{code}-{acc},{ds},{amt},GBP,consumer_credit,{chan[ch]},{tx.categories[cat]},{auth_sectors[a][s]},{code}\n"
        )
    return "".join(lines)


def write_scenario(scenario: Scenario, outdir: str | Path) -> dict[str, Path]:
    """Write the five input CSVs, the ground truth and the scenario config."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "transactions": out / "transactions.csv",
        "cases": out / "cases.csv",
        "lockdowns": out / "lockdowns.csv",
        "population": out / "population.csv",
        "geo_lookup": out / "geo_lookup.csv",
        "ground_truth": out / "ground_truth.json",
        "scenario": out / "scenario.json",
    }
    paths["transactions"].write_text(transactions_csv(scenario), encoding="utf-8")
    paths["cases"].write_text(
        _csv_text(["authority", "date", "new_cases"], ((c.authority, c.date.isoformat(), c.new_cases) for c in scenario.cases)),
        encoding="utf-8",
    )
    paths["lockdowns"].write_text(
        _csv_text(
            ["name", "announcement_date", "category", "treated_authorities", "control_authorities"],
            (
                (e.name, e.announcement_date.isoformat(), e.watchlist_category.value,
                 ";".join(e.treated_authorities), ";".join(e.control_authorities))
                for e in scenario.lockdowns
            ),
        ),
        encoding="utf-8",
    )
    paths["population"].write_text(
        _csv_text(["authority", "region", "population_2019"], ((a.code, a.region, a.population) for a in scenario.authorities)),
        encoding="utf-8",
    )
    paths["geo_lookup"].write_text(
        _csv_text(["sector", "authority"], sorted(scenario.geo_lookup.items())), encoding="utf-8"
    )
    paths["ground_truth"].write_text(json.dumps(scenario.ground_truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["scenario"].write_text(json.dumps(scenario.config.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

class SingularSystemError(ValueError):
    pass


def _gauss_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X = B`` by Gaussian elimination with partial pivoting."""
    n = A.shape[0]
    M = np.hstack([A.astype(np.float64), B.reshape(n, -1).astype(np.float64)])
    scale = np.abs(A).max() if A.size else 0.0
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(M[col:, col])))
        if abs(M[pivot, col]) <= 1e-13 * max(scale, 1e-300):
            raise SingularSystemError(f"singular system at column {col}")
        if pivot != col:
            M[[col, pivot]] = M[[pivot, col]]
        for row in range(col + 1, n):
            f = M[row, col] / M[col, col]
            if f != 0.0:
                M[row, col:] -= f * M[col, col:]
    X = np.zeros((n, M.shape[1] - n))
    for row in range(n - 1, -1, -1):
        X[row] = (M[row, n:] - M[row, row + 1 : n] @ X[row + 1 :]) / M[row, row]
    return X


def _normal_matrix(X, w):
    n, k = X.shape
    A = np.zeros((k, k))
    for i in range(n):
        A += w[i] * np.outer(X[i], X[i])
    return A


def oracle_ols(X, y, w) -> np.ndarray:
    """Weighted least squares from the normal equations ``(X'WX) b = X'Wy``.

    Deliberately naive: explicit accumulation and explicit elimination.
    Intended for N <= 500, k <= 80.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    A = _normal_matrix(X, w)
    b = np.zeros(X.shape[1])
    for i in range(X.shape[0]):
        b += w[i] * y[i] * X[i]
    return _gauss_solve(A, b).reshape(-1)


def oracle_sandwich(X, e, w, clusters, variant: str = "cr1") -> np.ndarray:
    """Cluster sandwich by literal loops over clusters and matrix entries."""
    X = np.asarray(X, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    clusters = list(clusters)
    n, k = X.shape
    labels = sorted(set(clusters), key=str)
    bread = _gauss_solve(_normal_matrix(X, w), np.eye(k))
    meat = np.zeros((k, k))
    for g in labels:
        s = np.zeros(k)
        for i in range(n):
            if clusters[i] == g:
                for j in range(k):
                    s[j] += X[i, j] * w[i] * e[i]
        for j in range(k):
            for m in range(k):
                meat[j, m] += s[j] * s[m]
    cov = np.zeros((k, k))
    for j in range(k):
        for m in range(k):
            acc = 0.0
            for p in range(k):
                for q in range(k):
                    acc += bread[j, p] * meat[p, q] * bread[q, m]
            cov[j, m] = acc
    if variant == "cr1":
        G = len(labels)
        cov *= (G / (G - 1)) * ((n - 1) / (n - k))
    return cov

"""De-seasoned daily spending indices.

The pipeline for one geography and filter set is::

    daily pence totals -> trailing K-day mean (this year and last year)
    -> year-on-year ratio -> divide by the ratio's mean over a baseline window

The year-on-year denominator for 29 February averages the prior year's
28 February and 1 March values.
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .ingest import (
    Channel,
    GeoTagged,
    LocalityGroup,
    TransactionColumns,
    date_to_day,
    day_to_date,
)
from .series import DatedSeries

WINDOWS = (7, 14, 28)
DEFAULT_BASELINE = (dt.date(2020, 1, 8), dt.date(2020, 1, 28))
LEAP_DAY = (2, 29)


class IndexConstructionError(ValueError):
    """Raised when an index cannot be constructed from the supplied data."""


@dataclass(frozen=True)
class SpendFilter:
    """Optional category / channel restriction applied during aggregation."""

    category: str | None = None
    channel: Channel | None = None
    name: str = ""

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        parts = [p for p in (self.category, self.channel.value if self.channel else None) if p]
        return "_".join(parts) or "all"


@dataclass(frozen=True)
class DailySeries:
    """Integer pence totals on every day of ``[start, end]`` (explicit zeros)."""

    geography: str
    start: dt.date
    values: np.ndarray
    category_filter: str | None = None
    channel_filter: Channel | None = None

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.dtype.kind not in "iu":
            raise TypeError("daily totals must be integer pence")
        if (arr < 0).any():
            raise ValueError("daily totals must be non-negative")
        arr = arr.astype(np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self) - 1)

    def __getitem__(self, day: dt.date) -> int:
        i = (day - self.start).days
        if not 0 <= i < len(self):
            raise KeyError(day)
        return int(self.values[i])

    def to_dated(self) -> DatedSeries:
        return DatedSeries(self.start, self.values.astype(np.float64), {"geography": self.geography})


@dataclass(frozen=True)
class IndexSeries(DatedSeries):
    """Baseline-normalized index; ``NaN`` entries are flagged gaps."""

    window_days: int = 7
    baseline: tuple[dt.date, dt.date] = DEFAULT_BASELINE
    provenance: Mapping = field(default_factory=dict, compare=False)

    def baseline_mean(self) -> float:
        return float(np.mean(self.window(*self.baseline)))

    def sidecar(self) -> dict:
        return {
            "geography": self.provenance.get("geography"),
            "category": self.provenance.get("category"),
            "channel": self.provenance.get("channel"),
            "window_days": self.window_days,
            "baseline_start": self.baseline[0].isoformat(),
            "baseline_end": self.baseline[1].isoformat(),
        }


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def _as_columns(txns) -> TransactionColumns:
    if isinstance(txns, TransactionColumns):
        return txns
    if isinstance(txns, GeoTagged):
        return txns.columns
    pairs = list(txns)
    return TransactionColumns.from_pairs([t for t, _ in pairs], [a for _, a in pairs])


def _authority_table(cols: TransactionColumns, authorities: Iterable[str]) -> np.ndarray:
    wanted = set(authorities)
    return np.fromiter((a in wanted for a in cols.authorities), dtype=bool, count=len(cols.authorities))


def _category_code(cols: TransactionColumns, filters: SpendFilter | None) -> int:
    if filters is None or filters.category is None:
        return -1
    if filters.category not in cols.categories:
        # matches nothing
        return len(cols.categories)
    return cols.categories.index(filters.category)


def _channel_code(filters: SpendFilter | None) -> int:
    if filters is None or filters.channel is None:
        return -1
    return 1 if Channel(filters.channel) is Channel.OFFLINE else 0


def _row_mask(cols: TransactionColumns, authorities: Iterable[str], filters: SpendFilter | None) -> np.ndarray:
    wanted = set(authorities)
    table = np.fromiter((a in wanted for a in cols.authorities), dtype=bool, count=len(cols.authorities))
    keep = table[cols.authority]
    if filters is not None and filters.category is not None:
        if filters.category not in cols.categories:
            return np.zeros(len(cols), dtype=bool)
        keep &= cols.category == cols.categories.index(filters.category)
    if filters is not None and filters.channel is not None:
        keep &= cols.channel == (1 if Channel(filters.channel) is Channel.OFFLINE else 0)
    return keep


def aggregate_daily(
    txns,
    group: LocalityGroup,
    filters: SpendFilter | None = None,
    span: tuple[dt.date, dt.date] | None = None,
) -> DailySeries:
    """Sum transaction amounts per day for one locality group.

    ``txns`` may be a :class:`GeoTagged` result, a :class:`TransactionColumns`
    block, or an iterable of ``(Transaction, authority)`` pairs. The span
    defaults to the first..last transaction date of the input.
    """
    cols = _as_columns(txns)
    if span is None:
        if len(cols) == 0:
            raise IndexConstructionError("span empty: no transactions and no span given")
        span = (cols.first_date, cols.last_date)
    start, end = span
    n_days = (end - start).days + 1
    if n_days <= 0:
        raise IndexConstructionError(f"span empty: {start}..{end}")
    totals = _kernels.filtered_daily_sums(
        cols.day,
        cols.amount,
        cols.authority,
        _authority_table(cols, group.authorities),
        cols.category,
        _category_code(cols, filters),
        cols.channel,
        _channel_code(filters),
        date_to_day(start),
        n_days,
    )
    return DailySeries(
        group.name,
        start,
        totals,
        filters.category if filters else None,
        Channel(filters.channel) if filters and filters.channel else None,
    )


def aggregate_daily_sharded(txns, group, filters=None, span=None, n_shards: int = 4) -> DailySeries:
    """Aggregate shard by shard and merge with exact integer addition."""
    cols = _as_columns(txns)
    if span is None:
        span = (cols.first_date, cols.last_date)
    parts = [aggregate_daily(s, group, filters, span) for s in cols.shards(n_shards)]
    total = np.zeros(len(parts[0]), dtype=np.int64)
    for p in parts:
        total += p.values
    return DailySeries(parts[0].geography, parts[0].start, total, parts[0].category_filter, parts[0].channel_filter)


# ---------------------------------------------------------------------------
# smoothing and de-seasoning
# ---------------------------------------------------------------------------

def moving_average(series, window: int, *, allowed: Sequence[int] | None = WINDOWS) -> DatedSeries:
    """Trailing mean over ``[d - window + 1, d]``.

    The result starts ``window - 1`` days after the input, i.e. it is
    defined only where a full window of history exists. ``allowed=None``
    lifts the restriction to 7/14/28-day windows.
    """
    if allowed is not None and window not in allowed:
        raise ValueError(f"window must be one of {tuple(allowed)}, got {window}")
    if window < 1:
        raise ValueError("window must be positive")
    if isinstance(series, DailySeries):
        start, values = series.start, series.values
    else:
        start, values = series.start, np.asarray(series.values)
    if len(values) < window:
        raise ValueError(f"window {window} longer than series span ({len(values)} days)")
    sums = _kernels.trailing_window_sums(values, window)
    return DatedSeries(start + dt.timedelta(days=window - 1), sums / window, {"window_days": window})


def prior_year_dates(day: dt.date) -> tuple[dt.date, ...]:
    """Prior-year date(s) whose values form the denominator for ``day``."""
    if (day.month, day.day) == LEAP_DAY:
        return dt.date(day.year - 1, 2, 28), dt.date(day.year - 1, 3, 1)
    return (dt.date(day.year - 1, day.month, day.day),)


def prior_year_span(first: dt.date, last: dt.date) -> tuple[dt.date, dt.date]:
    """Smallest prior-year interval holding every denominator date for ``[first, last]``."""
    lo = min(prior_year_dates(first))
    hi = max(prior_year_dates(last))
    # a 29 Feb strictly inside the span needs 1 March, which shifting ``last`` already covers
    return lo, hi


@lru_cache(maxsize=256)
def _prior_offsets(start: dt.date, n: int, prior_start: dt.date) -> tuple[np.ndarray, np.ndarray]:
    """Offsets into the prior-year series of each day's two denominator dates.

    Both offsets coincide except on 29 February.
    """
    lo, hi = np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64)
    for i in range(n):
        dates = prior_year_dates(start + dt.timedelta(days=i))
        lo[i] = (dates[0] - prior_start).days
        hi[i] = (dates[-1] - prior_start).days
    return lo, hi


def yoy_deseason(ma_current: DatedSeries, ma_prior: DatedSeries) -> DatedSeries:
    """Ratio of each day's moving average to the same calendar day a year earlier.

    Days whose denominator is zero come back as ``NaN`` (flagged gaps); a
    required prior-year date outside ``ma_prior`` is an error.
    """
    lo, hi = _prior_offsets(ma_current.start, len(ma_current), ma_prior.start)
    outside = (lo < 0) | (hi >= len(ma_prior))
    if outside.any():
        i = int(np.flatnonzero(outside)[0])
        day = ma_current.start + dt.timedelta(days=i)
        need = [p for p in prior_year_dates(day) if not ma_prior.covers(p)]
        raise IndexConstructionError(f"prior-year series missing {need[0]} needed for {day}")
    prior = ma_prior.values
    den = np.where(lo == hi, prior[lo], (prior[lo] + prior[hi]) / 2.0)
    gap = (den == 0.0) | np.isnan(den)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(gap, np.nan, ma_current.values / np.where(gap, 1.0, den))
    gap_days = [(ma_current.start + dt.timedelta(days=int(i))).isoformat() for i in np.flatnonzero(gap)]
    return DatedSeries(ma_current.start, out, {"gaps": gap_days})


def normalize_baseline(
    ratio: DatedSeries,
    baseline: tuple[dt.date, dt.date] = DEFAULT_BASELINE,
    *,
    window_days: int = 7,
    provenance: Mapping | None = None,
) -> IndexSeries:
    """Divide by the mean ratio over the (inclusive) baseline interval."""
    first, last = baseline
    if last < first:
        raise IndexConstructionError(f"baseline interval reversed: {first}..{last}")
    if not (ratio.covers(first) and ratio.covers(last)):
        raise IndexConstructionError(
            f"baseline {first}..{last} not covered by ratio series {ratio.start}..{ratio.end}"
        )
    base = ratio.window(first, last)
    if np.isnan(base).any():
        missing = first + dt.timedelta(days=int(np.flatnonzero(np.isnan(base))[0]))
        raise IndexConstructionError(f"baseline date {missing} has no ratio value")
    mean = math.fsum(base) / base.shape[0]
    if mean == 0.0:
        raise IndexConstructionError("baseline mean is zero")
    return IndexSeries(
        ratio.start,
        ratio.values / mean,
        dict(ratio.metadata),
        window_days=window_days,
        baseline=(first, last),
        provenance=dict(provenance or {}),
    )


def build_index(
    txns,
    group: LocalityGroup,
    filters: SpendFilter | None = None,
    window: int = 7,
    baseline: tuple[dt.date, dt.date] = DEFAULT_BASELINE,
    span: tuple[dt.date, dt.date] | None = None,
    data_window: tuple[dt.date, dt.date] | None = None,
) -> IndexSeries:
    """Compose aggregation, smoothing, de-seasoning and normalization.

    ``span`` is the interval on which the index is produced (default: the
    baseline start through the last transaction date). Both years are
    aggregated with the same filters. When ``data_window`` is given (default:
    first..last transaction date), any required day outside it is an error
    rather than a silent zero.
    """
    cols = _as_columns(txns)
    if data_window is None:
        if len(cols) == 0:
            raise IndexConstructionError("no transactions")
        data_window = (cols.first_date, cols.last_date)
    if span is None:
        span = (baseline[0], data_window[1])
    first, last = span
    if last < first:
        raise IndexConstructionError(f"span empty: {first}..{last}")
    lag = dt.timedelta(days=window - 1)
    cur_span = (first - lag, last)
    p_lo, p_hi = prior_year_span(first, last)
    prior_span = (p_lo - lag, p_hi)
    for lo, hi in (cur_span, prior_span):
        if lo < data_window[0] or hi > data_window[1]:
            raise IndexConstructionError(
                f"needs data for {lo}..{hi} but transactions cover {data_window[0]}..{data_window[1]}"
            )
    cur = aggregate_daily(cols, group, filters, cur_span)
    prior = aggregate_daily(cols, group, filters, prior_span)
    ratio = yoy_deseason(moving_average(cur, window), moving_average(prior, window))
    provenance = {
        "geography": group.name,
        "category": filters.category if filters else None,
        "channel": filters.channel.value if filters and filters.channel else None,
        "current": [cur.start.isoformat(), cur.end.isoformat()],
        "prior": [prior.start.isoformat(), prior.end.isoformat()],
    }
    return normalize_baseline(ratio, baseline, window_days=window, provenance=provenance)


# ---------------------------------------------------------------------------
# benchmark validation
# ---------------------------------------------------------------------------

def monthly_totals(txns, authorities: Iterable[str] | None = None) -> dict[tuple[int, int], int]:
    """Calendar-month pence totals, keyed by ``(year, month)``."""
    cols = _as_columns(txns)
    keep = np.ones(len(cols), dtype=bool) if authorities is None else _row_mask(cols, authorities, None)
    if not keep.any():
        return {}
    first, last = int(cols.day[keep].min()), int(cols.day[keep].max())
    daily = _kernels.daily_sums(cols.day, cols.amount, keep, first, last - first + 1)
    out: dict[tuple[int, int], int] = {}
    for i, v in enumerate(daily):
        d = day_to_date(first + i)
        out[(d.year, d.month)] = out.get((d.year, d.month), 0) + int(v)
    return out


def yoy_growth(totals: Mapping[tuple[int, int], int]) -> dict[tuple[int, int], float]:
    """Month total over same month a year earlier, minus one."""
    out = {}
    for (y, m), v in sorted(totals.items()):
        prev = totals.get((y - 1, m))
        if prev:
            out[(y, m)] = v / prev - 1.0
    return out


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation via centred sums."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.shape[0] < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(math.fsum(dx * dx) * math.fsum(dy * dy))
    if den == 0.0:
        raise ValueError("correlation undefined for a constant series")
    return math.fsum(dx * dy) / den


def parse_month(text: str) -> tuple[int, int]:
    y, m = text.strip()[:7].split("-")
    return int(y), int(m)


def format_month(key: tuple[int, int]) -> str:
    return f"{key[0]:04d}-{key[1]:02d}"


@dataclass
class CorrelationReport:
    windows: list[dict]
    own_growth: dict[tuple[int, int], float]

    def to_json(self) -> dict:
        return {
            "windows": self.windows,
            "own_yoy_growth": {format_month(k): v for k, v in sorted(self.own_growth.items())},
        }


def validate_against_benchmark(
    txns,
    benchmark_monthly: Mapping[tuple[int, int], float],
    windows: Sequence[tuple[tuple[int, int], tuple[int, int]]] | None = None,
    *,
    own_growth: Mapping[tuple[int, int], float] | None = None,
) -> CorrelationReport:
    """Correlate the monthly year-on-year growth of spending with a benchmark.

    ``windows`` is a list of inclusive ``(first_month, last_month)`` pairs;
    by default the whole overlap is used. Each window must contain at least
    three months present in both series. ``own_growth`` bypasses the
    transaction roll-up (useful when the own series is already monthly).
    """
    growth = dict(own_growth) if own_growth is not None else yoy_growth(monthly_totals(txns))
    overlap = sorted(set(growth) & set(benchmark_monthly))
    if len(overlap) < 3:
        raise ValueError(f"need at least 3 overlapping months, found {len(overlap)}")
    if windows is None:
        windows = [(overlap[0], overlap[-1])]
    rows = []
    for lo, hi in windows:
        months = [m for m in overlap if lo <= m <= hi]
        if len(months) < 3:
            raise ValueError(
                f"window {format_month(lo)}..{format_month(hi)}: need at least 3 overlapping months, found {len(months)}"
            )
        r = pearson([growth[m] for m in months], [benchmark_monthly[m] for m in months])
        rows.append({"start": format_month(lo), "end": format_month(hi), "n_months": len(months), "pearson": r})
    return CorrelationReport(rows, growth)


"""Smoothed COVID-19 case rates per 100,000 residents for locality groups."""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .index import DailySeries, moving_average
from .ingest import CaseRecord, InputError, LocalityGroup
from .series import DatedSeries

log = logging.getLogger(__name__)

PER = 100_000


class MissingCaseData(InputError):
    """An authority-date required by a group's case series is absent."""


@dataclass(frozen=True)
class CaseRateSeries(DatedSeries):
    group: str = ""
    window_days: int = 7


def group_daily_cases(
    cases: Iterable[CaseRecord],
    group: LocalityGroup,
    span: tuple[dt.date, dt.date] | None = None,
    strict: bool = True,
) -> DailySeries:
    """Pooled daily new cases over the group's member authorities.

    The span defaults to the first..last date observed for any member. In
    strict mode every member must report every day of the span; otherwise
    missing authority-days count as zero and a warning is logged.
    """
    members = group.authorities
    by_key: dict[tuple[str, dt.date], int] = {}
    for c in cases:
        if c.authority in members:
            by_key[(c.authority, c.date)] = by_key.get((c.authority, c.date), 0) + c.new_cases
    if span is None:
        if not by_key:
            raise MissingCaseData(f"group {group.name!r}: no case records for any member authority")
        days = [d for _, d in by_key]
        span = (min(days), max(days))
    start, end = span
    n = (end - start).days + 1
    if n <= 0:
        raise ValueError(f"span empty: {start}..{end}")
    totals = np.zeros(n, dtype=np.int64)
    missing = []
    for auth in sorted(members):
        for i in range(n):
            day = start + dt.timedelta(days=i)
            v = by_key.get((auth, day))
            if v is None:
                missing.append((auth, day))
            else:
                totals[i] += v
    if missing:
        auth, day = missing[0]
        msg = f"group {group.name!r}: {len(missing)} missing authority-days, first {auth} on {day.isoformat()}"
        if strict:
            raise MissingCaseData(msg)
        log.warning("%s (treated as zero)", msg)
    return DailySeries(group.name, start, totals)


def case_rate(
    cases: Iterable[CaseRecord],
    group: LocalityGroup,
    window: int = 7,
    span: tuple[dt.date, dt.date] | None = None,
    strict: bool = True,
) -> CaseRateSeries:
    """K-day trailing mean of pooled daily cases per 100,000 residents.

    Pools cases and population across the group's authorities (rather than
    averaging authority rates). The output begins ``window - 1`` days after
    the span start.
    """
    if group.population_2019 <= 0:
        raise ValueError("population must be positive")
    daily = group_daily_cases(cases, group, span, strict)
    ma = moving_average(daily, window, allowed=None)
    rate = ma.values * PER / group.population_2019
    return CaseRateSeries(
        ma.start,
        rate,
        {"geography": group.name, "window_days": window, "population_2019": group.population_2019},
        group=group.name,
        window_days=window,
    )

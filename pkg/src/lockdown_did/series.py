"""Contiguous daily series shared by the index, case-rate and estimator code."""
from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

ONE_DAY = dt.timedelta(days=1)


def date_range(start: dt.date, end: dt.date) -> list[dt.date]:
    """Inclusive list of dates from ``start`` to ``end``."""
    n = (end - start).days + 1
    return [start + dt.timedelta(days=i) for i in range(max(n, 0))]


def parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip())


@dataclass(frozen=True)
class DatedSeries:
    """A real-valued series on consecutive days beginning at ``start``.

    ``NaN`` marks a gap (an undefined value), which is distinct from zero.
    """

    start: dt.date
    values: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self) - 1)

    @property
    def dates(self) -> list[dt.date]:
        return date_range(self.start, self.end)

    @property
    def gaps(self) -> np.ndarray:
        return np.isnan(self.values)

    def covers(self, day: dt.date) -> bool:
        return self.start <= day <= self.end

    def offset(self, day: dt.date) -> int:
        return (day - self.start).days

    def get(self, day: dt.date) -> float:
        """Value on ``day``; ``KeyError`` when ``day`` lies outside the series."""
        if not self.covers(day):
            raise KeyError(day)
        return float(self.values[self.offset(day)])

    def window(self, first: dt.date, last: dt.date) -> np.ndarray:
        if not (self.covers(first) and self.covers(last)):
            raise KeyError(f"{first}..{last} not inside {self.start}..{self.end}")
        return self.values[self.offset(first) : self.offset(last) + 1]

    def items(self) -> Iterator[tuple[dt.date, float]]:
        for i, v in enumerate(self.values):
            yield self.start + dt.timedelta(days=i), float(v)

    def to_dict(self) -> dict[dt.date, float]:
        return dict(self.items())


def write_series_csv(
    series: DatedSeries,
    path: str | Path,
    value_name: str = "value",
    with_flag: bool = True,
    metadata: dict[str, Any] | None = None,
) -> None:
    """Write ``date,<value_name>[,flag]`` rows plus an optional JSON sidecar.

    Values are written with ``repr`` precision so that re-reading is exact.
    Gaps are written as an empty value with flag ``gap``.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", value_name, "flag"] if with_flag else ["date", value_name])
        for day, v in series.items():
            gap = np.isnan(v)
            row = [day.isoformat(), "" if gap else repr(v)]
            if with_flag:
                row.append("gap" if gap else "ok")
            w.writerow(row)
    if metadata is not None:
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_series_csv(path: str | Path) -> DatedSeries:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not body:
        raise ValueError(f"{path}: no rows")
    start = parse_date(body[0][0])
    vals = []
    for i, row in enumerate(body):
        if parse_date(row[0]) != start + dt.timedelta(days=i):
            raise ValueError(f"{path}: dates not contiguous at row {i + 1}")
        vals.append(float(row[1]) if row[1] else np.nan)
    return DatedSeries(start, np.array(vals), {"columns": header})

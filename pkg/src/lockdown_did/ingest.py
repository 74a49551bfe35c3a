"""Parsing, validation and filtering of the input datasets.

Five UTF-8 CSV inputs are understood (header row required)::

    transactions.csv  account_id,date,amount_pence,currency,card_type,channel,
                      category,cardholder_sector,merchant_authority
    cases.csv         authority,date,new_cases
    lockdowns.csv     name,announcement_date,category,treated_authorities,
                      control_authorities          (authority lists ';'-separated)
    population.csv    authority,region,population_2019
    geo_lookup.csv    sector,authority

Malformed rows are collected in a row-indexed error report (1-based data row
numbers, header excluded) unless strict mode is on, in which case the first
bad row raises :class:`RowError`.
"""
from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Sequence, Union

import numpy as np

Source = Union[str, bytes, os.PathLike, IO]

TRANSACTION_COLUMNS = (
    "account_id",
    "date",
    "amount_pence",
    "currency",
    "card_type",
    "channel",
    "category",
    "cardholder_sector",
    "merchant_authority",
)
CASE_COLUMNS = ("authority", "date", "new_cases")
LOCKDOWN_COLUMNS = ("name", "announcement_date", "category", "treated_authorities", "control_authorities")
POPULATION_COLUMNS = ("authority", "region", "population_2019")
GEO_COLUMNS = ("sector", "authority")

# £50,000.00: kept at the cap, dropped strictly above it
AMOUNT_CAP_PENCE = 5_000_000

_SECTOR_RE = re.compile(r"^[A-Z]{1,2}[0-9][A-Z0-9]? [0-9]$")
_EPOCH = dt.date(1970, 1, 1)


class InputError(Exception):
    """Base class for problems with user-supplied input files."""


class SchemaError(InputError):
    """Header is missing required columns."""


class RowError(InputError):
    """A data row could not be parsed (raised only in strict mode)."""

    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class CardType(str, enum.Enum):
    CONSUMER_CREDIT = "consumer_credit"
    OTHER = "other"


class Channel(str, enum.Enum):
    ONLINE = "online"
    OFFLINE = "offline"


class WatchlistCategory(str, enum.Enum):
    CONCERN = "concern"
    ENHANCED_SUPPORT = "enhanced_support"
    INTERVENTION = "intervention"


class GeoBasis(str, enum.Enum):
    CARDHOLDER = "cardholder"
    MERCHANT = "merchant"


class Role(str, enum.Enum):
    TREATMENT = "treatment"
    CONTROL = "control"


def normalize_sector(raw: str) -> str:
    """Canonical postcode sector: uppercase, single inner space.

    >>> normalize_sector(" m1   4 ")
    'M1 4'
    >>> normalize_sector("sw1a1")
    'SW1A 1'
    """
    s = "".join(raw.split()).upper()
    if len(s) >= 2:
        s = s[:-1] + " " + s[-1]
    return s


def is_valid_sector(sector: str) -> bool:
    return bool(_SECTOR_RE.match(sector))


def date_to_day(d: dt.date) -> int:
    return (d - _EPOCH).days


def day_to_date(day: int) -> dt.date:
    return _EPOCH + dt.timedelta(days=int(day))


@dataclass(frozen=True, slots=True)
class Transaction:
    account_id: str
    timestamp: dt.date
    amount: int
    currency: str
    card_type: CardType
    channel: Channel
    category: str
    cardholder_sector: str
    merchant_authority: str | None = None

    def __post_init__(self):
        if self.amount <= 0:
            raise ValueError("non-positive amount")


@dataclass(frozen=True, slots=True)
class CaseRecord:
    authority: str
    date: dt.date
    new_cases: int


@dataclass(frozen=True)
class LockdownEvent:
    name: str
    announcement_date: dt.date
    treated_authorities: tuple[str, ...]
    control_authorities: tuple[str, ...] = ()
    watchlist_category: WatchlistCategory = WatchlistCategory.INTERVENTION

    def __post_init__(self):
        overlap = set(self.treated_authorities) & set(self.control_authorities)
        if overlap:
            raise ValueError(f"event {self.name!r}: authorities both treated and control: {sorted(overlap)}")
        if not self.treated_authorities:
            raise ValueError(f"event {self.name!r}: no treated authorities")


@dataclass(frozen=True)
class LocalityGroup:
    name: str
    authorities: frozenset[str]
    population_2019: int
    role: Role

    def __post_init__(self):
        if not self.authorities:
            raise ValueError(f"group {self.name!r} has no authorities")
        if self.population_2019 <= 0:
            raise ValueError(f"group {self.name!r} has non-positive population")


@dataclass(frozen=True)
class PopulationTable:
    population: dict[str, int]
    region: dict[str, str]

    def __contains__(self, authority: str) -> bool:
        return authority in self.population

    def group(self, name: str, authorities: Iterable[str], role: Role) -> LocalityGroup:
        members = frozenset(authorities)
        missing = sorted(a for a in members if a not in self.population)
        if missing:
            raise InputError(f"group {name!r}: authorities missing from population table: {missing}")
        return LocalityGroup(name, members, sum(self.population[a] for a in members), role)


@dataclass(frozen=True)
class GeoLookup:
    sector_to_authority: dict[str, str]
    authority_to_region: dict[str, str] = field(default_factory=dict)
    authority_to_urbanclass: dict[str, str] | None = None


@dataclass
class ParseResult:
    """Parsed records in input order plus the row-indexed error report."""

    records: list
    errors: list[dict] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def error_report(self) -> str:
        """JSON-lines rendering of the error report."""
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.errors)


@dataclass(frozen=True)
class SchemaConfig:
    strict: bool = False
    data_window: tuple[dt.date, dt.date] | None = None


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------

def _open_text(source: Source) -> IO[str]:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _reader(source: Source, required: Sequence[str]):
    fh = _open_text(source)
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty file: header row required") from None
    header = [h.strip().lstrip("﻿") for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    return fh, reader, [header.index(c) for c in required]


def _record_error(result: ParseResult, row: int, reason: str, strict: bool) -> None:
    if strict:
        raise RowError(row, reason)
    result.errors.append({"row": row, "reason": reason})


# ---------------------------------------------------------------------------
# transactions
# ---------------------------------------------------------------------------

_CARD_TYPES = {c.value: c for c in CardType}
_CHANNELS = {c.value: c for c in Channel}


def parse_transactions(source: Source, config: SchemaConfig | None = None, row_offset: int = 0) -> ParseResult:
    """Parse ``transactions.csv`` into :class:`Transaction` records.

    ``row_offset`` shifts the row numbers in the error report, which is how
    shards of one file keep globally meaningful row indices.
    """
    config = config or SchemaConfig()
    fh, reader, idx = _reader(source, TRANSACTION_COLUMNS)
    i_acc, i_date, i_amt, i_cur, i_card, i_chan, i_cat, i_sec, i_merch = idx
    width = max(idx) + 1
    window = config.data_window
    result = ParseResult([])
    out = result.records
    try:
        for n, row in enumerate(reader, start=1 + row_offset):
            if not row:
                continue
            if len(row) < width:
                _record_error(result, n, "too few fields", config.strict)
                continue
            try:
                day = dt.date.fromisoformat(row[i_date])
            except ValueError:
                _record_error(result, n, "bad date", config.strict)
                continue
            try:
                amount = int(row[i_amt])
            except ValueError:
                _record_error(result, n, "bad amount", config.strict)
                continue
            if amount <= 0:
                _record_error(result, n, "non-positive amount", config.strict)
                continue
            card = _CARD_TYPES.get(row[i_card])
            if card is None:
                _record_error(result, n, "bad card_type", config.strict)
                continue
            chan = _CHANNELS.get(row[i_chan])
            if chan is None:
                _record_error(result, n, "bad channel", config.strict)
                continue
            sector = normalize_sector(row[i_sec])
            if not _SECTOR_RE.match(sector):
                _record_error(result, n, "bad cardholder_sector", config.strict)
                continue
            if window is not None and not (window[0] <= day <= window[1]):
                _record_error(result, n, "date outside data window", config.strict)
                continue
            currency = row[i_cur].strip().upper()
            if not currency:
                _record_error(result, n, "missing currency", config.strict)
                continue
            merch = row[i_merch].strip() or None
            out.append(
                Transaction(row[i_acc], day, amount, currency, card, chan, row[i_cat].strip(), sector, merch)
            )
    finally:
        if fh is not source:
            fh.close()
    return result


def serialize_transactions(txns: Iterable[Transaction]) -> str:
    """Render transactions in the ``transactions.csv`` schema."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRANSACTION_COLUMNS)
    for t in txns:
        w.writerow(
            [
                t.account_id,
                t.timestamp.isoformat(),
                t.amount,
                t.currency,
                t.card_type.value,
                t.channel.value,
                t.category,
                t.cardholder_sector,
                t.merchant_authority or "",
            ]
        )
    return buf.getvalue()


def split_shards(text: str, n_shards: int) -> list[tuple[str, int]]:
    """Split CSV text into ``n_shards`` contiguous shards, each with the header.

    Returns ``(shard_text, row_offset)`` pairs. Splitting is on line
    boundaries, so quoted fields must not contain newlines.
    """
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    header, _, body = text.partition("\n")
    lines = body.splitlines(keepends=True)
    size = -(-len(lines) // n_shards) if lines else 0
    shards = []
    for k in range(n_shards):
        chunk = lines[k * size : (k + 1) * size] if size else []
        shards.append((header + "\n" + "".join(chunk), k * size))
    return shards


def merge_parse_results(parts: Sequence[ParseResult]) -> ParseResult:
    """Concatenate shard results in shard order (stable by input order)."""
    merged = ParseResult([])
    for p in parts:
        merged.records.extend(p.records)
        merged.errors.extend(p.errors)
    return merged


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterRules:
    currency: str = "GBP"
    card_type: CardType = CardType.CONSUMER_CREDIT
    max_amount: int = AMOUNT_CAP_PENCE


@dataclass
class FilterResult:
    kept: list[Transaction]
    drops: Counter

    def __iter__(self):
        return iter(self.kept)

    def __len__(self) -> int:
        return len(self.kept)


def drop_reason(t: Transaction, rules: FilterRules) -> str | None:
    if t.currency != rules.currency:
        return "currency"
    if t.card_type is not rules.card_type:
        return "card_type"
    if t.amount > rules.max_amount:
        return "over_cap"
    return None


def filter_transactions(txns: Iterable[Transaction], rules: FilterRules | None = None) -> FilterResult:
    """Keep GBP consumer-credit transactions at or below the amount cap.

    Drops are counted by the first failing reason: ``currency``,
    ``card_type``, ``over_cap``.
    """
    rules = rules or FilterRules()
    kept, drops = [], Counter()
    for t in txns:
        reason = drop_reason(t, rules)
        if reason is None:
            kept.append(t)
        else:
            drops[reason] += 1
    return FilterResult(kept, drops)


# ---------------------------------------------------------------------------
# geography
# ---------------------------------------------------------------------------

@dataclass
class TransactionColumns:
    """Columnar view of geo-tagged transactions used by the aggregation kernels.

    ``day`` counts days since 1970-01-01; ``authority``, ``category`` are codes
    into the accompanying vocabularies; ``channel`` is 1 for offline.
    """

    day: np.ndarray
    amount: np.ndarray
    authority: np.ndarray
    authorities: tuple[str, ...]
    category: np.ndarray
    categories: tuple[str, ...]
    channel: np.ndarray

    def __len__(self) -> int:
        return self.day.shape[0]

    def take(self, index) -> "TransactionColumns":
        return TransactionColumns(
            self.day[index],
            self.amount[index],
            self.authority[index],
            self.authorities,
            self.category[index],
            self.categories,
            self.channel[index],
        )

    def shards(self, n_shards: int) -> list["TransactionColumns"]:
        bounds = np.linspace(0, len(self), n_shards + 1).astype(np.int64)
        return [self.take(slice(bounds[k], bounds[k + 1])) for k in range(n_shards)]

    @property
    def first_date(self) -> dt.date:
        return day_to_date(int(self.day.min()))

    @property
    def last_date(self) -> dt.date:
        return day_to_date(int(self.day.max()))

    @classmethod
    def from_pairs(cls, txns: Sequence[Transaction], authorities: Sequence[str]) -> "TransactionColumns":
        auth_vocab = tuple(sorted(set(authorities)))
        auth_code = {a: i for i, a in enumerate(auth_vocab)}
        cat_vocab = tuple(sorted({t.category for t in txns}))
        cat_code = {c: i for i, c in enumerate(cat_vocab)}
        n = len(txns)
        return cls(
            day=np.fromiter((date_to_day(t.timestamp) for t in txns), dtype=np.int64, count=n),
            amount=np.fromiter((t.amount for t in txns), dtype=np.int64, count=n),
            authority=np.fromiter((auth_code[a] for a in authorities), dtype=np.int32, count=n),
            authorities=auth_vocab,
            category=np.fromiter((cat_code[t.category] for t in txns), dtype=np.int32, count=n),
            categories=cat_vocab,
            channel=np.fromiter((t.channel is Channel.OFFLINE for t in txns), dtype=np.int8, count=n),
        )


@dataclass
class GeoTagged:
    """Transactions paired with their resolved authority, plus exclusions."""

    transactions: list[Transaction]
    authorities: list[str]
    excluded: list[dict]

    def __iter__(self):
        return zip(self.transactions, self.authorities)

    def __len__(self) -> int:
        return len(self.transactions)

    @cached_property
    def columns(self) -> TransactionColumns:
        return TransactionColumns.from_pairs(self.transactions, self.authorities)


def resolve_geography(
    txns: Sequence[Transaction], lookup: GeoLookup, basis: GeoBasis | str = GeoBasis.CARDHOLDER
) -> GeoTagged:
    """Tag each transaction with an authority under the chosen basis.

    Exclusions carry the 1-based position in ``txns`` and a reason
    (``unmapped_sector`` or ``missing_merchant_authority``).
    """
    basis = GeoBasis(basis)
    table = lookup.sector_to_authority
    kept, auths, excluded = [], [], []
    for i, t in enumerate(txns, start=1):
        if basis is GeoBasis.MERCHANT:
            auth = t.merchant_authority
            if not auth:
                excluded.append({"row": i, "reason": "missing_merchant_authority"})
                continue
        else:
            auth = table.get(t.cardholder_sector)
            if auth is None:
                excluded.append({"row": i, "reason": "unmapped_sector"})
                continue
        kept.append(t)
        auths.append(auth)
    return GeoTagged(kept, auths, excluded)


# ---------------------------------------------------------------------------
# the smaller tables
# ---------------------------------------------------------------------------

def parse_cases(source: Source, config: SchemaConfig | None = None) -> ParseResult:
    config = config or SchemaConfig()
    fh, reader, (i_auth, i_date, i_new) = _reader(source, CASE_COLUMNS)
    result = ParseResult([])
    try:
        for n, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                day = dt.date.fromisoformat(row[i_date].strip())
                new = int(row[i_new])
            except (ValueError, IndexError):
                _record_error(result, n, "unparseable row", config.strict)
                continue
            if new < 0:
                _record_error(result, n, "negative new_cases", config.strict)
                continue
            result.records.append(CaseRecord(row[i_auth].strip(), day, new))
    finally:
        if fh is not source:
            fh.close()
    return result


def _split_authorities(cell: str) -> tuple[str, ...]:
    return tuple(a.strip() for a in cell.split(";") if a.strip())


def parse_lockdowns(source: Source, config: SchemaConfig | None = None) -> ParseResult:
    config = config or SchemaConfig()
    fh, reader, (i_name, i_date, i_cat, i_treat, i_ctrl) = _reader(source, LOCKDOWN_COLUMNS)
    result = ParseResult([])
    try:
        for n, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                event = LockdownEvent(
                    name=row[i_name].strip(),
                    announcement_date=dt.date.fromisoformat(row[i_date].strip()),
                    treated_authorities=_split_authorities(row[i_treat]),
                    control_authorities=_split_authorities(row[i_ctrl]),
                    watchlist_category=WatchlistCategory(row[i_cat].strip()),
                )
            except (ValueError, IndexError) as exc:
                _record_error(result, n, str(exc), config.strict)
                continue
            result.records.append(event)
    finally:
        if fh is not source:
            fh.close()
    return result


def parse_population(source: Source, config: SchemaConfig | None = None) -> PopulationTable:
    """Parse ``population.csv``; malformed or duplicate rows are always fatal."""
    fh, reader, (i_auth, i_region, i_pop) = _reader(source, POPULATION_COLUMNS)
    population, region = {}, {}
    try:
        for n, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                auth, pop = row[i_auth].strip(), int(row[i_pop])
            except (ValueError, IndexError):
                raise RowError(n, "unparseable row") from None
            if pop <= 0:
                raise RowError(n, "non-positive population")
            if auth in population:
                raise RowError(n, f"duplicate authority {auth!r}")
            population[auth] = pop
            region[auth] = row[i_region].strip()
    finally:
        if fh is not source:
            fh.close()
    return PopulationTable(population, region)


def parse_geo_lookup(source: Source, population: PopulationTable | None = None) -> GeoLookup:
    """Parse ``geo_lookup.csv``; a sector mapped to two authorities is fatal."""
    fh, reader, (i_sec, i_auth) = _reader(source, GEO_COLUMNS)
    table: dict[str, str] = {}
    try:
        for n, row in enumerate(reader, start=1):
            if not row:
                continue
            sector = normalize_sector(row[i_sec])
            if not _SECTOR_RE.match(sector):
                raise RowError(n, f"bad sector {row[i_sec]!r}")
            auth = row[i_auth].strip()
            if table.get(sector, auth) != auth:
                raise RowError(n, f"sector {sector!r} maps to more than one authority")
            table[sector] = auth
    finally:
        if fh is not source:
            fh.close()
    regions = dict(population.region) if population is not None else {}
    return GeoLookup(table, regions)


# ---------------------------------------------------------------------------
# locality groups
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventPair:
    event: LockdownEvent
    treatment: LocalityGroup
    control: LocalityGroup

    @property
    def name(self) -> str:
        return self.event.name


@dataclass
class LocalityPlan:
    pairs: list[EventPair]
    skipped: list[dict]


def build_locality_groups(schedule: Iterable[LockdownEvent], population: PopulationTable) -> LocalityPlan:
    """Pair each intervention event's treated and control authorities into groups.

    Authorities named in a single event are pooled into one group (the
    schedule, not this function, decides which localities share an event).
    Events with no control area, and non-intervention watchlist entries, go
    to the skip list. Any authority absent from the population table is fatal.
    """
    pairs, skipped = [], []
    for ev in schedule:
        for a in (*ev.treated_authorities, *ev.control_authorities):
            if a not in population:
                raise InputError(f"event {ev.name!r}: authority {a!r} missing from population table")
        if ev.watchlist_category is not WatchlistCategory.INTERVENTION:
            skipped.append({"event": ev.name, "reason": f"watchlist category {ev.watchlist_category.value}"})
            continue
        if not ev.control_authorities:
            skipped.append({"event": ev.name, "reason": "no control area"})
            continue
        treat = population.group(ev.name, ev.treated_authorities, Role.TREATMENT)
        ctrl = population.group(f"{ev.name} (control)", ev.control_authorities, Role.CONTROL)
        pairs.append(EventPair(ev, treat, ctrl))
    return LocalityPlan(pairs, skipped)

"""Dataset loading and per-event orchestration shared by the CLI and tests."""
from __future__ import annotations

import datetime as dt
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from .epi import case_rate
from .estimator import DiDResult, PanelUnit, build_unit_panel, run_did
from .index import DEFAULT_BASELINE, SpendFilter, build_index
from .ingest import (
    CaseRecord,
    Channel,
    EventPair,
    GeoBasis,
    InputError,
    LocalityPlan,
    LockdownEvent,
    PopulationTable,
    Role,
    SchemaConfig,
    TransactionColumns,
    build_locality_groups,
    filter_transactions,
    merge_parse_results,
    parse_cases,
    parse_geo_lookup,
    parse_lockdowns,
    parse_population,
    parse_transactions,
    resolve_geography,
    split_shards,
)

log = logging.getLogger(__name__)

SPEND_INDEX = "spend_index"
CASE_RATE = "case_rate"
OUTCOMES = (SPEND_INDEX, CASE_RATE)
CLUSTER_KEYS = ("group", "authority")


@dataclass(frozen=True)
class RunOptions:
    window: int = 7
    baseline: tuple[dt.date, dt.date] = DEFAULT_BASELINE
    pre_weeks: int = 4
    post_weeks: int = 4
    cr: str = "cr1"
    cluster_key: str = "group"
    strict: bool = False
    case_zero_fill: bool = False
    spend_filter: SpendFilter = field(default_factory=lambda: SpendFilter(channel=Channel.OFFLINE))

    def fingerprint(self) -> dict:
        return {
            "window_days": self.window,
            "baseline": f"{self.baseline[0].isoformat()}..{self.baseline[1].isoformat()}",
            "pre_weeks": self.pre_weeks,
            "post_weeks": self.post_weeks,
            "cr_variant": self.cr,
            "cluster_key": self.cluster_key,
            "spend_filter": self.spend_filter.label,
            "reference_distribution": "normal",
        }


@dataclass
class Dataset:
    transactions: TransactionColumns
    cases: list[CaseRecord]
    lockdowns: list[LockdownEvent]
    population: PopulationTable
    reports: dict = field(default_factory=dict)

    def plan(self) -> LocalityPlan:
        return build_locality_groups(self.lockdowns, self.population)


@dataclass(frozen=True)
class InputPaths:
    transactions: Path
    cases: Path
    lockdowns: Path
    population: Path
    geo_lookup: Path

    @classmethod
    def in_dir(cls, directory: str | Path) -> "InputPaths":
        d = Path(directory)
        return cls(*(d / f"{n}.csv" for n in ("transactions", "cases", "lockdowns", "population", "geo_lookup")))

    def check(self) -> None:
        for p in (self.transactions, self.cases, self.lockdowns, self.population, self.geo_lookup):
            if not Path(p).is_file():
                raise FileNotFoundError(f"input file not found: {p}")


def read_transactions(path: Path, config: SchemaConfig, n_shards: int = 1):
    if n_shards <= 1:
        return parse_transactions(path, config)
    text = Path(path).read_text(encoding="utf-8")
    return merge_parse_results(
        [parse_transactions(shard.encode("utf-8"), config, offset) for shard, offset in split_shards(text, n_shards)]
    )


def load_dataset(
    paths: InputPaths,
    *,
    strict: bool = False,
    basis: GeoBasis = GeoBasis.CARDHOLDER,
    n_shards: int = 1,
) -> Dataset:
    """Parse, filter and geo-tag every input file."""
    paths.check()
    config = SchemaConfig(strict=strict)
    population = parse_population(paths.population)
    lookup = parse_geo_lookup(paths.geo_lookup, population)
    parsed = read_transactions(paths.transactions, config, n_shards)
    filtered = filter_transactions(parsed.records)
    tagged = resolve_geography(filtered.kept, lookup, basis)
    cases = parse_cases(paths.cases, config)
    lockdowns = parse_lockdowns(paths.lockdowns, config)
    reports = {
        "transaction_errors": parsed.errors,
        "filter_drops": dict(sorted(filtered.drops.items())),
        "geography_exclusions": dict(sorted(Counter(e["reason"] for e in tagged.excluded).items())),
        "case_errors": cases.errors,
        "lockdown_errors": lockdowns.errors,
        "n_transactions": len(tagged),
    }
    if len(tagged) == 0:
        raise InputError(f"{paths.transactions}: no usable transactions after filtering")
    return Dataset(tagged.columns, cases.records, lockdowns.records, population, reports)


def dataset_from_scenario(scenario) -> Dataset:
    return Dataset(scenario.transactions, scenario.cases, scenario.lockdowns, scenario.population)


def _index_span(data: Dataset, options: RunOptions) -> tuple[dt.date, dt.date]:
    return options.baseline[0], data.transactions.last_date


def outcome_series(data: Dataset, group, outcome: str, options: RunOptions):
    if outcome == SPEND_INDEX:
        return build_index(
            data.transactions, group, options.spend_filter, options.window, options.baseline, _index_span(data, options)
        )
    if outcome == CASE_RATE:
        return case_rate(data.cases, group, options.window, strict=not options.case_zero_fill)
    raise ValueError(f"outcome must be one of {OUTCOMES}")


def outcome_units(data: Dataset, pair: EventPair, outcome: str, options: RunOptions) -> list[PanelUnit]:
    """Panel units for one event: two groups, or one unit per member authority."""
    if options.cluster_key == "group":
        return [
            PanelUnit(g.name, g.role is Role.TREATMENT, outcome_series(data, g, outcome, options), g.population_2019, g.name)
            for g in (pair.treatment, pair.control)
        ]
    if options.cluster_key != "authority":
        raise ValueError(f"cluster_key must be one of {CLUSTER_KEYS}")
    units = []
    for g in (pair.treatment, pair.control):
        for auth in sorted(g.authorities):
            single = data.population.group(auth, [auth], g.role)
            series = outcome_series(data, single, outcome, options)
            units.append(PanelUnit(auth, g.role is Role.TREATMENT, series, single.population_2019, auth))
    return units


def estimate_pair(data: Dataset, pair: EventPair, outcome: str, spec: str, options: RunOptions) -> DiDResult:
    units = outcome_units(data, pair, outcome, options)
    panel = build_unit_panel(units, pair.event.announcement_date, options.pre_weeks, options.post_weeks)
    return run_did(panel, spec, cr=options.cr, event=pair.name, outcome=outcome, cluster_key=options.cluster_key)


def estimate_all(data: Dataset, outcome: str, spec: str, options: RunOptions) -> tuple[list[DiDResult], list[dict]]:
    plan = data.plan()
    return [estimate_pair(data, p, outcome, spec, options) for p in plan.pairs], plan.skipped


def with_options(options: RunOptions, **changes) -> RunOptions:
    return replace(options, **{k: v for k, v in changes.items() if v is not None})

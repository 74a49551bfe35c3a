"""Spending indices, case rates and difference-in-difference event studies
around local lockdown announcements."""

__version__ = "0.1.0"

from ._kernels import backend
from .epi import CaseRateSeries, case_rate
from .estimator import (
    DiDResult,
    Panel,
    build_panel,
    build_unit_panel,
    cluster_cov,
    design_dynamic,
    design_static,
    run_did,
    wls_fit,
)
from .index import (
    IndexSeries,
    SpendFilter,
    aggregate_daily,
    build_index,
    moving_average,
    normalize_baseline,
    validate_against_benchmark,
    yoy_deseason,
)
from .ingest import (
    FilterRules,
    GeoLookup,
    LocalityGroup,
    LockdownEvent,
    Transaction,
    build_locality_groups,
    filter_transactions,
    parse_transactions,
    resolve_geography,
)
from .synth import ScenarioConfig, gen_scenario, oracle_ols, oracle_sandwich

__all__ = [
    "CaseRateSeries",
    "DiDResult",
    "FilterRules",
    "GeoLookup",
    "IndexSeries",
    "LocalityGroup",
    "LockdownEvent",
    "Panel",
    "ScenarioConfig",
    "SpendFilter",
    "Transaction",
    "aggregate_daily",
    "backend",
    "build_index",
    "build_locality_groups",
    "build_panel",
    "build_unit_panel",
    "case_rate",
    "cluster_cov",
    "design_dynamic",
    "design_static",
    "filter_transactions",
    "gen_scenario",
    "moving_average",
    "normalize_baseline",
    "oracle_ols",
    "oracle_sandwich",
    "parse_transactions",
    "resolve_geography",
    "run_did",
    "validate_against_benchmark",
    "wls_fit",
    "yoy_deseason",
]

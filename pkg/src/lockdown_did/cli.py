"""Command-line interface.

Subcommands: ``index``, ``cases``, ``did``, ``validate``, ``synth``.

Options come from (highest precedence first) command-line flags, a JSON
config file given with ``--config``, and built-in defaults. Exit codes:
0 success, 1 estimation/validation failure, 2 input error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .epi import case_rate
from .estimator import DYNAMIC, STATIC, EstimationError, format_long, format_table
from .index import DEFAULT_BASELINE, WINDOWS, IndexConstructionError, SpendFilter, build_index, parse_month, validate_against_benchmark
from .ingest import Channel, InputError
from .pipeline import OUTCOMES, InputPaths, RunOptions, estimate_pair, load_dataset, outcome_units
from .series import write_series_csv
from .synth import ScenarioConfig, gen_scenario, write_scenario

log = logging.getLogger("lockdown_did")

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2
INPUT_KEYS = ("transactions", "cases", "lockdowns", "population", "geo_lookup")


@dataclass
class RunConfig:
    """Resolved configuration for one CLI invocation."""

    inputs: dict[str, Path | None] = field(default_factory=lambda: dict.fromkeys(INPUT_KEYS))
    benchmark: Path | None = None
    out: Path = Path("out")
    window: int = 7
    index_windows: list[int] = field(default_factory=list)
    baseline: tuple[dt.date, dt.date] = DEFAULT_BASELINE
    pre_weeks: int = 4
    post_weeks: int = 4
    outcomes: list[str] = field(default_factory=lambda: list(OUTCOMES))
    specs: list[str] = field(default_factory=lambda: [DYNAMIC])
    cr: str = "cr1"
    cluster_key: str = "group"
    strict: bool = False
    case_zero_fill: bool = False
    shards: int = 1
    index_filters: list[SpendFilter] = field(
        default_factory=lambda: [SpendFilter(name="all"), SpendFilter(channel=Channel.OFFLINE, name="offline")]
    )
    validate_windows: list[tuple[tuple[int, int], tuple[int, int]]] | None = None
    digits: int = 3
    scenario: dict = field(default_factory=dict)
    seed: int | None = None

    def options(self) -> RunOptions:
        return RunOptions(
            window=self.window,
            baseline=self.baseline,
            pre_weeks=self.pre_weeks,
            post_weeks=self.post_weeks,
            cr=self.cr,
            cluster_key=self.cluster_key,
            strict=self.strict,
            case_zero_fill=self.case_zero_fill,
        )

    def input_paths(self) -> InputPaths:
        missing = [k for k in INPUT_KEYS if self.inputs.get(k) is None]
        if missing:
            raise InputError(f"no path configured for: {', '.join(missing)} (use --data-dir or --{missing[0].replace('_', '-')})")
        return InputPaths(*(Path(self.inputs[k]) for k in INPUT_KEYS))


def _filter_from_json(item: dict) -> SpendFilter:
    chan = item.get("channel")
    return SpendFilter(item.get("category"), Channel(chan) if chan else None, item.get("name", ""))


def _month_window(text: str):
    lo, _, hi = text.partition(":")
    if not hi:
        raise ValueError(f"window {text!r} must look like YYYY-MM:YYYY-MM")
    return parse_month(lo), parse_month(hi)


def apply_file(cfg: RunConfig, data: dict, base: Path) -> None:
    def path(v):
        p = Path(v)
        return p if p.is_absolute() else base / p

    if "data_dir" in data:
        for k, v in zip(INPUT_KEYS, InputPaths.in_dir(path(data["data_dir"])).__dict__.values()):
            cfg.inputs[k] = v
    for k in INPUT_KEYS:
        if k in data:
            cfg.inputs[k] = path(data[k])
    if "benchmark" in data:
        cfg.benchmark = path(data["benchmark"])
    if "out" in data:
        cfg.out = path(data["out"])
    if "baseline" in data:
        a, b = data["baseline"]
        cfg.baseline = (dt.date.fromisoformat(a), dt.date.fromisoformat(b))
    for key in ("window", "pre_weeks", "post_weeks", "cr", "cluster_key", "strict", "case_zero_fill", "shards", "digits", "seed"):
        if key in data:
            setattr(cfg, key, data[key])
    if "index_windows" in data:
        cfg.index_windows = [int(k) for k in data["index_windows"]]
    if "outcomes" in data:
        cfg.outcomes = list(data["outcomes"])
    if "specs" in data:
        cfg.specs = list(data["specs"])
    if "index_filters" in data:
        cfg.index_filters = [_filter_from_json(f) for f in data["index_filters"]]
    if "validate_windows" in data:
        cfg.validate_windows = [_month_window(w) for w in data["validate_windows"]]
    if "scenario" in data:
        cfg.scenario = dict(data["scenario"])


def apply_flags(cfg: RunConfig, args: argparse.Namespace) -> None:
    if args.data_dir is not None:
        for k, v in zip(INPUT_KEYS, InputPaths.in_dir(args.data_dir).__dict__.values()):
            cfg.inputs[k] = v
    for k in INPUT_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            cfg.inputs[k] = Path(v)
    if getattr(args, "benchmark", None) is not None:
        cfg.benchmark = Path(args.benchmark)
    if args.out is not None:
        cfg.out = Path(args.out)
    if args.baseline is not None:
        cfg.baseline = (dt.date.fromisoformat(args.baseline[0]), dt.date.fromisoformat(args.baseline[1]))
    for key in ("window", "pre_weeks", "post_weeks", "cr", "cluster_key", "shards", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if args.strict:
        cfg.strict = True
    if getattr(args, "outcome", None):
        cfg.outcomes = list(args.outcome)
    if getattr(args, "spec", None):
        cfg.specs = list(args.spec)
    if getattr(args, "windows", None):
        cfg.validate_windows = [_month_window(w) for w in args.windows]


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        apply_file(cfg, json.loads(path.read_text(encoding="utf-8")), path.parent)
    apply_flags(cfg, args)
    if cfg.window not in WINDOWS:
        raise InputError(f"window must be one of {WINDOWS}")
    if cfg.baseline[1] < cfg.baseline[0]:
        raise InputError("baseline end precedes baseline start")
    return cfg


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower() or "unnamed"


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_run_metadata(cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "options": cfg.options().fingerprint(),
        "generated_at": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(extra or {})
    write_json(cfg.out / f"run_{command}.json", meta)


def _groups(data):
    plan = data.plan()
    seen, groups = set(), []
    for pair in plan.pairs:
        for g in (pair.treatment, pair.control):
            if g.name not in seen:
                seen.add(g.name)
                groups.append(g)
    return plan, groups


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_index(cfg: RunConfig) -> int:
    data = load_dataset(cfg.input_paths(), strict=cfg.strict, n_shards=cfg.shards)
    cfg.out.mkdir(parents=True, exist_ok=True)
    plan, groups = _groups(data)
    span = (cfg.baseline[0], data.transactions.last_date)
    windows = cfg.index_windows or [cfg.window]
    written, failures = [], []
    for g in groups:
        for f in cfg.index_filters:
            for k in windows:
                try:
                    series = build_index(data.transactions, g, f, k, cfg.baseline, span)
                except IndexConstructionError as exc:
                    failures.append({"group": g.name, "filter": f.label, "window_days": k, "error": str(exc)})
                    log.error("index %s/%s/%d: %s", g.name, f.label, k, exc)
                    continue
                path = cfg.out / f"index_{slug(g.name)}_{slug(f.label)}_{k}.csv"
                write_series_csv(series, path, metadata=series.sidecar())
                written.append(path.name)
    write_run_metadata(cfg, "index", {"files": written, "failures": failures, "skipped": plan.skipped, "reports": data.reports})
    print(f"wrote {len(written)} index series to {cfg.out}")
    return EXIT_FAILURE if failures else EXIT_OK


def cmd_cases(cfg: RunConfig) -> int:
    data = load_dataset(cfg.input_paths(), strict=cfg.strict, n_shards=cfg.shards)
    cfg.out.mkdir(parents=True, exist_ok=True)
    plan, groups = _groups(data)
    written, failures = [], []
    for g in groups:
        try:
            series = case_rate(data.cases, g, cfg.window, strict=not cfg.case_zero_fill)
        except (InputError, ValueError) as exc:
            failures.append({"group": g.name, "error": str(exc)})
            log.error("cases %s: %s", g.name, exc)
            continue
        path = cfg.out / f"cases_{slug(g.name)}_{cfg.window}.csv"
        meta = {"geography": g.name, "population_2019": g.population_2019, "window_days": cfg.window}
        write_series_csv(series, path, value_name="rate", with_flag=False, metadata=meta)
        written.append(path.name)
    write_run_metadata(cfg, "cases", {"files": written, "failures": failures, "skipped": plan.skipped})
    print(f"wrote {len(written)} case-rate series to {cfg.out}")
    return EXIT_FAILURE if failures else EXIT_OK


def _write_window_series(path: Path, units, announcement: dt.date, pre_weeks: int, post_weeks: int) -> None:
    first = announcement - dt.timedelta(days=7 * pre_weeks)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "role", "date", "rel_day", "value"])
        for u in units:
            for t in range(7 * pre_weeks + 7 * post_weeks):
                day = first + dt.timedelta(days=t)
                if not u.series.covers(day):
                    break
                w.writerow([u.name, "treatment" if u.treated else "control", day.isoformat(), t - 7 * pre_weeks, repr(u.series.get(day))])


def cmd_did(cfg: RunConfig) -> int:
    data = load_dataset(cfg.input_paths(), strict=cfg.strict, n_shards=cfg.shards)
    cfg.out.mkdir(parents=True, exist_ok=True)
    options = cfg.options()
    plan = data.plan()
    failures, written = [], []
    for outcome in cfg.outcomes:
        if outcome not in OUTCOMES:
            raise InputError(f"unknown outcome {outcome!r}; choose from {OUTCOMES}")
        for spec in cfg.specs:
            if spec not in (STATIC, DYNAMIC):
                raise InputError(f"unknown spec {spec!r}")
            results = []
            for pair in plan.pairs:
                try:
                    r = estimate_pair(data, pair, outcome, spec, options)
                except (EstimationError, IndexConstructionError, InputError) as exc:
                    failures.append({"event": pair.name, "outcome": outcome, "spec": spec, "error": str(exc)})
                    log.error("did %s/%s/%s: %s", pair.name, outcome, spec, exc)
                    continue
                results.append(r)
                name = f"did_{slug(outcome)}_{spec}_{slug(pair.name)}.json"
                payload = r.to_json()
                payload["options"].update(options.fingerprint())
                write_json(cfg.out / name, payload)
                written.append(name)
                if spec == cfg.specs[0]:
                    units = outcome_units(data, pair, outcome, options)
                    wname = f"window_{slug(outcome)}_{slug(pair.name)}.csv"
                    _write_window_series(cfg.out / wname, units, pair.event.announcement_date, r.window[0], r.window[1])
                    written.append(wname)
            if results:
                fp = options.fingerprint()
                fp.update(outcome=outcome, spec=spec)
                table = f"table_{slug(outcome)}_{spec}.csv"
                (cfg.out / table).write_text(format_table(results, digits=cfg.digits, fingerprint=fp), encoding="utf-8")
                longname = f"results_{slug(outcome)}_{spec}.csv"
                (cfg.out / longname).write_text(format_long(results), encoding="utf-8")
                written += [table, longname]
    write_run_metadata(cfg, "did", {"files": written, "failures": failures, "skipped": plan.skipped, "reports": data.reports})
    print(f"estimated {len(plan.pairs)} event(s); wrote {len(written)} files to {cfg.out}")
    return EXIT_FAILURE if failures else EXIT_OK


def read_benchmark(path: Path) -> dict[tuple[int, int], float]:
    if not path.is_file():
        raise FileNotFoundError(f"benchmark file not found: {path}")
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"month", "yoy_growth"} <= set(reader.fieldnames):
            raise InputError(f"{path}: header must contain month,yoy_growth")
        for n, row in enumerate(reader, start=1):
            try:
                out[parse_month(row["month"])] = float(row["yoy_growth"])
            except (ValueError, TypeError):
                raise InputError(f"{path}: row {n} unparseable") from None
    return out


def cmd_validate(cfg: RunConfig) -> int:
    if cfg.benchmark is None:
        raise InputError("validate needs --benchmark (month,yoy_growth CSV)")
    bench = read_benchmark(cfg.benchmark)
    data = load_dataset(cfg.input_paths(), strict=cfg.strict, n_shards=cfg.shards)
    cfg.out.mkdir(parents=True, exist_ok=True)
    try:
        report = validate_against_benchmark(data.transactions, bench, cfg.validate_windows)
    except ValueError as exc:
        log.error("validate: %s", exc)
        write_json(cfg.out / "validation.json", {"error": str(exc)})
        return EXIT_FAILURE
    for w in report.windows:
        print(f"{w['start']}..{w['end']}  n={w['n_months']:3d}  pearson={w['pearson']:.6f}")
    write_json(cfg.out / "validation.json", report.to_json())
    return EXIT_OK


def _parse_planted(items) -> dict[int, float]:
    out = {}
    for item in items or []:
        w, _, v = item.partition("=")
        out[int(w)] = float(v)
    return out


def cmd_synth(cfg: RunConfig, args: argparse.Namespace | None = None) -> int:
    scenario = dict(cfg.scenario)
    if args is not None and args.scenario is not None:
        sp = Path(args.scenario)
        if not sp.is_file():
            raise FileNotFoundError(f"scenario file not found: {sp}")
        scenario.update(json.loads(sp.read_text(encoding="utf-8")))
    if cfg.seed is not None:
        scenario["seed"] = cfg.seed
    if args is not None:
        if args.noise is not None:
            scenario["noise_scale"] = args.noise
        if args.planted:
            scenario["planted_effects"] = _parse_planted(args.planted)
    scenario.setdefault("pre_weeks", cfg.pre_weeks)
    scenario.setdefault("post_weeks", cfg.post_weeks)
    scenario.setdefault("window_days", cfg.window)
    scenario.setdefault("baseline", [d.isoformat() for d in cfg.baseline])
    config = ScenarioConfig.from_json(scenario)
    paths = write_scenario(gen_scenario(config), cfg.out)
    print(f"wrote synthetic dataset ({', '.join(sorted(p.name for p in paths.values()))}) to {cfg.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON config file (flags override its values)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed input row")
    p.add_argument("--window", type=int, choices=WINDOWS, help="moving-average window in days")
    p.add_argument("--baseline", nargs=2, metavar=("START", "END"), help="index baseline interval (inclusive)")
    p.add_argument("--pre-weeks", type=int, dest="pre_weeks")
    p.add_argument("--post-weeks", type=int, dest="post_weeks")
    p.add_argument("--cr", choices=("cr0", "cr1"), help="cluster-robust small-sample variant")
    p.add_argument("--cluster-key", choices=("group", "authority"), dest="cluster_key")
    p.add_argument("--seed", type=int, help="scenario seed (synth)")
    p.add_argument("--shards", type=int, help="parse and aggregate the transaction file in N shards")
    p.add_argument("--data-dir", dest="data_dir", help="directory holding the five input CSVs")
    for k in INPUT_KEYS:
        p.add_argument(f"--{k.replace('_', '-')}", dest=k, help=f"path to {k}.csv")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="lockdown-did", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("index", parents=[common], help="build de-seasoned spend indices per locality group")
    sub.add_parser("cases", parents=[common], help="build smoothed case rates per locality group")
    p = sub.add_parser("did", parents=[common], help="run difference-in-difference estimations")
    p.add_argument("--outcome", action="append", choices=OUTCOMES)
    p.add_argument("--spec", action="append", choices=(STATIC, DYNAMIC))
    p = sub.add_parser("validate", parents=[common], help="correlate monthly spend growth with a benchmark")
    p.add_argument("--benchmark", help="CSV with month,yoy_growth")
    p.add_argument("--windows", nargs="+", metavar="YYYY-MM:YYYY-MM")
    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset with ground truth")
    p.add_argument("--scenario", help="JSON scenario config")
    p.add_argument("--noise", type=float, help="noise scale (0 = deterministic)")
    p.add_argument("--planted", nargs="+", metavar="W=DELTA", help="planted weekly effects, e.g. 1=-0.1")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg, args)
        return {"index": cmd_index, "cases": cmd_cases, "did": cmd_did, "validate": cmd_validate}[args.command](cfg)
    except (FileNotFoundError, InputError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EstimationError, IndexConstructionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

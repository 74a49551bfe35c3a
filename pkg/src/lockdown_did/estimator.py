"""Event-window panels and difference-in-difference estimation.

Static specification::

    y[g,t] = a + b*Treat[g] + d*Treat[g]*After[t] + gamma[t] + e[g,t]

Dynamic specification replaces the single interaction with one per event
week ``W != 0``, where ``W(t) = floor(t / 7) + 1`` so that days -7..-1 form
the omitted base week and the announcement day opens week 1. Day dummies
omit ``t = -1``. Fits are population-weighted least squares; standard errors
are cluster-robust sandwiches (CR0 or CR1) with normal-reference p-values.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import _kernels
from .series import DatedSeries

STATIC = "static"
DYNAMIC = "dynamic"
CR_VARIANTS = ("cr0", "cr1")
STAR_THRESHOLDS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))
REFERENCE_DISTRIBUTION = "normal"

# an SE this small relative to the largest SE in the same fit is numerical noise:
# a structurally zero variance cancels to ~eps * max variance, i.e. ~1e-8 in SE
ZERO_SE_RTOL = 1e-6


class EstimationError(ValueError):
    """The requested estimation cannot be carried out on these inputs."""


class RankDeficientError(EstimationError):
    def __init__(self, columns: Sequence[str]):
        super().__init__(f"design matrix is rank deficient; collinear column(s): {', '.join(columns)}")
        self.columns = list(columns)


def week_bucket(rel_day):
    """Event week for a day offset from the announcement (day 0 is week 1)."""
    return np.floor_divide(rel_day, 7) + 1


def interaction_name(week: int | None = None) -> str:
    return "Treat*After" if week is None else f"Treat*After_{week}"


def day_name(t: int) -> str:
    return f"day[{t}]"


# ---------------------------------------------------------------------------
# panels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PanelUnit:
    """One outcome series entering a panel (a locality group or an authority)."""

    name: str
    treated: bool
    series: DatedSeries
    weight: float
    cluster: str


@dataclass(frozen=True)
class Panel:
    unit: np.ndarray
    treated: np.ndarray
    rel_day: np.ndarray
    week: np.ndarray
    outcome: np.ndarray
    weight: np.ndarray
    cluster: np.ndarray
    unit_names: tuple[str, ...]
    cluster_names: tuple[str, ...]
    announcement_date: dt.date
    pre_weeks: int
    post_weeks: int
    requested_post_weeks: int

    @property
    def n_obs(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_names)

    @property
    def rel_days(self) -> np.ndarray:
        return np.arange(-7 * self.pre_weeks, 7 * self.post_weeks)

    @property
    def truncated(self) -> bool:
        return self.post_weeks < self.requested_post_weeks

    def dates(self) -> list[dt.date]:
        return [self.announcement_date + dt.timedelta(days=int(t)) for t in self.rel_day]


def _available_post_weeks(series: DatedSeries, announcement: dt.date) -> int:
    return max(((series.end - announcement).days + 1) // 7, 0)


def build_unit_panel(
    units: Sequence[PanelUnit],
    announcement_date: dt.date,
    pre_weeks: int = 4,
    post_weeks: int = 4,
) -> Panel:
    """Stack balanced event windows for any number of treated/control units.

    The window is ``[-7*pre_weeks, 7*post_weeks - 1]`` days around the
    announcement. When a series ends early the post window shrinks to the
    number of complete weeks every unit still covers; every other missing
    or undefined day is an error naming the date.
    """
    if pre_weeks < 1 or post_weeks < 1:
        raise EstimationError("pre_weeks and post_weeks must both be >= 1")
    if not any(u.treated for u in units) or all(u.treated for u in units):
        raise EstimationError("panel needs at least one treated and one control unit")
    names = [u.name for u in units]
    if len(set(names)) != len(names):
        raise EstimationError("unit names must be unique")
    first = announcement_date - dt.timedelta(days=7 * pre_weeks)
    post = post_weeks
    for u in units:
        if u.series.start > first:
            raise EstimationError(f"{u.name}: outcome missing on {first.isoformat()} (series starts {u.series.start})")
        if u.series.end < announcement_date + dt.timedelta(days=7 * post_weeks - 1):
            post = min(post, _available_post_weeks(u.series, announcement_date))
    if post < 1:
        missing = announcement_date + dt.timedelta(days=6)
        raise EstimationError(f"outcome missing on {missing.isoformat()}: no complete post-announcement week")
    last = announcement_date + dt.timedelta(days=7 * post - 1)
    rel = np.arange(-7 * pre_weeks, 7 * post)
    cluster_names = tuple(dict.fromkeys(u.cluster for u in units))
    cluster_code = {c: i for i, c in enumerate(cluster_names)}
    cols = {k: [] for k in ("unit", "treated", "rel_day", "outcome", "weight", "cluster")}
    for i, u in enumerate(units):
        if not (u.weight > 0 and math.isfinite(u.weight)):
            raise EstimationError(f"{u.name}: weight must be positive and finite")
        y = u.series.window(first, last)
        bad = np.flatnonzero(~np.isfinite(y))
        if bad.size:
            raise EstimationError(f"{u.name}: outcome missing on {(first + dt.timedelta(days=int(bad[0]))).isoformat()}")
        cols["unit"].append(np.full(rel.shape, i))
        cols["treated"].append(np.full(rel.shape, 1.0 if u.treated else 0.0))
        cols["rel_day"].append(rel)
        cols["outcome"].append(np.asarray(y, dtype=np.float64))
        cols["weight"].append(np.full(rel.shape, float(u.weight)))
        cols["cluster"].append(np.full(rel.shape, cluster_code[u.cluster]))
    stacked = {k: np.concatenate(v) for k, v in cols.items()}
    return Panel(
        unit=stacked["unit"].astype(np.int64),
        treated=stacked["treated"],
        rel_day=stacked["rel_day"].astype(np.int64),
        week=week_bucket(stacked["rel_day"]).astype(np.int64),
        outcome=stacked["outcome"],
        weight=stacked["weight"],
        cluster=stacked["cluster"].astype(np.int64),
        unit_names=tuple(names),
        cluster_names=cluster_names,
        announcement_date=announcement_date,
        pre_weeks=pre_weeks,
        post_weeks=post,
        requested_post_weeks=post_weeks,
    )


def build_panel(
    treat_series: DatedSeries,
    control_series: DatedSeries,
    announcement_date: dt.date,
    pre_weeks: int = 4,
    post_weeks: int = 4,
    *,
    weights: tuple[float, float] = (1.0, 1.0),
    names: tuple[str, str] = ("treatment", "control"),
) -> Panel:
    """Two-group panel; each group is its own cluster."""
    units = [
        PanelUnit(names[0], True, treat_series, weights[0], names[0]),
        PanelUnit(names[1], False, control_series, weights[1], names[1]),
    ]
    return build_unit_panel(units, announcement_date, pre_weeks, post_weeks)


# ---------------------------------------------------------------------------
# design matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    columns: tuple[str, ...]
    specification: str
    full_rank: bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    @property
    def interaction_columns(self) -> tuple[str, ...]:
        return tuple(c for c in self.columns if c.startswith("Treat*"))


def collinear_columns(X: np.ndarray, columns: Sequence[str]) -> list[str]:
    """Columns that a pivoted QR places beyond the numerical rank."""
    if X.shape[1] == 0:
        return []
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = (diag[0] if diag.size else 0.0) * max(X.shape) * np.finfo(np.float64).eps
    rank = int((diag > tol).sum())
    if X.shape[0] < X.shape[1]:
        rank = min(rank, X.shape[0])
    return [columns[j] for j in sorted(piv[rank:])]


def _base_columns(panel: Panel) -> tuple[list[np.ndarray], list[str]]:
    n = panel.n_obs
    cols = [np.ones(n), panel.treated.astype(np.float64)]
    names = ["const", "Treat"]
    for t in panel.rel_days:
        if t == -1:
            continue
        cols.append((panel.rel_day == t).astype(np.float64))
        names.append(day_name(int(t)))
    return cols, names


def _finish(cols, names, spec, check) -> DesignMatrix:
    X = np.column_stack(cols)
    bad = collinear_columns(X, names)
    if bad and check:
        raise RankDeficientError(bad)
    return DesignMatrix(X, tuple(names), spec, not bad)


def design_static(panel: Panel, check: bool = True) -> DesignMatrix:
    """Intercept, Treat, day dummies (t = -1 omitted) and one Treat*After column."""
    cols, names = _base_columns(panel)
    cols.append(panel.treated * (panel.rel_day >= 0))
    names.append(interaction_name())
    return _finish(cols, names, STATIC, check)


def dynamic_weeks(panel: Panel) -> list[int]:
    """Event weeks carrying an interaction, ascending, base week 0 excluded."""
    return [int(w) for w in np.unique(week_bucket(panel.rel_days)) if w != 0]


def design_dynamic(panel: Panel, check: bool = True) -> DesignMatrix:
    """Intercept, Treat, day dummies and a Treat*After_W column per week W != 0."""
    cols, names = _base_columns(panel)
    for w in dynamic_weeks(panel):
        cols.append(panel.treated * (panel.week == w))
        names.append(interaction_name(w))
    return _finish(cols, names, DYNAMIC, check)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WLSFit:
    coef: np.ndarray
    residuals: np.ndarray
    bread: np.ndarray = field(repr=False)


def _matrix(X) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(X, DesignMatrix):
        return X.values, X.columns
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise EstimationError("X must be two-dimensional")
    return X, tuple(f"x{j}" for j in range(X.shape[1]))


def _check_inputs(X, y, w):
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if y.shape != (X.shape[0],) or w.shape != (X.shape[0],):
        raise EstimationError("X, y and w must have matching lengths")
    if not (np.isfinite(X).all() and np.isfinite(y).all() and np.isfinite(w).all()):
        raise EstimationError("non-finite values in X, y or w")
    if (w <= 0).any():
        raise EstimationError("weights must be strictly positive")
    return y, w


def _weighted_qr(X: np.ndarray, w: np.ndarray, names):
    sw = np.sqrt(w)
    Q, R, piv = scipy.linalg.qr(X * sw[:, None], mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = (diag[0] if diag.size else 0.0) * max(X.shape) * np.finfo(np.float64).eps
    rank = int((diag > tol).sum())
    if rank < X.shape[1]:
        raise RankDeficientError([names[j] for j in sorted(piv[rank:])])
    return sw, Q, R, piv


def _bread_from_r(R: np.ndarray, piv: np.ndarray) -> np.ndarray:
    k = R.shape[0]
    Rinv = scipy.linalg.solve_triangular(R, np.eye(k))
    inner = Rinv @ Rinv.T
    bread = np.empty_like(inner)
    bread[np.ix_(piv, piv)] = inner
    return bread


def wls_fit(X, y, w) -> WLSFit:
    """Weighted least squares via pivoted Householder QR of ``sqrt(w) * X``.

    Returns coefficients, raw residuals ``y - X b`` and ``(X'WX)^-1``.
    """
    X, names = _matrix(X)
    y, w = _check_inputs(X, y, w)
    sw, Q, R, piv = _weighted_qr(X, w, names)
    z = scipy.linalg.solve_triangular(R, Q.T @ (y * sw))
    coef = np.empty(X.shape[1])
    coef[piv] = z
    return WLSFit(coef, y - X @ coef, _bread_from_r(R, piv))


def cluster_cov(X, residuals, w, cluster_ids, variant: str = "cr1", bread: np.ndarray | None = None) -> np.ndarray:
    """Cluster-robust sandwich ``B M B`` with ``B = (X'WX)^-1``.

    ``M`` sums, over clusters, the outer product of ``X_g' W_g e_g``. CR1
    scales by ``G/(G-1) * (N-1)/(N-k)``; CR0 applies no scaling.
    """
    X, names = _matrix(X)
    e, w = _check_inputs(X, residuals, w)
    if variant not in CR_VARIANTS:
        raise ValueError(f"variant must be one of {CR_VARIANTS}")
    n, k = X.shape
    if n <= k:
        raise EstimationError(f"need more observations than parameters (N={n}, k={k})")
    labels, codes = np.unique(np.asarray(cluster_ids), return_inverse=True)
    g = labels.shape[0]
    if g < 2:
        raise EstimationError("cluster-robust covariance needs at least two clusters")
    if bread is None:
        _, _, R, piv = _weighted_qr(X, w, names)
        bread = _bread_from_r(R, piv)
    sums = _kernels.cluster_score_sums(X * (w * e)[:, None], codes.reshape(-1), g)
    cov = bread @ (sums.T @ sums) @ bread
    if variant == "cr1":
        cov *= (g / (g - 1)) * ((n - 1) / (n - k))
    return (cov + cov.T) / 2.0


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

def stars_for(p: float) -> str:
    if p is None or math.isnan(p):
        return ""
    for cut, mark in STAR_THRESHOLDS:
        if p < cut:
            return mark
    return ""


def normal_p_value(estimate: float, se: float) -> float:
    """Two-sided p-value of ``estimate / se`` against N(0, 1); NaN when se is 0."""
    if se == 0.0 or math.isnan(se):
        return math.nan
    return math.erfc(abs(estimate / se) / math.sqrt(2.0))


@dataclass
class DiDResult:
    names: tuple[str, ...]
    coef: np.ndarray
    covariance: np.ndarray
    se: np.ndarray
    p: np.ndarray
    n_obs: int
    n_clusters: int
    specification: str
    event: str = ""
    outcome: str = ""
    window: tuple[int, int] = (4, 4)
    requested_window: tuple[int, int] = (4, 4)
    options: dict = field(default_factory=dict)

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.coef)))

    @property
    def standard_errors(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.se)))

    @property
    def p_values(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.p)))

    @property
    def stars(self) -> dict[str, str]:
        return {n: stars_for(p) for n, p in zip(self.names, self.p)}

    @property
    def interaction_names(self) -> list[str]:
        return [n for n in self.names if n.startswith("Treat*")]

    def report_order(self) -> list[str]:
        inter = self.interaction_names
        return inter + [n for n in self.names if n not in inter]

    def to_json(self) -> dict:
        i = {n: j for j, n in enumerate(self.names)}

        def num(x):
            return None if math.isnan(x) else float(x)

        return {
            "event": self.event,
            "outcome": self.outcome,
            "spec": self.specification,
            "coefficients": [
                {
                    "name": n,
                    "estimate": float(self.coef[i[n]]),
                    "se": float(self.se[i[n]]),
                    "p": num(self.p[i[n]]),
                    "stars": stars_for(self.p[i[n]]),
                }
                for n in self.report_order()
            ],
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "window": {"pre_weeks": self.window[0], "post_weeks": self.window[1]},
            "options": dict(self.options),
        }


def _standard_errors(cov: np.ndarray, fit: WLSFit, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    resid_norm = math.sqrt(float(np.sum(w * fit.residuals**2)))
    y_norm = math.sqrt(float(np.sum(w * y**2)))
    if resid_norm <= 1e-12 * max(y_norm, 1.0):
        return np.zeros_like(se)
    top = se.max() if se.size else 0.0
    se[se <= ZERO_SE_RTOL * top] = 0.0
    return se


def run_did(
    panel: Panel,
    spec: str = DYNAMIC,
    *,
    cr: str = "cr1",
    event: str = "",
    outcome: str = "",
    cluster_key: str = "group",
) -> DiDResult:
    """Design, fit and sandwich for one panel.

    Standard errors below ``ZERO_SE_RTOL`` times the largest SE in the fit
    (or all SEs, when the fit is exact) are reported as 0 with no p-value.
    This is what happens to Treat and the interactions when only two
    clusters exist, because their cluster score sums vanish identically.
    """
    if spec == STATIC:
        X = design_static(panel)
    elif spec == DYNAMIC:
        X = design_dynamic(panel)
    else:
        raise ValueError(f"spec must be {STATIC!r} or {DYNAMIC!r}")
    fit = wls_fit(X, panel.outcome, panel.weight)
    cov = cluster_cov(X, fit.residuals, panel.weight, panel.cluster, cr, bread=fit.bread)
    se = _standard_errors(cov, fit, panel.outcome, panel.weight)
    p = np.array([normal_p_value(b, s) for b, s in zip(fit.coef, se)])
    options = {
        "cr_variant": cr,
        "cluster_key": cluster_key,
        "reference_distribution": REFERENCE_DISTRIBUTION,
    }
    if panel.n_clusters == 2:
        options["note"] = "two clusters: Treat and interaction SEs are identically zero"
    return DiDResult(
        names=X.columns,
        coef=fit.coef,
        covariance=cov,
        se=se,
        p=p,
        n_obs=panel.n_obs,
        n_clusters=panel.n_clusters,
        specification=spec,
        event=event,
        outcome=outcome,
        window=(panel.pre_weeks, panel.post_weeks),
        requested_window=(panel.pre_weeks, panel.requested_post_weeks),
        options=options,
    )


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def table_rows(pre_weeks: int = 4, post_weeks: int = 4, spec: str = DYNAMIC) -> list[str]:
    """Interaction row labels in table order for the requested window."""
    if spec == STATIC:
        return [interaction_name()]
    weeks = [w for w in range(-pre_weeks + 1, post_weeks + 1) if w != 0]
    return [interaction_name(w) for w in weeks]


def format_table(
    results: Sequence[DiDResult],
    *,
    digits: int = 3,
    fingerprint: dict | None = None,
) -> str:
    """Events as columns, interaction terms as rows, SEs in parentheses below.

    Terms an event lacks (a truncated post window) are left blank.
    """
    if not results:
        raise ValueError("no results to tabulate")
    spec = results[0].specification
    pre = max(r.requested_window[0] for r in results)
    post = max(r.requested_window[1] for r in results)
    rows = table_rows(pre, post, spec)
    buf = io.StringIO()
    for key, value in sorted((fingerprint or {}).items()):
        buf.write(f"# {key}={value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["term"] + [r.event for r in results])
    for name in rows:
        est_row, se_row = [name], [""]
        for r in results:
            if name in r.names:
                j = r.names.index(name)
                est_row.append(f"{r.coef[j]:.{digits}f}{stars_for(r.p[j])}")
                se_row.append(f"({r.se[j]:.{digits}f})")
            else:
                est_row.append("")
                se_row.append("")
        w.writerow(est_row)
        w.writerow(se_row)
    w.writerow(["Observations"] + [r.n_obs for r in results])
    w.writerow(["Clusters"] + [r.n_clusters for r in results])
    w.writerow(["Note", "*p<0.05; **p<0.01; ***p<0.001"])
    return buf.getvalue()


def format_long(results: Sequence[DiDResult]) -> str:
    """One row per (event, coefficient) at full precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["event", "outcome", "spec", "name", "estimate", "se", "p", "stars", "n_obs", "n_clusters"])
    for r in results:
        for c in r.to_json()["coefficients"]:
            w.writerow(
                [
                    r.event,
                    r.outcome,
                    r.specification,
                    c["name"],
                    repr(c["estimate"]),
                    repr(c["se"]),
                    "" if c["p"] is None else repr(c["p"]),
                    c["stars"],
                    r.n_obs,
                    r.n_clusters,
                ]
            )
    return buf.getvalue()

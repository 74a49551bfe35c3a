"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``LOCKDOWN_DID_DISABLE_NUMBA`` is unset or ``0``. Both paths are
always importable (``*_numba`` / ``*_numpy``) so they can be benchmarked and
cross-checked against each other.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLE_FLAG = "LOCKDOWN_DID_DISABLE_NUMBA"

try:  # pragma: no cover - exercised implicitly by whichever path is active
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _numba_requested() -> bool:
    return os.environ.get(_DISABLE_FLAG, "0").strip().lower() in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and _numba_requested()


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------

def daily_sums_numpy(day, amount, keep, first_day, n_days):
    """Integer sums of ``amount`` per day over rows with ``keep``.

    Output slot ``i`` holds day number ``first_day + i``; rows outside the
    ``n_days`` span are ignored.
    """
    offset = day - first_day
    sel = keep & (offset >= 0) & (offset < n_days)
    out = np.zeros(n_days, dtype=np.int64)
    np.add.at(out, offset[sel], amount[sel])
    return out


def filtered_daily_sums_numpy(day, amount, authority, auth_table, category, cat_code, channel, chan_code, first_day, n_days):
    """Daily sums over rows whose authority is selected in ``auth_table``.

    ``cat_code`` / ``chan_code`` of -1 mean "any".
    """
    keep = auth_table[authority]
    if cat_code >= 0:
        keep &= category == cat_code
    if chan_code >= 0:
        keep &= channel == chan_code
    return daily_sums_numpy(day, amount, keep, first_day, n_days)


def trailing_window_sums_numpy(values, window):
    # int64 input stays exact; float input is summed window by window (no running cumsum drift)
    if values.dtype.kind in "iu":
        csum = np.concatenate(([0], np.cumsum(values, dtype=np.int64)))
        return csum[window:] - csum[:-window]
    view = np.lib.stride_tricks.sliding_window_view(values.astype(np.float64), window)
    return view.sum(axis=1)


def cluster_score_sums_numpy(scores, cluster, n_clusters):
    out = np.zeros((n_clusters, scores.shape[1]), dtype=np.float64)
    np.add.at(out, cluster, scores)
    return out


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _daily_sums_jit(day, amount, keep, first_day, n_days):
        out = np.zeros(n_days, dtype=np.int64)
        for i in range(day.shape[0]):
            d = day[i] - first_day
            if keep[i] and d >= 0 and d < n_days:
                out[d] += amount[i]
        return out

    @njit(cache=True, nogil=True)
    def _filtered_daily_sums_jit(day, amount, authority, auth_table, category, cat_code, channel, chan_code, first_day, n_days):
        out = np.zeros(n_days, dtype=np.int64)
        for i in range(day.shape[0]):
            if not auth_table[authority[i]]:
                continue
            if cat_code >= 0 and category[i] != cat_code:
                continue
            if chan_code >= 0 and channel[i] != chan_code:
                continue
            d = day[i] - first_day
            if d >= 0 and d < n_days:
                out[d] += amount[i]
        return out

    @njit(cache=True, nogil=True)
    def _trailing_int_jit(values, window):
        n = values.shape[0] - window + 1
        out = np.empty(n, dtype=np.int64)
        acc = 0
        for i in range(window):
            acc += values[i]
        out[0] = acc
        for i in range(1, n):
            acc += values[i + window - 1] - values[i - 1]
            out[i] = acc
        return out

    @njit(cache=True, nogil=True)
    def _trailing_float_jit(values, window):
        n = values.shape[0] - window + 1
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            acc = 0.0
            for j in range(i, i + window):
                acc += values[j]
            out[i] = acc
        return out

    @njit(cache=True, nogil=True)
    def _cluster_score_sums_jit(scores, cluster, n_clusters):
        k = scores.shape[1]
        out = np.zeros((n_clusters, k), dtype=np.float64)
        for i in range(scores.shape[0]):
            g = cluster[i]
            for j in range(k):
                out[g, j] += scores[i, j]
        return out

    def daily_sums_numba(day, amount, keep, first_day, n_days):
        return _daily_sums_jit(
            np.ascontiguousarray(day, dtype=np.int64),
            np.ascontiguousarray(amount, dtype=np.int64),
            np.ascontiguousarray(keep, dtype=np.bool_),
            int(first_day),
            int(n_days),
        )

    def filtered_daily_sums_numba(day, amount, authority, auth_table, category, cat_code, channel, chan_code, first_day, n_days):
        return _filtered_daily_sums_jit(
            np.ascontiguousarray(day, dtype=np.int64),
            np.ascontiguousarray(amount, dtype=np.int64),
            np.ascontiguousarray(authority, dtype=np.int32),
            np.ascontiguousarray(auth_table, dtype=np.bool_),
            np.ascontiguousarray(category, dtype=np.int32),
            int(cat_code),
            np.ascontiguousarray(channel, dtype=np.int8),
            int(chan_code),
            int(first_day),
            int(n_days),
        )

    def trailing_window_sums_numba(values, window):
        if values.dtype.kind in "iu":
            return _trailing_int_jit(np.ascontiguousarray(values, dtype=np.int64), int(window))
        return _trailing_float_jit(np.ascontiguousarray(values, dtype=np.float64), int(window))

    def cluster_score_sums_numba(scores, cluster, n_clusters):
        return _cluster_score_sums_jit(
            np.ascontiguousarray(scores, dtype=np.float64),
            np.ascontiguousarray(cluster, dtype=np.int64),
            int(n_clusters),
        )

else:  # pragma: no cover
    daily_sums_numba = daily_sums_numpy
    filtered_daily_sums_numba = filtered_daily_sums_numpy
    trailing_window_sums_numba = trailing_window_sums_numpy
    cluster_score_sums_numba = cluster_score_sums_numpy


if USE_NUMBA:
    daily_sums = daily_sums_numba
    filtered_daily_sums = filtered_daily_sums_numba
    trailing_window_sums = trailing_window_sums_numba
    cluster_score_sums = cluster_score_sums_numba
else:
    daily_sums = daily_sums_numpy
    filtered_daily_sums = filtered_daily_sums_numpy
    trailing_window_sums = trailing_window_sums_numpy
    cluster_score_sums = cluster_score_sums_numpy


def backend() -> str:
    """Name of the active kernel backend (``"numba"`` or ``"numpy"``)."""
    return "numba" if USE_NUMBA else "numpy"

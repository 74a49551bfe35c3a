"""Benchmark the numba kernels against their pure-numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py --rows 1000000 --repeat 5
"""
from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np

from lockdown_did import _kernels as K


def _time(fn, repeat):
    fn()  # warm-up (jit compile / cache load)
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def make_rows(n, n_days=700, n_auth=50, seed=0):
    rng = np.random.default_rng(seed)
    return {
        "day": rng.integers(17_800, 17_800 + n_days, n).astype(np.int64),
        "amount": rng.integers(1, 50_000, n).astype(np.int64),
        "authority": rng.integers(0, n_auth, n).astype(np.int32),
        "category": rng.integers(0, 4, n).astype(np.int32),
        "channel": rng.integers(0, 2, n).astype(np.int8),
        "auth_table": (np.arange(n_auth) % 3 == 0),
        "n_days": n_days,
    }


def run(rows: int, repeat: int) -> list[dict]:
    r = make_rows(rows)
    series = np.random.default_rng(1).random(700)
    scores = np.random.default_rng(2).random((rows // 10, 60))
    cluster = np.random.default_rng(3).integers(0, 24, rows // 10)
    cases = {
        "filtered_daily_sums": lambda f: f(
            r["day"], r["amount"], r["authority"], r["auth_table"], r["category"], 1, r["channel"], 1, 17_800, r["n_days"]
        ),
        "trailing_window_sums": lambda f: f(series, 28),
        "cluster_score_sums": lambda f: f(scores, cluster, 24),
    }
    out = []
    for name, call in cases.items():
        np_fn = getattr(K, f"{name}_numpy")
        nb_fn = getattr(K, f"{name}_numba")
        same = np.allclose(call(np_fn), call(nb_fn), rtol=1e-12, atol=0)
        t_np = _time(lambda: call(np_fn), repeat)
        t_nb = _time(lambda: call(nb_fn), repeat)
        out.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb, "agree": bool(same)})
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba not installed; only the numpy path is available")
    results = run(args.rows, args.repeat)
    if args.json:
        print(json.dumps(results, indent=2))
        return 0
    print(f"{'kernel':<24}{'numpy (s)':>12}{'numba (s)':>12}{'speedup':>10}  agree")
    for row in results:
        print(f"{row['kernel']:<24}{row['numpy_s']:>12.5f}{row['numba_s']:>12.5f}{row['speedup']:>10.1f}  {row['agree']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Timing of full filter + smoother passes.

``python -m strcgp.bench`` prints a JSON timing table for the active backend;
:func:`compare_backends` runs it twice in subprocesses, once with numba and
once with ``STRCGP_DISABLE_NUMBA=1``, because the backend is fixed at import.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from ._backend import backend_name
from .filtering import run_filter, run_smoother
from .ssm import KernelSpec, assemble_model, transitions_for_times
from .weights import WeightPolicy

DEFAULT_SIZES = (500, 1000, 2000, 4000, 8000, 16000)
METHODS = {"stgp": WeightPolicy.constant, "st-rcgp": WeightPolicy.adaptive}


@dataclass(frozen=True)
class Timing:
    method: str
    n_t: int
    n_s: int
    times: tuple

    @property
    def best(self):
        return min(self.times)

    @property
    def mean(self):
        return float(np.mean(self.times))

    @property
    def std(self):
        return float(np.std(self.times))


def _series(n_t, n_s, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, n_t / 200.0, n_t)
    y = np.sin(2 * np.pi * t)[:, None] + 0.3 * rng.standard_normal((n_t, n_s))
    grid = None if n_s == 1 else np.linspace(0.0, 1.0, n_s)[:, None]
    return t, grid, y


def time_run(method, n_t, n_s=1, reps=5, seed=0) -> Timing:
    """Wall-clock seconds of ``reps`` filter + smoother passes (model build included)."""
    t, grid, y = _series(n_t, n_s, seed)
    spec = KernelSpec("matern32", 0.1, 1.0, None if n_s == 1 else "matern32", 0.3, 1.0, 0.09)
    policy = METHODS[method]()
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        model = assemble_model(spec, grid)
        tr = run_filter(model, t, y, policy, transitions=transitions_for_times(model, t))
        run_smoother(tr)
        out.append(time.perf_counter() - t0)
    return Timing(method, n_t, n_s, tuple(out))


def loglog_slope(n, seconds):
    """Least-squares slope of ``log(seconds)`` against ``log(n)``."""
    return float(np.polyfit(np.log(np.asarray(n, float)), np.log(np.asarray(seconds, float)), 1)[0])


def scaling(sizes=DEFAULT_SIZES, n_s=1, reps=5, methods=("stgp", "st-rcgp")):
    """Timings for each method and size plus slopes and the total-time ratio."""
    for m in methods:  # compile and warm caches outside the timed region
        time_run(m, 50, n_s, reps=1)
    rows = [time_run(m, n, n_s, reps) for m in methods for n in sizes]
    slopes = {m: loglog_slope(sizes, [r.best for r in rows if r.method == m]) for m in methods}
    totals = {m: sum(r.best for r in rows if r.method == m) for m in methods}
    ratio = totals["st-rcgp"] / totals["stgp"] if {"stgp", "st-rcgp"} <= set(methods) else float("nan")
    return rows, slopes, ratio


def rows_to_csv(rows):
    lines = ["method,n_t,n_s,best_s,mean_s,std_s"]
    for r in rows:
        lines.append(f"{r.method},{r.n_t},{r.n_s},{r.best!r},{r.mean!r},{r.std!r}")
    return "\n".join(lines) + "\n"


def _run_subprocess(disable_numba, sizes, reps):
    env = dict(os.environ)
    env["STRCGP_DISABLE_NUMBA"] = "1" if disable_numba else "0"
    cmd = [sys.executable, "-m", "strcgp.bench", "--json", "--reps", str(reps),
           "--sizes", ",".join(str(s) for s in sizes)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def compare_backends(sizes=(500, 2000, 8000), reps=3):
    """Run the same benchmark under numba and pure numpy; returns both tables."""
    return {"numba": _run_subprocess(False, sizes, reps), "numpy": _run_subprocess(True, sizes, reps)}


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m strcgp.bench")
    ap.add_argument("--sizes", default=",".join(map(str, DEFAULT_SIZES)))
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--n-s", type=int, default=1)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    sizes = tuple(int(s) for s in args.sizes.split(","))
    rows, slopes, ratio = scaling(sizes, args.n_s, args.reps)
    if args.json:
        print(json.dumps({"backend": backend_name(), "rows": [asdict(r) for r in rows],
                          "slopes": slopes, "ratio": ratio}))
    else:
        print(f"backend: {backend_name()}")
        print(rows_to_csv(rows), end="")
        print(f"slopes: {slopes}  st-rcgp/stgp: {ratio:.3f}")


if __name__ == "__main__":
    main()

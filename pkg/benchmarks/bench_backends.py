"""Compare the numba and pure-numpy backends on full filter + smoother passes.

Each backend runs in its own interpreter because the choice is fixed when
``strcgp`` is imported::

    python benchmarks/bench_backends.py --sizes 500,2000,8000 --reps 3
"""

import argparse

from strcgp.bench import compare_backends


def _table(result):
    best = {}
    for row in result["rows"]:
        best[(row["method"], row["n_t"])] = min(row["times"])
    return best


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="500,2000,8000")
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args(argv)
    sizes = tuple(int(s) for s in args.sizes.split(","))
    res = compare_backends(sizes, args.reps)
    fast, slow = _table(res["numba"]), _table(res["numpy"])
    print(f"{'method':<8} {'n_t':>6} {'numba_s':>10} {'numpy_s':>10} {'speedup':>8}")
    for key in sorted(fast):
        a, b = fast[key], slow[key]
        print(f"{key[0]:<8} {key[1]:>6} {a:>10.4f} {b:>10.4f} {b / a:>8.2f}")
    for name in ("numba", "numpy"):
        r = res[name]
        slopes = ", ".join(f"{m}={s:.3f}" for m, s in r["slopes"].items())
        print(f"{name} ({r['backend']}): slopes {slopes}; st-rcgp/stgp {r['ratio']:.3f}")


if __name__ == "__main__":
    main()

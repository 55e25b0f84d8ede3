"""Command-line interface: ``strcgp {simulate,fit,predict,diagnose,bench}``.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 I/O or data-file
error. Structured results are JSON documents carrying ``schema_version``;
tabular outputs are CSV.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import bench as bench_mod
from .data_io import (
    Contamination,
    Dataset,
    GeneratorConfig,
    generate,
    load_dataset,
    write_csv,
    write_truth_csv,
)
from .diagnostics import DEFAULT_QUANTILES, coverage, ewr, nlpd, pif_curve, rmse
from .errors import (
    DuplicatePoint,
    GridMismatch,
    InputError,
    NumericalError,
    OptimizationAborted,
    ParseError,
    UnsupportedKernel,
)
from .filtering import filter_smooth, predict_at
from .hyperopt import PARAM_NAMES, fit, initial_theta
from .ssm import KernelSpec
from .weights import SUMMARY_MODES, WeightPolicy

SCHEMA_VERSION = 1
SEED_ENV = "STRCGP_SEED"
METHODS = ("stgp", "st-rcgp", "rcgp-fixed")
OBJECTIVES = ("standard", "robust")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class UsageError(InputError):
    pass


@dataclass
class RunConfig:
    """Validated settings shared by fit, predict and diagnose."""

    method: str = "st-rcgp"
    objective: Optional[str] = None
    temporal_kernel: str = "matern32"
    spatial_kernel: Optional[str] = None
    learning_rate: float = 0.3
    steps: int = 70
    fd_step: float = 1e-4
    summary: str = "quantile"
    delta: float = 0.05
    eps: float = 0.05
    seed: int = 0

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise UsageError(f"unknown configuration key(s): {', '.join(unknown)}")
        cfg = cls(**{k: v for k, v in mapping.items() if v is not None})
        cfg.validate()
        return cfg

    def validate(self):
        if self.method not in METHODS:
            raise UsageError(f"--method: expected one of {METHODS}, got {self.method!r}")
        if self.objective is None:
            self.objective = "robust" if self.method == "st-rcgp" else "standard"
        if self.objective not in OBJECTIVES:
            raise UsageError(f"--objective: expected one of {OBJECTIVES}, got {self.objective!r}")
        if self.summary not in SUMMARY_MODES:
            raise UsageError(f"--summary: expected one of {SUMMARY_MODES}, got {self.summary!r}")
        if not 0.0 < self.delta < 1.0:
            raise UsageError("--delta must lie in (0, 1)")
        if self.learning_rate < 0 or self.steps < 0 or not self.fd_step > 0:
            raise UsageError("--lr and --steps must be non-negative and --fd-step positive")
        for flag, name, value in (("--temporal-kernel", "temporal", self.temporal_kernel),
                                  ("--spatial-kernel", "spatial", self.spatial_kernel)):
            try:
                if name == "temporal":
                    KernelSpec(value)
                elif value is not None:
                    KernelSpec("matern32", spatial_family=value)
            except UnsupportedKernel as exc:
                raise UsageError(f"{flag}: {exc}") from None

    def policy(self, ds: Dataset):
        if self.method == "stgp":
            return WeightPolicy.constant()
        if self.method == "st-rcgp":
            return WeightPolicy.adaptive()
        return WeightPolicy.rcgp_heuristic(ds.y[ds.observed], self.eps)

    def base_spec(self, ds: Dataset) -> KernelSpec:
        spatial = self.spatial_kernel
        if ds.d_s and spatial is None:
            spatial = "matern32"
        if not ds.d_s:
            spatial = None
        return KernelSpec(self.temporal_kernel, 1.0, 1.0, spatial, 1.0, 1.0, 1.0)


# helpers ------------------------------------------------------------------------


def _config_from_args(args) -> RunConfig:
    mapping = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise UsageError("--config must hold a JSON object")
        mapping.update(loaded)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            mapping[f.name] = v
    return RunConfig.from_mapping(mapping)


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _float_list(text, flag):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _emit(text, path):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump_json(doc, path):
    _emit(json.dumps(_to_jsonable(doc), indent=2, sort_keys=True) + "\n", path)


def _load_result(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise UsageError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    return doc


def _spec_from_result(doc, ds: Dataset) -> KernelSpec:
    k = doc["kernel"]
    spatial = k.get("spatial_family") if ds.d_s else None
    spec = KernelSpec(k["temporal_family"], 1.0, 1.0, spatial, 1.0, 1.0, 1.0)
    return spec.with_params(**{n: float(v) for n, v in doc["theta"].items() if n in PARAM_NAMES})


def _resolve_model(args, cfg: RunConfig, ds: Dataset):
    """Kernel spec and policy from ``--result`` or from explicit parameters."""
    if getattr(args, "result", None):
        doc = _load_result(args.result)
        cfg.method = doc.get("method", cfg.method) if args.method is None else cfg.method
        cfg.validate()
        return _spec_from_result(doc, ds), cfg.policy(ds)
    base = cfg.base_spec(ds)
    params = {n: getattr(args, n) for n in PARAM_NAMES if getattr(args, n, None) is not None}
    if params:
        spec = base.with_params(**params)
    else:
        spec = initial_theta(base, ds).to_spec(base)
    return spec, cfg.policy(ds)


def _reference(ds: Dataset):
    """Targets for metrics: clean values when known, otherwise the data."""
    if ds.y_clean is not None:
        keep = ds.observed & ~(ds.outlier_mask if ds.outlier_mask is not None else False)
        return np.where(keep, ds.y_clean, np.nan)
    return np.where(ds.observed, ds.y, np.nan)


def compute_metrics(y_ref, mean, sd_y, weights, sigma, quantiles=DEFAULT_QUANTILES):
    """Metrics of a predictive for ``y`` given as mean and standard deviation."""
    sd_y = np.asarray(sd_y, dtype=float)
    return {
        "rmse": rmse(y_ref, mean),
        "nlpd": nlpd(y_ref, mean, sd_y**2),
        "ewr": ewr(weights, sigma),
        "coverage": [[q, c] for q, c in coverage(y_ref, mean, sd_y, quantiles)],
    }


def _smoothed_predictive(spec, ds, policy):
    trace, sm = filter_smooth(spec, ds.times, ds.grid, ds.y, policy, ds.observed)
    mean, var_f = sm.marginals()
    sd_f = np.sqrt(var_f)
    sd_y = np.sqrt(var_f + spec.noise_variance)
    return trace, mean, sd_f, sd_y


# commands -------------------------------------------------------------------------


def cmd_simulate(args):
    seed = args.seed if args.seed is not None else _default_seed()
    region = tuple(_float_list(args.region, "--region")) if args.region else None
    if region is not None and len(region) != 2:
        raise UsageError("--region takes two numbers lo,hi")
    steps = tuple(int(v) for v in _float_list(args.outlier_steps, "--outlier-steps")) if args.outlier_steps else None
    cfg = GeneratorConfig(
        preset=args.preset, seed=seed, noise_sd=args.noise_sd, n_t=args.n_t,
        grid_size=args.grid if args.grid is not None else 25,
        contamination=Contamination(rate=args.rate, region=region, steps=steps),
    )
    ds = generate(cfg)
    write_csv(ds, args.output)
    truth = args.truth or _sidecar_path(args.output)
    write_truth_csv(ds, truth)
    print(f"wrote {args.output} ({ds.n_t} steps x {ds.n_s} locations) and {truth}")
    return EXIT_OK


def _sidecar_path(path):
    root, ext = os.path.splitext(path)
    return f"{root}.truth{ext or '.csv'}"


def _result_doc(cfg, spec, res, trace, metrics, ds, aborted=False):
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "method": cfg.method,
        "objective": cfg.objective,
        "settings": {k: v for k, v in asdict(cfg).items() if k not in ("method", "objective")},
        "kernel": {"temporal_family": spec.temporal_family, "spatial_family": spec.spatial_family},
        "theta": dict(res.theta.values),
        "fixed": [n for n, f in zip(res.theta.names, res.theta.fixed) if f],
        "metrics": metrics,
        "trace_summary": {
            "n_t": ds.n_t, "n_s": ds.n_s, "n_observed": int(ds.observed.sum()),
            "n_jitter": trace.n_jitter if trace is not None else None,
            "objective_best": res.value, "n_evals": res.n_evals,
            "rejected_steps": res.rejected_steps,
            "min_weight": float(np.nanmin(trace.w)) if trace is not None else None,
        },
        "objective_trace": res.history,
        "best_trace": res.best_history,
        "weights": trace.w if trace is not None else None,
        "w_tilde": res.report.w_tilde if res.report is not None else None,
        "aborted": aborted,
        "data": ds.provenance,
    }


def cmd_fit(args):
    cfg = _config_from_args(args)
    ds = load_dataset(args.data, args.truth)
    base = cfg.base_spec(ds)
    policy = cfg.policy(ds)
    aborted = False
    try:
        res = fit(base, ds, cfg.objective, policy, learning_rate=cfg.learning_rate, steps=cfg.steps,
                  fd_step=cfg.fd_step, summary_mode=cfg.summary, delta=cfg.delta)
    except OptimizationAborted as exc:
        if exc.result is None:
            raise
        res, aborted = exc.result, True
        print(f"optimisation aborted: {exc}", file=sys.stderr)
    spec = res.theta.to_spec(base)
    trace, mean, _, sd_y = _smoothed_predictive(spec, ds, policy)
    metrics = compute_metrics(_reference(ds), mean, sd_y, trace.w, spec.sigma)
    _dump_json(_result_doc(cfg, spec, res, trace, metrics, ds, aborted), args.output)
    return EXIT_NUMERICAL if aborted else EXIT_OK


def _read_queries(path, d_s):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError("empty query file", 1)
    header = [h.strip() for h in rows[0]]
    expected = ["t"] + [f"s{i + 1}" for i in range(d_s)]
    if header != expected:
        raise GridMismatch(f"query header {header} does not match the data's {expected}")
    out = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(expected):
            raise GridMismatch(f"line {i}: expected {len(expected)} fields")
        try:
            out.append([float(v) for v in r])
        except ValueError:
            raise ParseError("non-numeric query value", i) from None
    return np.array(out, dtype=float).reshape(-1, len(expected))


def _fmt(x):
    return "" if not np.isfinite(x) else repr(float(x))


def cmd_predict(args):
    cfg = _config_from_args(args)
    ds = load_dataset(args.data)
    spec, policy = _resolve_model(args, cfg, ds)
    if not args.filtered:
        trace, mean, sd_f, sd_y = _smoothed_predictive(spec, ds, policy)
    else:
        trace, _ = filter_smooth(spec, ds.times, ds.grid, ds.y, policy, ds.observed)
        mean, var_f = trace.filtered_marginals()
        sd_f, sd_y = np.sqrt(var_f), np.sqrt(var_f + spec.noise_variance)
    d = ds.d_s
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"s{i + 1}" for i in range(d)] + ["mean", "sd", "y_sd", "weight", "kind"])
    for k, t in enumerate(ds.times):
        for j in range(ds.n_s):
            loc = [] if d == 0 else [_fmt(v) for v in ds.grid[j]]
            w.writerow([_fmt(t)] + loc + [_fmt(mean[k, j]), _fmt(sd_f[k, j]), _fmt(sd_y[k, j]),
                                          _fmt(trace.w[k, j]), "fit"])
    queries = []
    if args.horizon:
        dt = float(ds.times[-1] - ds.times[-2]) if ds.n_t > 1 else 1.0
        for h in range(1, args.horizon + 1):
            t = ds.times[-1] + h * dt
            for j in range(ds.n_s):
                queries.append([t] + ([] if d == 0 else list(ds.grid[j])))
    if args.query:
        queries.extend(_read_queries(args.query, d).tolist())
    if queries:
        q = np.array(queries, dtype=float)
        pred = predict_at(spec, ds.times, ds.grid, ds.y, q, policy, ds.observed, smoothed=not args.filtered)
        for row, mu, sd in zip(q, pred.mean, pred.sd):
            w.writerow([_fmt(v) for v in row] + [_fmt(mu), _fmt(sd), _fmt(np.sqrt(sd * sd + spec.noise_variance)),
                                                 "", "query"])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def read_predictions(path, ds: Dataset):
    """Mean, y-sd and weight arrays from a ``predict`` CSV (fitted rows only)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    d = ds.d_s
    mean = np.full(ds.y.shape, np.nan)
    sd_y = np.full(ds.y.shape, np.nan)
    wts = np.full(ds.y.shape, np.nan)
    t_pos = {t: k for k, t in enumerate(ds.times)}
    s_pos = {(): 0} if d == 0 else {tuple(s): j for j, s in enumerate(ds.grid)}
    for i, r in enumerate(rows, start=2):
        if r.get("kind") != "fit":
            continue
        try:
            t = float(r["t"])
            s = tuple(float(r[f"s{a + 1}"]) for a in range(d))
            k, j = t_pos[t], s_pos[s]
        except (KeyError, ValueError):
            raise GridMismatch(f"line {i}: prediction row does not match the dataset") from None
        mean[k, j] = float(r["mean"])
        sd_y[k, j] = float(r["y_sd"])
        wts[k, j] = float(r["weight"]) if r["weight"] else np.nan
    return mean, sd_y, wts


def cmd_diagnose(args):
    cfg = _config_from_args(args)
    ds = load_dataset(args.data, args.truth)
    spec, policy = _resolve_model(args, cfg, ds)
    if args.predictions:
        mean, sd_y, wts = read_predictions(args.predictions, ds)
    else:
        trace, mean, _, sd_y = _smoothed_predictive(spec, ds, policy)
        wts = trace.w
    metrics = compute_metrics(_reference(ds), mean, sd_y, wts, spec.sigma)

    if args.site:
        m, j = (int(v) for v in _float_list(args.site, "--site"))
    else:
        m, j = ds.n_t // 2, 0
    mags = _float_list(args.magnitudes, "--magnitudes") if args.magnitudes else [0.0] + [10.0**p for p in range(7)]
    mags = np.array(sorted(set(mags) | {0.0})) * spec.sigma
    pif_method = policy if cfg.method == "rcgp-fixed" else cfg.method
    curve = pif_curve(pif_method, spec, ds.times, ds.grid, ds.y, (m, j), mags, ds.observed)
    lines = ["magnitude,magnitude_over_sigma,pif"]
    lines += [f"{_fmt(a)},{_fmt(a / spec.sigma)},{_fmt(v)}" for a, v in zip(curve.magnitudes, curve.values)]
    _emit("\n".join(lines) + "\n", args.output)
    report = {
        "schema_version": SCHEMA_VERSION, "command": "diagnose", "method": cfg.method,
        "metrics": metrics, "pif": {"site": [m, j], "magnitudes": curve.magnitudes, "values": curve.values,
                                     "plateau": curve.plateau},
    }
    if args.report:
        _dump_json(report, args.report)
    else:
        print(f"plateau: {curve.plateau}  rmse: {metrics['rmse']:.4f}  ewr: {metrics['ewr']:.4f}",
              file=sys.stderr)
    return EXIT_OK


def cmd_bench(args):
    sizes = tuple(int(v) for v in _float_list(args.sizes, "--sizes"))
    if len(sizes) < 2 or min(sizes) < 2:
        raise UsageError("--sizes needs at least two sizes >= 2")
    rows, slopes, ratio = bench_mod.scaling(sizes, args.n_s, args.reps)
    _emit(bench_mod.rows_to_csv(rows), args.output)
    report = {"schema_version": SCHEMA_VERSION, "command": "bench", "backend": bench_mod.backend_name(),
              "n_s": args.n_s, "reps": args.reps, "slopes": slopes, "ratio_st_rcgp_over_stgp": ratio,
              "rows": [dict(method=r.method, n_t=r.n_t, best=r.best, mean=r.mean, std=r.std) for r in rows]}
    if args.report:
        _dump_json(report, args.report)
    print(f"slopes: {slopes}  st-rcgp/stgp: {ratio:.3f}", file=sys.stderr)
    return EXIT_OK


# parser ---------------------------------------------------------------------------


def _add_model_flags(p, with_optim):
    p.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--temporal-kernel", dest="temporal_kernel")
    p.add_argument("--spatial-kernel", dest="spatial_kernel")
    p.add_argument("--eps", type=float, help="outlier fraction for rcgp-fixed's shrinkage quantile")
    if with_optim:
        p.add_argument("--objective", choices=OBJECTIVES)
        p.add_argument("--lr", dest="learning_rate", type=float)
        p.add_argument("--steps", type=int)
        p.add_argument("--fd-step", dest="fd_step", type=float)
        p.add_argument("--summary", choices=SUMMARY_MODES)
        p.add_argument("--delta", type=float)
    else:
        p.add_argument("--result", help="fit result JSON supplying kernel and parameters")
        for n in PARAM_NAMES:
            p.add_argument("--" + n.replace("_", "-"), dest=n, type=float)


def build_parser():
    ap = argparse.ArgumentParser(prog="strcgp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--preset", required=True, choices=("temporal-matern", "st-quadratic"))
    p.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV} or 0")
    p.add_argument("--grid", type=int, help="grid points per axis (st-quadratic)")
    p.add_argument("--n-t", dest="n_t", type=int)
    p.add_argument("--noise-sd", dest="noise_sd", type=float)
    p.add_argument("--rate", type=float, help="outlier rate")
    p.add_argument("--region", help="lo,hi time window for temporal outliers")
    p.add_argument("--outlier-steps", dest="outlier_steps", help="comma-separated step indices")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--truth", help="truth sidecar path (default: <output>.truth.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="optimise hyperparameters")
    p.add_argument("data")
    p.add_argument("--truth")
    _add_model_flags(p, True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior marginals at data and query points")
    p.add_argument("data")
    _add_model_flags(p, False)
    p.add_argument("--horizon", type=int, default=0, help="forecast steps beyond the last time")
    p.add_argument("--query", help="CSV of t,s1..sd query points")
    p.add_argument("--filtered", action="store_true", help="use filtering instead of smoothing marginals")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="metrics and posterior influence curve")
    p.add_argument("data")
    p.add_argument("--truth")
    _add_model_flags(p, False)
    p.add_argument("--predictions", help="predict CSV to score instead of recomputing")
    p.add_argument("--site", help="m,j step and location index to contaminate")
    p.add_argument("--magnitudes", help="comma-separated multiples of sigma")
    p.add_argument("-o", "--output", help="PIF curve CSV")
    p.add_argument("--report", help="metric report JSON")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("bench", help="filter + smoother timing against n_t")
    p.add_argument("--sizes", default=",".join(map(str, bench_mod.DEFAULT_SIZES)))
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--n-s", dest="n_s", type=int, default=1)
    p.add_argument("-o", "--output")
    p.add_argument("--report")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ParseError, DuplicatePoint, GridMismatch, json.JSONDecodeError) as exc:
        print(f"strcgp {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"strcgp {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InputError as exc:
        print(f"strcgp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

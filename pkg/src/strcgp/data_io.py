"""Synthetic generators, outlier injection and CSV input/output.

Random numbers come from numpy's counter-based Philox bit generator. Normal
draws are made with the Box-Muller transform on top of its uniform stream so
that a seed produces the same dataset on every platform and numpy version
that keeps the Philox stream stable.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .errors import DuplicatePoint, GridMismatch, InvalidInput, ParseError
from .ssm import KernelSpec, temporal_kernel

PRESETS = ("temporal_matern", "spatio_temporal_quadratic", "custom")
_PRESET_ALIASES = {
    "temporal-matern": "temporal_matern",
    "st-quadratic": "spatio_temporal_quadratic",
    "spatio-temporal-quadratic": "spatio_temporal_quadratic",
}


@dataclass(frozen=True, eq=False)
class Dataset:
    times: np.ndarray
    grid: Optional[np.ndarray]
    y: np.ndarray
    observed: np.ndarray
    outlier_mask: Optional[np.ndarray] = None
    f_true: Optional[np.ndarray] = None
    y_clean: Optional[np.ndarray] = None
    provenance: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[0] != times.shape[0]:
            raise InvalidInput("y must have one row per timestamp")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InvalidInput("timestamps must be strictly increasing")
        grid = self.grid
        if grid is not None:
            grid = np.asarray(grid, dtype=float)
            if grid.ndim == 1:
                grid = grid[:, None]
            if grid.shape[0] != y.shape[1]:
                raise GridMismatch(f"grid has {grid.shape[0]} locations, y has {y.shape[1]} columns")
        elif y.shape[1] != 1:
            raise GridMismatch("a dataset without a grid must have a single column")
        observed = np.asarray(self.observed, dtype=bool).reshape(y.shape) & np.isfinite(y)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "observed", observed)
        for name in ("outlier_mask", "f_true", "y_clean"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=bool if name == "outlier_mask" else float).reshape(y.shape)
                object.__setattr__(self, name, v)

    @property
    def n_t(self):
        return self.y.shape[0]

    @property
    def n_s(self):
        return self.y.shape[1]

    @property
    def d_s(self):
        return 0 if self.grid is None else self.grid.shape[1]

    def clean(self) -> "Dataset":
        """The same dataset with outliers replaced by their uncontaminated values."""
        if self.y_clean is None:
            raise InvalidInput("dataset carries no clean copy")
        return replace(self, y=self.y_clean.copy(), outlier_mask=np.zeros_like(self.observed),
                       observed=self.observed.copy(), provenance=self.provenance + " (clean)")


@dataclass(frozen=True)
class Contamination:
    """Outlier rule.

    ``rate`` is the fraction of points replaced (exact count for the temporal
    preset, per-point probability for the spatio-temporal one); ``None`` picks
    the preset default (0.05 and 0.1 respectively). ``region`` is
    an optional ``(lo, hi)`` time window restricting the temporal outliers;
    ``steps`` optionally restricts spatio-temporal outliers to given steps.
    """

    rate: Optional[float] = None
    region: Optional[Tuple[float, float]] = None
    steps: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.rate is not None and not 0.0 <= self.rate <= 1.0:
            raise InvalidInput("contamination rate must lie in [0, 1]")


@dataclass(frozen=True)
class GeneratorConfig:
    preset: str = "temporal_matern"
    seed: int = 0
    noise_sd: Optional[float] = None
    n_t: Optional[int] = None
    grid_size: int = 25
    contamination: Contamination = field(default_factory=Contamination)
    lengthscale: float = 0.1
    amplitude_sq: float = 2.0

    def __post_init__(self):
        preset = _PRESET_ALIASES.get(self.preset, self.preset)
        if preset not in PRESETS:
            raise InvalidInput(f"unknown preset {self.preset!r}")
        object.__setattr__(self, "preset", preset)
        if self.grid_size < 2:
            raise InvalidInput("grid_size must be at least 2")
        if self.noise_sd is not None and not self.noise_sd > 0:
            raise InvalidInput("noise_sd must be positive")


# random numbers ----------------------------------------------------------------


class Rng:
    """Philox uniforms and Box-Muller normals."""

    def __init__(self, seed):
        self._gen = np.random.Generator(np.random.Philox(int(seed)))

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size):
        n = int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # in (0, 1]
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return z.reshape(size)

    def choice(self, n, k):
        """``k`` distinct indices out of ``range(n)``."""
        return np.sort(np.argsort(self._gen.random(n), kind="stable")[:k])


# generators -------------------------------------------------------------------


def gen_temporal(config: GeneratorConfig = GeneratorConfig()) -> Dataset:
    """Matern-3/2 sample path on ``[0, 1]`` with replacement outliers.

    Defaults: 200 points, lengthscale 0.1, amplitude^2 2, noise variance 0.25
    and 10 outliers ``|N(5, 1)|``. The sample path is centred.
    """
    rng = Rng(config.seed)
    n_t = config.n_t or 200
    noise_sd = config.noise_sd if config.noise_sd is not None else 0.5
    times = np.linspace(0.0, 1.0, n_t)
    spec = KernelSpec("matern32", config.lengthscale, np.sqrt(config.amplitude_sq))
    K = temporal_kernel(spec, times[:, None], times[None, :])
    L = np.linalg.cholesky(K + 1e-10 * config.amplitude_sq * np.eye(n_t))
    f = L @ rng.normal(n_t)
    f = f - f.mean()
    y_clean = f + noise_sd * rng.normal(n_t)

    cont = config.contamination
    candidates = np.arange(n_t)
    if cont.region is not None:
        lo, hi = cont.region
        candidates = candidates[(times >= lo) & (times <= hi)]
    rate = 0.05 if cont.rate is None else cont.rate
    n_out = int(round(rate * n_t))
    if n_out > candidates.size:
        raise InvalidInput("contamination region holds fewer points than requested outliers")
    idx = candidates[rng.choice(candidates.size, n_out)]
    values = np.abs(5.0 + rng.normal(n_out))
    y = y_clean.copy()
    y[idx] = values
    mask = np.zeros(n_t, dtype=bool)
    mask[idx] = True
    return Dataset(times, None, y[:, None], np.ones((n_t, 1), bool), mask[:, None], f[:, None],
                   y_clean[:, None], f"gen_temporal(seed={config.seed})")


def quadratic_field(t, s):
    """``sin(2 pi t) s1^2 + cos(2 pi t) s2^2`` for times ``t`` and rows ``s``."""
    t = np.asarray(t, dtype=float)[:, None]
    s = np.atleast_2d(np.asarray(s, dtype=float))
    return np.sin(2 * np.pi * t) * s[None, :, 0] ** 2 + np.cos(2 * np.pi * t) * s[None, :, 1] ** 2


def square_grid(size, lo=-1.0, hi=1.0):
    g = np.linspace(lo, hi, size)
    s1, s2 = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([s1.ravel(), s2.ravel()])


def gen_spatiotemporal(config: GeneratorConfig = GeneratorConfig("spatio_temporal_quadratic")) -> Dataset:
    """Quadratic field on a square grid over ``[-1, 1]^2`` with half-plane outliers.

    Defaults: 25 x 25 grid, 10 steps on ``[0.2, 0.8]``, noise sd 0.2. A point
    with ``s1 < 0`` is replaced with probability ``rate`` (default 0.1) by a draw
    from ``U([-8, -6] u [6, 8])``.
    """
    rng = Rng(config.seed)
    n_t = config.n_t or 10
    noise_sd = config.noise_sd if config.noise_sd is not None else 0.2
    times = np.linspace(0.2, 0.8, n_t)
    grid = square_grid(config.grid_size)
    f = quadratic_field(times, grid)
    y_clean = f + noise_sd * rng.normal(f.shape)

    cont = config.contamination
    rate = 0.1 if cont.rate is None else cont.rate
    u = rng.uniform(f.shape)
    mask = (u < rate) & (grid[None, :, 0] < 0)
    if cont.steps is not None:
        allowed = np.zeros(n_t, dtype=bool)
        allowed[list(cont.steps)] = True
        mask &= allowed[:, None]
    mag = 6.0 + 2.0 * rng.uniform(f.shape)
    sign = np.where(rng.uniform(f.shape) < 0.5, -1.0, 1.0)
    y = np.where(mask, sign * mag, y_clean)
    return Dataset(times, grid, y, np.ones(f.shape, bool), mask, f, y_clean,
                   f"gen_spatiotemporal(seed={config.seed}, grid={config.grid_size})")


def generate(config: GeneratorConfig) -> Dataset:
    if config.preset == "temporal_matern":
        return gen_temporal(config)
    if config.preset == "spatio_temporal_quadratic":
        return gen_spatiotemporal(config)
    raise InvalidInput("the custom preset has no built-in generator")


# CSV ------------------------------------------------------------------------------


def _fmt(x):
    return "" if not np.isfinite(x) else repr(float(x))


def write_csv(dataset: Dataset, path):
    """Write ``t,s1..sd,y`` rows (time-major); missing values are empty fields."""
    d = dataset.d_s
    header = ["t"] + [f"s{i + 1}" for i in range(d)] + ["y"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k, t in enumerate(dataset.times):
        for j in range(dataset.n_s):
            yv = dataset.y[k, j] if dataset.observed[k, j] else np.nan
            loc = [] if d == 0 else [_fmt(v) for v in dataset.grid[j]]
            w.writerow([_fmt(t)] + loc + [_fmt(yv)])
    _write_text(path, buf.getvalue())


def write_truth_csv(dataset: Dataset, path):
    """Sidecar with the latent function and outlier flags per ``(t, s)``."""
    if dataset.f_true is None:
        raise InvalidInput("dataset has no ground truth")
    d = dataset.d_s
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"s{i + 1}" for i in range(d)] + ["f", "y_clean", "outlier"])
    out = dataset.outlier_mask if dataset.outlier_mask is not None else np.zeros_like(dataset.observed)
    yc = dataset.y_clean if dataset.y_clean is not None else np.full(dataset.y.shape, np.nan)
    for k, t in enumerate(dataset.times):
        for j in range(dataset.n_s):
            loc = [] if d == 0 else [_fmt(v) for v in dataset.grid[j]]
            w.writerow([_fmt(t)] + loc + [_fmt(dataset.f_true[k, j]), _fmt(yc[k, j]), int(out[k, j])])
    _write_text(path, buf.getvalue())


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _read_rows(path, required_last):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "t" or header[-1] not in required_last:
        raise ParseError(f"header must be t,s1,...,sd,{required_last[0]}", 1)
    return header, rows[1:]


def _float(text, line, allow_empty=False):
    text = text.strip()
    if text == "":
        if allow_empty:
            return np.nan
        raise ParseError("missing value", line)
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number", line) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", line)
    return v


def read_csv(path) -> Dataset:
    """Read a ``t,s1..sd,y`` file into a Dataset on a regular grid."""
    header, rows = _read_rows(path, ("y",))
    d = len(header) - 2
    if header[1:-1] != [f"s{i + 1}" for i in range(d)]:
        raise ParseError("location columns must be named s1, s2, ...", 1)
    recs = []
    for i, row in enumerate(rows, start=2):
        if not row or all(c.strip() == "" for c in row):
            continue
        if len(row) != d + 2:
            raise ParseError(f"expected {d + 2} fields, got {len(row)}", i)
        t = _float(row[0], i)
        s = tuple(_float(c, i) for c in row[1:-1])
        recs.append((t, s, _float(row[-1], i, allow_empty=True), i))
    if not recs:
        raise ParseError("no data rows", 2)
    times = np.unique([r[0] for r in recs])
    locs = sorted({r[1] for r in recs})
    if d == 0:
        locs = [()]
    t_pos = {t: k for k, t in enumerate(times)}
    s_pos = {s: j for j, s in enumerate(locs)}
    y = np.full((times.size, len(locs)), np.nan)
    seen = np.zeros(y.shape, dtype=bool)
    for t, s, v, line in recs:
        k, j = t_pos[t], s_pos[s]
        if seen[k, j]:
            raise DuplicatePoint(f"line {line}: duplicate point t={t!r}, s={s}")
        seen[k, j] = True
        y[k, j] = v
    if not seen.all():
        k, j = np.argwhere(~seen)[0]
        raise GridMismatch(f"location {locs[j]} missing at t={times[k]!r}; every timestamp needs the full grid")
    grid = None if d == 0 else np.array(locs, dtype=float)
    return Dataset(times, grid, y, np.isfinite(y), provenance=os.fspath(path))


def read_truth_csv(path, dataset: Dataset):
    """Attach a truth sidecar (latent ``f``, clean ``y`` and outlier flags)."""
    header, rows = _read_rows(path, ("outlier",))
    d = dataset.d_s
    if len(header) != d + 4:
        raise ParseError("truth header must be t,s1..sd,f,y_clean,outlier", 1)
    t_pos = {t: k for k, t in enumerate(dataset.times)}
    s_pos = {(): 0} if d == 0 else {tuple(s): j for j, s in enumerate(dataset.grid)}
    f = np.full(dataset.y.shape, np.nan)
    yc = np.full(dataset.y.shape, np.nan)
    out = np.zeros(dataset.y.shape, dtype=bool)
    for i, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != d + 4:
            raise ParseError(f"expected {d + 4} fields, got {len(row)}", i)
        t = _float(row[0], i)
        s = tuple(_float(c, i) for c in row[1:1 + d])
        if t not in t_pos or s not in s_pos:
            raise GridMismatch(f"line {i}: point not present in the dataset")
        k, j = t_pos[t], s_pos[s]
        f[k, j] = _float(row[1 + d], i)
        yc[k, j] = _float(row[2 + d], i, allow_empty=True)
        out[k, j] = row[3 + d].strip() in ("1", "true", "True")
    return replace(dataset, f_true=f, y_clean=yc if np.isfinite(yc).any() else None, outlier_mask=out)


def load_dataset(path, truth_path=None) -> Dataset:
    ds = read_csv(path)
    return ds if truth_path is None else read_truth_csv(truth_path, ds)

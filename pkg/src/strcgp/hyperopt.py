"""Hyperparameter objectives and a finite-difference Adam optimiser.

Parameters are optimised on the log scale. Two objectives are provided: the
negative sum of one-step-ahead log predictive densities (``phi``) and its
weighted counterpart (``phi_gb``) where each step is multiplied by a summary of
the observation weights the filter produced at that step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInput, InvalidStart, NumericalError, OptimizationAborted
from .filtering import FilterTrace, run_filter
from .ssm import KernelSpec, assemble_model, transitions_for_times
from .weights import WeightPolicy, summary_weights

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8
PARAM_NAMES = ("lengthscale_t", "amplitude_t", "lengthscale_s", "amplitude_s", "noise_variance")


@dataclass(frozen=True)
class ThetaVector:
    """Named positive hyperparameters stored as logs, with a fixed mask."""

    names: tuple
    log_values: np.ndarray
    fixed: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.log_values, dtype=float).copy()
        fx = np.asarray(self.fixed, dtype=bool).copy()
        if lv.shape != (len(self.names),) or fx.shape != lv.shape:
            raise InvalidInput("names, log_values and fixed must have equal length")
        if not np.all(np.isfinite(lv)):
            raise InvalidInput("log-parameters must be finite")
        if "noise_variance" in self.names:
            i = self.names.index("noise_variance")
            lv[i] = max(lv[i], np.log(NOISE_FLOOR))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "log_values", lv)
        object.__setattr__(self, "fixed", fx)

    @classmethod
    def from_spec(cls, spec: KernelSpec, fixed: Sequence[str] = ()):
        names = [n for n in PARAM_NAMES if _applies(spec, n)]
        unknown = set(fixed) - set(PARAM_NAMES)
        if unknown:
            raise InvalidInput(f"unknown parameter(s) {sorted(unknown)}")
        vals = np.log([getattr(spec, n) for n in names])
        return cls(tuple(names), vals, np.array([n in fixed for n in names], dtype=bool))

    @property
    def values(self):
        return dict(zip(self.names, np.exp(self.log_values)))

    @property
    def free(self):
        return self.log_values[~self.fixed].copy()

    @property
    def free_names(self):
        return tuple(n for n, f in zip(self.names, self.fixed) if not f)

    def with_free(self, free_log):
        lv = self.log_values.copy()
        lv[~self.fixed] = free_log
        return ThetaVector(self.names, lv, self.fixed)

    def to_spec(self, base: KernelSpec) -> KernelSpec:
        return base.with_params(**{k: float(v) for k, v in self.values.items()})


def _applies(spec, name):
    if name == "lengthscale_t":
        return spec.temporal_family != "wiener"
    if name in ("lengthscale_s", "amplitude_s"):
        return spec.spatial_family is not None
    return True


@dataclass
class ObjectiveReport:
    value: float
    logpdf: np.ndarray
    w_tilde: np.ndarray
    gradient: Optional[np.ndarray] = None
    n_evals: int = 1
    trace: Optional[FilterTrace] = field(default=None, repr=False)


def _data_arrays(data):
    y = np.asarray(data.y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    observed = getattr(data, "observed", None)
    return np.asarray(data.times, dtype=float), getattr(data, "grid", None), y, observed


def _evaluate(theta: ThetaVector, base: KernelSpec, data, policy):
    times, grid, y, observed = _data_arrays(data)
    spec = theta.to_spec(base)
    model = assemble_model(spec, grid)
    trans = transitions_for_times(model, times)
    return run_filter(model, times, y, policy, observed, trans)


def phi(theta: ThetaVector, base: KernelSpec, data, policy: Optional[WeightPolicy] = None) -> ObjectiveReport:
    """Negative sum of one-step-ahead log predictive densities."""
    policy = policy if policy is not None else WeightPolicy.constant()
    tr = _evaluate(theta, base, data, policy)
    return ObjectiveReport(float(-tr.logpdf.sum()), tr.logpdf, np.ones(len(tr)), trace=tr)


def phi_gb(theta: ThetaVector, base: KernelSpec, data, policy: Optional[WeightPolicy] = None,
           summary_mode="quantile", delta=0.05, w_tilde=None) -> ObjectiveReport:
    """Weighted objective ``-sum_k w~_k log p(y_k | y_{1:k-1})``.

    With one location ``w~_k`` is the raw weight; otherwise it is the per-step
    summary of the weight vector normalised over steps. Passing ``w_tilde``
    uses those step weights instead of the ones produced at ``theta``.
    """
    policy = policy if policy is not None else WeightPolicy.adaptive()
    tr = _evaluate(theta, base, data, policy)
    wt = summary_weights(tr.w, summary_mode, delta) if w_tilde is None else np.asarray(w_tilde, dtype=float)
    return ObjectiveReport(float(-(wt * tr.logpdf).sum()), tr.logpdf, wt, trace=tr)


class Objective:
    """An objective bound to data and settings, callable on a ThetaVector.

    ``frozen(report)`` returns the same objective with the step weights held
    at ``report.w_tilde``; the optimiser differentiates that version so the
    weights act as constants within a gradient step, while every iterate
    still recomputes them at its own parameters.
    """

    def __init__(self, kind, base: KernelSpec, data, policy=None, summary_mode="quantile", delta=0.05):
        if kind in ("phi", "standard"):
            kind = "phi"
        elif kind in ("phi_gb", "robust"):
            kind = "phi_gb"
        else:
            raise InvalidInput(f"unknown objective {kind!r}")
        self.kind, self.base, self.data, self.policy = kind, base, data, policy
        self.summary_mode, self.delta = summary_mode, delta

    def __call__(self, theta: ThetaVector) -> ObjectiveReport:
        if self.kind == "phi":
            return phi(theta, self.base, self.data, self.policy)
        return phi_gb(theta, self.base, self.data, self.policy, self.summary_mode, self.delta)

    def score(self, report: ObjectiveReport) -> float:
        """Value used to rank iterates.

        For the weighted objective this is the weighted mean
        ``value / sum(w~)``: raw temporal weights scale with the noise level,
        so unnormalised values at different parameters are not comparable.
        """
        if self.kind == "phi":
            return report.value
        total = float(np.sum(report.w_tilde))
        return report.value / total if total > 0 else np.nan

    def frozen(self, report: ObjectiveReport):
        if self.kind == "phi":
            return self
        wt = report.w_tilde.copy()
        return lambda th: phi_gb(th, self.base, self.data, self.policy, w_tilde=wt)


def make_objective(kind, base: KernelSpec, data, policy=None, summary_mode="quantile", delta=0.05):
    """Bind data and settings; the result maps a ThetaVector to an ObjectiveReport."""
    return Objective(kind, base, data, policy, summary_mode, delta)


# optimisation ----------------------------------------------------------------


def fd_gradient(f: Callable[[np.ndarray], float], x, h=1e-4, order=2):
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        if order == 2:
            g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
        elif order == 4:
            g[i] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12.0 * h)
        else:
            raise InvalidInput("order must be 2 or 4")
    return g


@dataclass
class FitResult:
    """Outcome of :func:`optimize`.

    ``history`` holds the objective value of every accepted iterate and
    ``best_history`` the running minimum of the ranking score.
    """

    theta: ThetaVector
    value: float
    history: np.ndarray
    best_history: np.ndarray
    thetas: list
    report: Optional[ObjectiveReport]
    n_evals: int
    rejected_steps: int = 0

    @property
    def trace(self):
        return None if self.report is None else self.report.trace


def _safe_value(objective, theta):
    try:
        rep = objective(theta)
    except NumericalError as exc:
        log.debug("objective failed at %s: %s", theta.values, exc)
        return np.nan, None
    return (rep.value if np.isfinite(rep.value) else np.nan), rep


def optimize(objective: Callable[[ThetaVector], ObjectiveReport], theta0: ThetaVector,
             learning_rate=0.3, steps=70, fd_step=1e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> FitResult:
    """Adam on the free log-parameters with central finite-difference gradients.

    Objectives exposing ``frozen(report)`` (see :class:`Objective`) are
    differentiated with their step weights held at the current iterate.
    The best iterate is tracked (ranked by ``objective.score(report)`` when
    available, else by the value) and its parameters returned. If the
    objective becomes non-finite the step is rejected and both the finite
    difference step and learning rate are halved; a second failure aborts with
    :class:`~strcgp.errors.OptimizationAborted` carrying the partial result.
    """
    if steps < 0 or learning_rate < 0 or not fd_step > 0:
        raise InvalidInput("steps and learning_rate must be >= 0 and fd_step > 0")
    n_evals = 0
    value0, rep0 = _safe_value(objective, theta0)
    n_evals += 1
    if not np.isfinite(value0):
        raise InvalidStart("objective is not finite at the initial parameters")

    score_fn = getattr(objective, "score", lambda r: r.value)
    x = theta0.free
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    theta, value, rep = theta0, value0, rep0
    best = (theta0, value0, rep0, score_fn(rep0))
    history, best_hist, thetas = [value0], [best[3]], [theta0]
    failures = 0
    lr, h = float(learning_rate), float(fd_step)

    def partial():
        return FitResult(best[0], best[1], np.array(history), np.array(best_hist), thetas, best[2],
                         n_evals, failures)

    freeze = getattr(objective, "frozen", None)

    for it in range(1, steps + 1):
        if x.size == 0:
            break
        grad_obj = freeze(rep) if freeze is not None else objective

        def f_free(z):
            return _safe_value(grad_obj, theta0.with_free(z))[0]

        g = fd_gradient(f_free, x, h)
        n_evals += 2 * x.size
        ok = np.all(np.isfinite(g))
        if ok:
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            mhat = m / (1 - beta1**it)
            vhat = v / (1 - beta2**it)
            x_new = x - lr * mhat / (np.sqrt(vhat) + eps)
            th_new = theta0.with_free(x_new)
            val_new, rep_new = _safe_value(objective, th_new)
            n_evals += 1
            ok = np.isfinite(val_new)
        if not ok:
            failures += 1
            if failures > 1:
                raise OptimizationAborted(f"objective not finite at iteration {it}", result=partial())
            log.warning("non-finite objective at iteration %d; halving step sizes", it)
            h *= 0.5
            lr *= 0.5
            continue
        x, theta, value, rep = x_new, th_new, val_new, rep_new
        history.append(value)
        thetas.append(theta)
        sc = score_fn(rep)
        if sc < best[3]:
            best = (theta, value, rep, sc)
        best_hist.append(best[3])
    return partial()


def initial_theta(base: KernelSpec, data, fixed: Sequence[str] = ()) -> ThetaVector:
    """Data-driven starting point.

    The temporal lengthscale starts at a quarter of the time span, spatial
    lengthscale at half the largest grid extent, the amplitude at a robust
    (MAD-based) scale of ``y`` and the noise variance at a quarter of that
    scale squared.
    """
    times, grid, y, observed = _data_arrays(data)
    vals = y[np.isfinite(y)] if observed is None else y[np.asarray(observed, bool) & np.isfinite(y)]
    if vals.size == 0:
        raise InvalidInput("no observed data")
    scale = 1.4826 * np.median(np.abs(vals - np.median(vals)))
    if not scale > 0:
        scale = max(float(np.std(vals)), 1.0)
    span = float(times[-1] - times[0]) if times.size > 1 else 1.0
    params = dict(amplitude_t=scale, noise_variance=max((0.5 * scale) ** 2, NOISE_FLOOR))
    if base.temporal_family != "wiener":
        params["lengthscale_t"] = span / 4.0 if span > 0 else 1.0
    if base.spatial_family is not None and grid is not None:
        g = np.asarray(grid, dtype=float).reshape(np.shape(grid)[0], -1)
        ext = float(np.max(np.ptp(g, axis=0))) if g.shape[0] > 1 else 1.0
        params["lengthscale_s"] = ext / 2.0 if ext > 0 else 1.0
        params["amplitude_s"] = 1.0
    return ThetaVector.from_spec(base.with_params(**params), fixed)


def fit(base: KernelSpec, data, objective="robust", policy=None, theta0=None, fixed=None,
        learning_rate=0.3, steps=70, fd_step=1e-4, summary_mode="quantile", delta=0.05) -> FitResult:
    """Convenience wrapper: build the objective, pick a start and optimise.

    When the model has a spatial kernel its amplitude is held fixed by default
    since only the product of the two amplitudes is identifiable.
    """
    if fixed is None:
        fixed = ("amplitude_s",) if base.spatial_family is not None else ()
    if theta0 is None:
        theta0 = initial_theta(base, data, fixed)
    obj = make_objective(objective, base, data, policy, summary_mode, delta)
    return optimize(obj, theta0, learning_rate, steps, fd_step)

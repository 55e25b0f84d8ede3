"""Evaluation metrics and the posterior influence function."""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import InvalidInput, SingularMatrix
from .filtering import FilterTrace, filter_smooth
from .ssm import KernelSpec
from .weights import WeightPolicy

LOG_2PI = np.log(2.0 * np.pi)
DEFAULT_QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    nlpd: float
    ewr: float
    coverage: list

    def as_dict(self):
        return {"rmse": self.rmse, "nlpd": self.nlpd, "ewr": self.ewr,
                "coverage": [[q, c] for q, c in self.coverage]}


def _paired(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise InvalidInput(f"length mismatch: {a.size} vs {b.size}")
    keep = np.isfinite(a) & np.isfinite(b)
    if not keep.any():
        raise InvalidInput("no finite pairs to compare")
    return a, b, keep


def rmse(y_true, y_hat):
    """Root mean squared error over entries where both arrays are finite."""
    a, b, keep = _paired(y_true, y_hat)
    return float(np.sqrt(np.mean((a[keep] - b[keep]) ** 2)))


def nlpd(y_true, mean, var):
    """Mean negative log density of ``y_true`` under independent Gaussians."""
    y, mu, keep = _paired(y_true, mean)
    var = np.broadcast_to(np.asarray(var, dtype=float).ravel(), y.shape) if np.ndim(var) else np.full(y.shape, float(var))
    if np.any(~(var[keep] > 0)):
        raise InvalidInput("predictive variances must be positive")
    r = y[keep] - mu[keep]
    return float(np.mean(0.5 * (LOG_2PI + np.log(var[keep]) + r * r / var[keep])))


def ewr(trace_or_weights, sigma=None):
    """Mean of ``w / (sigma / sqrt(2))`` over observed entries."""
    if isinstance(trace_or_weights, FilterTrace):
        W = trace_or_weights.w
        sigma = trace_or_weights.sigma if sigma is None else sigma
    else:
        W = np.asarray(trace_or_weights, dtype=float)
        if sigma is None:
            raise InvalidInput("sigma is required when passing raw weights")
    W = W[np.isfinite(W)]
    if W.size == 0:
        raise InvalidInput("no weights to average")
    return float(np.mean(W) / (sigma / np.sqrt(2.0)))


def coverage(y_true, mean, sd, quantiles: Sequence[float] = DEFAULT_QUANTILES):
    """Empirical coverage of central intervals ``mean +- z_q sd`` for each ``q``."""
    y, mu, keep = _paired(y_true, mean)
    sd = np.broadcast_to(np.asarray(sd, dtype=float).ravel(), y.shape) if np.ndim(sd) else np.full(y.shape, float(sd))
    keep = keep & np.isfinite(sd)
    if np.any(~(sd[keep] > 0)):
        raise InvalidInput("standard deviations must be positive")
    z_abs = np.abs(y[keep] - mu[keep]) / sd[keep]
    out = []
    for q in quantiles:
        if not 0.0 < q < 1.0:
            raise InvalidInput("nominal levels must lie in (0, 1)")
        z = NormalDist().inv_cdf(0.5 + 0.5 * q)
        out.append((float(q), float(np.mean(z_abs <= z))))
    return out


def kl_gaussian(p, q):
    """``KL(N(mu_p, S_p) || N(mu_q, S_q))`` in closed form."""
    mp, Sp = (np.atleast_1d(np.asarray(a, dtype=float)) for a in p)
    mq, Sq = (np.atleast_1d(np.asarray(a, dtype=float)) for a in q)
    Sp = np.atleast_2d(Sp)
    Sq = np.atleast_2d(Sq)
    d = mp.size
    if Sp.shape != (d, d) or Sq.shape != (d, d) or mq.size != d:
        raise InvalidInput("dimension mismatch")
    try:
        Lp = np.linalg.cholesky(Sp)
        Lq = np.linalg.cholesky(Sq)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("covariances must be positive definite") from exc
    A = np.linalg.solve(Lq, Lp)
    b = np.linalg.solve(Lq, mq - mp)
    logdet = 2.0 * (np.log(np.diag(Lq)).sum() - np.log(np.diag(Lp)).sum())
    return float(max(0.5 * (np.sum(A * A) + b @ b - d + logdet), 0.0))


def kl_marginal_sum(mean_p, var_p, mean_q, var_q):
    """Sum of scalar Gaussian KLs over matching entries."""
    mean_p, var_p, mean_q, var_q = (np.asarray(a, dtype=float) for a in (mean_p, var_p, mean_q, var_q))
    if np.any(~(var_p > 0)) or np.any(~(var_q > 0)):
        raise SingularMatrix("marginal variances must be positive")
    r = var_p / var_q
    kl = 0.5 * (r + (mean_q - mean_p) ** 2 / var_q - 1.0 - np.log(r))
    return float(np.sum(np.maximum(kl, 0.0)))


@dataclass(frozen=True)
class PifCurve:
    magnitudes: np.ndarray
    values: np.ndarray

    @property
    def plateau(self):
        """True when the last two values differ by less than 5%."""
        if self.values.size < 2:
            return False
        a, b = self.values[-2], self.values[-1]
        return bool(abs(b - a) <= 0.05 * max(abs(a), np.finfo(float).tiny))


METHOD_POLICIES = {
    "stgp": WeightPolicy.constant,
    "st-rcgp": WeightPolicy.adaptive,
}


def pif_curve(method, spec: KernelSpec, times, grid, y, site, magnitudes, observed=None) -> PifCurve:
    """Posterior influence of contaminating one observation.

    ``site = (m, j)`` picks the time step and location. For each magnitude the
    observation is shifted by that amount, the smoother rerun, and the KL
    divergence between clean and contaminated smoothed marginals of ``f``
    summed over all steps and locations.
    """
    if isinstance(method, WeightPolicy):
        policy = method
    elif method in METHOD_POLICIES:
        policy = METHOD_POLICIES[method]()
    else:
        raise InvalidInput(f"unknown method {method!r}")
    y = np.array(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    m, j = site
    if not (0 <= m < y.shape[0] and 0 <= j < y.shape[1]) or not np.isfinite(y[m, j]):
        raise InvalidInput(f"site {site} is not an observed entry")
    if observed is not None and not np.asarray(observed, bool)[m, j]:
        raise InvalidInput(f"site {site} is masked")
    mags = np.asarray(magnitudes, dtype=float)
    _, sm = filter_smooth(spec, times, grid, y, policy, observed)
    mu0, var0 = sm.marginals()
    vals = np.empty(mags.size)
    for i, a in enumerate(mags):
        if a == 0.0:
            vals[i] = 0.0
            continue
        yc = y.copy()
        yc[m, j] += a
        _, smc = filter_smooth(spec, times, grid, yc, policy, observed)
        mu1, var1 = smc.marginals()
        vals[i] = kl_marginal_sum(mu0, var0, mu1, var1)
    return PifCurve(mags, vals)


def metric_report(y_true, mean, var_y, trace=None, quantiles=DEFAULT_QUANTILES) -> MetricReport:
    """RMSE, NLPD, EWR and coverage for a predictive distribution of ``y``."""
    sd = np.sqrt(np.asarray(var_y, dtype=float))
    return MetricReport(
        rmse(y_true, mean),
        nlpd(y_true, mean, var_y),
        ewr(trace) if trace is not None else float("nan"),
        coverage(y_true, mean, sd, quantiles),
    )

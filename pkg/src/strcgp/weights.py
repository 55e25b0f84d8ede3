"""Observation weights for the generalised-Bayes update.

Three policies are supported:

``constant``
    ``w = beta`` everywhere. With the default ``beta = sigma / sqrt(2)`` this is
    the ordinary spatio-temporal GP.
``fixed_imq``
    IMQ weight with a centre ``gamma`` and shrinkage ``c`` that depend only on
    the datum itself (vanilla robust-conjugate GP).
``adaptive_imq``
    IMQ weight centred on the one-step-ahead predictive mean with ``c**2`` equal
    to the predictive variance, recomputed at every time step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from ._loops import imq
from .errors import InvalidInput, InvalidShrinkage

CONSTANT = "constant"
FIXED_IMQ = "fixed_imq"
ADAPTIVE_IMQ = "adaptive_imq"
KINDS = (CONSTANT, FIXED_IMQ, ADAPTIVE_IMQ)

# c^2 never drops below this fraction of sigma^2
C2_FLOOR = 1e-12

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class WeightPolicy:
    kind: str = ADAPTIVE_IMQ
    beta: Optional[float] = None
    c_fixed: Optional[ArrayLike] = None
    gamma_fixed: Optional[Union[ArrayLike, Callable]] = None
    alpha: float = -0.5

    def __post_init__(self):
        kind = str(self.kind).lower().replace("-", "_")
        if kind not in KINDS:
            raise InvalidInput(f"unknown weight policy {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.beta is not None and not self.beta > 0:
            raise InvalidInput("beta must be positive")
        if not self.alpha < 0:
            raise InvalidInput("the IMQ exponent must be negative")
        if kind == FIXED_IMQ:
            if self.c_fixed is None:
                raise InvalidShrinkage("fixed_imq needs c_fixed")
            if np.any(np.asarray(self.c_fixed, dtype=float) <= 0):
                raise InvalidShrinkage("c must be positive")

    @classmethod
    def constant(cls, beta=None):
        return cls(CONSTANT, beta=beta)

    @classmethod
    def fixed_imq(cls, gamma=0.0, c=1.0, beta=None, alpha=-0.5):
        return cls(FIXED_IMQ, beta=beta, c_fixed=c, gamma_fixed=gamma, alpha=alpha)

    @classmethod
    def adaptive(cls, alpha=-0.5):
        return cls(ADAPTIVE_IMQ, alpha=alpha)

    @classmethod
    def rcgp_heuristic(cls, y, eps=0.05):
        """Fixed IMQ centred on the data mean with ``c`` the ``1 - eps`` quantile
        of the absolute deviations from it."""
        y = np.asarray(y, dtype=float)
        y = y[np.isfinite(y)]
        if y.size == 0:
            raise InvalidInput("no finite observations")
        if not 0.0 <= eps < 1.0:
            raise InvalidInput("eps must lie in [0, 1)")
        gamma = float(np.mean(y))
        c = float(np.quantile(np.abs(y - gamma), 1.0 - eps))
        if not c > 0:
            raise InvalidShrinkage("all observations coincide; cannot set c")
        return cls.fixed_imq(gamma, c)

    def beta_for(self, sigma):
        """``beta``, defaulting to ``sigma / sqrt(2)`` for the current sigma."""
        return float(self.beta) if self.beta is not None else float(sigma) / np.sqrt(2.0)

    def fixed_arrays(self, times, grid, shape):
        """Materialise ``gamma`` and ``c`` on the data grid, shape ``(n_t, n_s)``."""
        if self.kind != FIXED_IMQ:
            z = np.zeros(shape)
            return z, np.ones(shape)
        gamma = self.gamma_fixed if self.gamma_fixed is not None else 0.0
        if callable(gamma):
            gamma = np.array(
                [[gamma(times[i], grid[j]) for j in range(shape[1])] for i in range(shape[0])],
                dtype=float,
            )
        gamma = np.broadcast_to(np.asarray(gamma, dtype=float), shape).copy()
        c = np.broadcast_to(np.asarray(self.c_fixed, dtype=float), shape).copy()
        return gamma, c


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    dlogw2_dy: np.ndarray


def imq_weight(y, gamma, c, beta, alpha=-0.5):
    """IMQ weight ``beta * (1 + (y - gamma)^2 / c^2)^alpha`` and ``d/dy log w^2``.

    Works elementwise on arrays.
    """
    c = np.asarray(c, dtype=float)
    if np.any(~(c > 0)):
        raise InvalidShrinkage("c must be positive")
    if not beta > 0:
        raise InvalidInput("beta must be positive")
    resid = np.asarray(y, dtype=float) - np.asarray(gamma, dtype=float)
    resid, c2 = np.broadcast_arrays(resid, c * c)
    if resid.ndim == 0:
        w, g = imq(float(resid), float(c2), float(beta), float(alpha))
        return float(w), float(g)
    return imq(np.ascontiguousarray(resid), np.ascontiguousarray(c2), float(beta), float(alpha))


def adaptive_weights(y_k, f_hat, S_hat_diag, sigma, alpha=-0.5) -> WeightVector:
    """Weights centred on the predictive mean with ``c^2`` = predictive variance."""
    S_hat_diag = np.asarray(S_hat_diag, dtype=float)
    if np.any(~(S_hat_diag > 0)):
        raise InvalidShrinkage("predictive variances must be positive")
    c2 = np.maximum(S_hat_diag, C2_FLOOR * sigma * sigma)
    w, g = imq_weight(np.atleast_1d(y_k), np.atleast_1d(f_hat), np.sqrt(c2), sigma / np.sqrt(2.0), alpha)
    return WeightVector(np.atleast_1d(w), np.atleast_1d(g))


SUMMARY_MODES = ("quantile", "mean", "min")


def _reduce(w, mode, delta):
    if mode == "quantile":
        return float(np.quantile(w, delta))
    if mode == "mean":
        return float(np.mean(w))
    return float(np.min(w))


def summary_weights(W, mode="quantile", delta=0.05):
    """Per-step summaries of a weight matrix ``W`` of shape ``(n_t, n_s)``.

    NaN entries (unobserved coordinates) are ignored; a step with no observed
    coordinate gets 0. With a single location the raw weights are returned.
    Otherwise each step is reduced (``delta``-quantile, mean or min) and the
    result normalised to sum to one over steps.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    if W.size == 0:
        raise InvalidInput("empty weight array")
    if mode not in SUMMARY_MODES:
        raise InvalidInput(f"unknown summary mode {mode!r}")
    if mode == "quantile" and not 0.0 < delta < 1.0:
        raise InvalidInput("delta must lie in (0, 1)")
    if W.shape[1] == 1:
        return np.nan_to_num(W[:, 0], nan=0.0)
    out = np.zeros(W.shape[0])
    for k, row in enumerate(W):
        row = row[np.isfinite(row)]
        if row.size:
            out[k] = _reduce(row, mode, delta)
    total = out.sum()
    if total <= 0:
        raise InvalidInput("all summary weights are zero")
    return out / total


def summary_weight(w_k, all_steps=None, mode="quantile", delta=0.05):
    """Summary weight of a single step.

    ``w_k`` is the step's weight vector (or :class:`WeightVector`); the
    normaliser is the same reduction summed over ``all_steps`` (an iterable of
    weight vectors, which should include ``w_k``).
    """
    if isinstance(w_k, WeightVector):
        w_k = w_k.w
    w_k = np.atleast_1d(np.asarray(w_k, dtype=float))
    w_k = w_k[np.isfinite(w_k)]
    if w_k.size == 0:
        raise InvalidInput("empty weight vector")
    if w_k.size == 1 and all_steps is None:
        return float(w_k[0])
    if mode == "quantile" and not 0.0 < delta < 1.0:
        raise InvalidInput("delta must lie in (0, 1)")
    value = _reduce(w_k, mode, delta)
    if all_steps is None:
        return value
    norm = 0.0
    for v in all_steps:
        v = v.w if isinstance(v, WeightVector) else v
        v = np.atleast_1d(np.asarray(v, dtype=float))
        v = v[np.isfinite(v)]
        if v.size:
            norm += _reduce(v, mode, delta)
    return value / norm

"""Dense O(N^3) GP and robust-conjugate GP posteriors.

These are the reference answers the state-space recursions are tested
against. Inputs are rows ``(t, s_1, ..., s_d)`` and the kernel is the product
of the temporal and spatial kernels of a :class:`~strcgp.ssm.KernelSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .linalg import psd_solve, symmetrize
from .ssm import KernelSpec, spatial_kernel, temporal_kernel


@dataclass(frozen=True)
class BatchPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self):
        return np.diag(self.cov).copy()


def space_time_inputs(times, grid=None):
    """Stack ``(t, s)`` rows in time-major order, matching ``y.ravel()``."""
    times = np.asarray(times, dtype=float).ravel()
    if grid is None:
        return times[:, None]
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    T = np.repeat(times, grid.shape[0])[:, None]
    S = np.tile(grid, (times.shape[0], 1))
    return np.hstack([T, S])


def _inputs(X, spec):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInput("inputs must be a non-empty (N, 1 + d_s) array")
    if spec.spatial_family is None and X.shape[1] != 1:
        # a temporal kernel ignores space but the rows must still agree
        X = X[:, :1]
    return X


def product_kernel(spec: KernelSpec, X1, X2, origin=None):
    """``k_t(t, t') * k_s(s, s')`` between the rows of ``X1`` and ``X2``."""
    X1 = _inputs(X1, spec)
    X2 = _inputs(X2, spec)
    Kt = temporal_kernel(spec, X1[:, :1], X2[:, :1].T, origin=origin)
    if spec.spatial_family is None:
        return Kt
    return Kt * spatial_kernel(spec, X1[:, 1:], X2[:, 1:])


def _posterior(spec, X, resid, noise_diag, queries, origin):
    X = _inputs(X, spec)
    if resid.shape != (X.shape[0],):
        raise InvalidInput(f"y has shape {resid.shape}, expected ({X.shape[0]},)")
    if spec.temporal_family == "wiener" and origin is None:
        origin = float(X[:, 0].min())
    Q = X if queries is None else _inputs(queries, spec)
    K = product_kernel(spec, X, X, origin)
    Ks = product_kernel(spec, X, Q, origin)
    Kss = product_kernel(spec, Q, Q, origin)
    G = symmetrize(K) + np.diag(noise_diag)
    sol = psd_solve(G, np.column_stack([resid, Ks]))
    mean = Ks.T @ sol[:, 0]
    cov = symmetrize(Kss - Ks.T @ sol[:, 1:])
    return BatchPosterior(mean, cov)


def batch_gp(spec: KernelSpec, X, y, queries=None, origin=None) -> BatchPosterior:
    """Zero-mean GP posterior of ``f`` at ``queries`` (default: the inputs)."""
    y = np.asarray(y, dtype=float).ravel()
    return _posterior(spec, X, y, np.full(y.shape, spec.noise_variance), queries, origin)


def batch_rcgp(spec: KernelSpec, X, y, w, dlogw2, queries=None, origin=None) -> BatchPosterior:
    """Robust-conjugate GP posterior with fixed per-datum weights.

    The data are shifted by ``sigma^2 * d/dy log w^2`` and each noise variance
    becomes ``sigma^4 / (2 w^2)``.
    """
    y = np.asarray(y, dtype=float).ravel()
    w = np.broadcast_to(np.asarray(w, dtype=float), y.shape)
    dlogw2 = np.broadcast_to(np.asarray(dlogw2, dtype=float), y.shape)
    if np.any(~(w > 0)):
        raise InvalidInput("weights must be positive")
    s2 = spec.noise_variance
    return _posterior(spec, X, y - s2 * dlogw2, s2 * s2 / (2.0 * w * w), queries, origin)

"""Kalman filtering and RTS smoothing with generalised-Bayes (weighted) updates.

The per-step maths lives in :mod:`strcgp._loops`; this module holds the public
single-step operations, the containers for a filter pass and the smoother,
and prediction at off-grid space-time points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _loops
from .errors import InvalidInput, SingularInnovation, SingularMatrix
from .ssm import KernelSpec, StateSpaceModel, Transition, assemble_model, transitions_for_times
from .weights import C2_FLOOR, WeightPolicy, WeightVector


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray
    timestamp: float = 0.0


@dataclass(frozen=True)
class PredictiveMoments:
    f_hat: np.ndarray
    S_hat: np.ndarray


def predict(state: GaussianState, trans: Transition) -> GaussianState:
    m = np.asarray(state.mean, dtype=float)
    P = np.asarray(state.cov, dtype=float)
    if trans.A.shape != (m.size, m.size) or P.shape != trans.A.shape:
        raise InvalidInput("state and transition dimensions do not match")
    m_new, P_new = _loops.predict_step(m, P, trans.A, trans.Sigma)
    return GaussianState(m_new, P_new, state.timestamp + trans.dt)


def predictive_moments(state: GaussianState, H, sigma) -> PredictiveMoments:
    if not sigma > 0:
        raise InvalidInput("sigma must be positive")
    H = np.asarray(H, dtype=float)
    S = H @ state.cov @ H.T + sigma**2 * np.eye(H.shape[0])
    return PredictiveMoments(H @ state.mean, 0.5 * (S + S.T))


def update_gb(state: GaussianState, y_k, mask, H, sigma, w: WeightVector):
    """One weighted update; returns ``(new_state, log N(y_k; f_hat, S_hat))``.

    ``mask`` flags observed coordinates (``None`` means all observed). Fully
    masked steps leave the state untouched and contribute 0 to the log density.
    """
    H = np.asarray(H, dtype=float)
    y_k = np.atleast_1d(np.asarray(y_k, dtype=float))
    n_s = H.shape[0]
    mask = np.ones(n_s, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if y_k.shape != (n_s,) or mask.shape != (n_s,):
        raise InvalidInput("y_k and mask must have one entry per row of H")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return state, 0.0
    w_all = np.broadcast_to(np.asarray(w.w, dtype=float), (n_s,))
    g_all = np.broadcast_to(np.asarray(w.dlogw2_dy, dtype=float), (n_s,))
    sigma2 = float(sigma) ** 2
    m = np.asarray(state.mean, dtype=float)
    P = np.asarray(state.cov, dtype=float)
    H_o = np.ascontiguousarray(H[idx])
    f_o = H_o @ m
    S_o = H_o @ P @ H_o.T + sigma2 * np.eye(idx.size)
    lp, st = _loops.log_gauss(y_k[idx] - f_o, 0.5 * (S_o + S_o.T))
    if st == _loops.FAILED:
        raise SingularInnovation("predictive covariance is not positive definite")
    m_new, P_new, st = _loops.update_step(
        m, P, y_k[idx], H_o, f_o, sigma2,
        np.ascontiguousarray(w_all[idx]), np.ascontiguousarray(g_all[idx]),
    )
    if st == _loops.FAILED:
        raise SingularInnovation("weighted innovation covariance is singular")
    return GaussianState(m_new, P_new, state.timestamp), float(lp)


@dataclass(frozen=True, eq=False)
class FilterTrace:
    """Everything produced by one forward pass.

    Arrays are indexed by time step first; weights of unobserved coordinates
    are NaN.
    """

    times: np.ndarray
    m_pred: np.ndarray
    P_pred: np.ndarray
    m_filt: np.ndarray
    P_filt: np.ndarray
    f_hat: np.ndarray
    S_hat: np.ndarray
    w: np.ndarray
    dlogw2: np.ndarray
    logpdf: np.ndarray
    observed: np.ndarray
    H: np.ndarray
    sigma: float
    policy: WeightPolicy
    A_stack: np.ndarray
    Q_stack: np.ndarray
    tidx: np.ndarray
    At_stack: np.ndarray
    n_jitter: int = 0

    def __len__(self):
        return self.times.shape[0]

    def predicted(self, k) -> GaussianState:
        return GaussianState(self.m_pred[k], self.P_pred[k], self.times[k])

    def filtered(self, k) -> GaussianState:
        return GaussianState(self.m_filt[k], self.P_filt[k], self.times[k])

    def predictive(self, k) -> PredictiveMoments:
        return PredictiveMoments(self.f_hat[k], self.S_hat[k])

    def weights(self, k) -> WeightVector:
        return WeightVector(self.w[k], self.dlogw2[k])

    def filtered_marginals(self):
        """Mean and variance of ``f`` under the filtering distribution."""
        return _marginals(self.H, self.m_filt, self.P_filt)


def _marginals(H, means, covs):
    mean = means @ H.T
    var = np.einsum("ij,kjl,il->ki", H, covs, H)
    return mean, var


def _prepare_data(times, y, observed):
    times = np.asarray(times, dtype=float).ravel()
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != times.shape[0]:
        raise InvalidInput(f"y has {y.shape[0]} rows but there are {times.shape[0]} timestamps")
    if observed is None:
        observed = np.isfinite(y)
    else:
        observed = np.asarray(observed, dtype=bool).reshape(y.shape) & np.isfinite(y)
    y = np.where(observed, y, 0.0)
    return times, np.ascontiguousarray(y), np.ascontiguousarray(observed)


def run_filter(model: StateSpaceModel, times, y, policy: Optional[WeightPolicy] = None,
               observed=None, transitions=None) -> FilterTrace:
    """Forward pass: predict, predictive moments, weights, weighted update.

    ``y`` has shape ``(n_t, n_s)``; NaN entries or ``observed == False`` mark
    missing values. ``transitions`` may be a precomputed
    ``(A_stack, Sigma_stack, index)`` triple from
    :func:`~strcgp.ssm.transitions_for_times`.
    """
    policy = policy if policy is not None else WeightPolicy.adaptive()
    times, y, observed = _prepare_data(times, y, observed)
    if y.shape[1] != model.n_s:
        raise InvalidInput(f"y has {y.shape[1]} columns, model has {model.n_s} locations")
    if transitions is None:
        transitions = transitions_for_times(model, times)
    A_stack, Q_stack, tidx = transitions
    sigma = model.spec.sigma
    sigma2 = model.spec.noise_variance
    mode = {"constant": _loops.MODE_CONSTANT, "fixed_imq": _loops.MODE_FIXED,
            "adaptive_imq": _loops.MODE_ADAPTIVE}[policy.kind]
    gamma_fix, c_fix = policy.fixed_arrays(times, model.grid, y.shape)
    D = model.state_dim
    At_stack = _block_transitions(A_stack, model.block_dim)
    out = _loops.filter_loop(
        y, observed, At_stack, Q_stack, tidx, _selection(model.H), np.zeros(D), model.Sigma0,
        sigma2, mode, policy.beta_for(sigma), float(policy.alpha),
        gamma_fix, c_fix, C2_FLOOR * sigma2,
    )
    m_pred, P_pred, m_filt, P_filt, f_hat, S_hat, w, dlogw2, logpdf, n_jitter, fail = out
    if fail >= 0:
        raise SingularInnovation(f"innovation covariance singular at step {fail} (t={times[fail]!r})")
    return FilterTrace(times, m_pred, P_pred, m_filt, P_filt, f_hat, S_hat, w, dlogw2, logpdf,
                       observed, model.H, sigma, policy, A_stack, Q_stack, tidx, At_stack, int(n_jitter))


def _block_transitions(A_stack, d):
    """Per-location blocks of transitions of the form ``kron(I, At)``."""
    return np.ascontiguousarray(A_stack[:, :d, :d])


def _selection(H):
    """State index observed at each location; H must be a 0/1 selection matrix."""
    sel = np.argmax(H, axis=1)
    if not np.array_equal(H, np.eye(H.shape[1])[sel]):
        raise InvalidInput("the observation matrix must select one state per location")
    return sel


@dataclass(frozen=True, eq=False)
class SmoothedStates:
    """Smoothed means/covariances; indexable like a list of GaussianState."""

    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    H: np.ndarray
    n_jitter: int = 0

    def __len__(self):
        return self.times.shape[0]

    def __getitem__(self, k):
        return GaussianState(self.means[k], self.covs[k], self.times[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def marginals(self):
        """Mean and variance of ``f``, each of shape ``(n_t, n_s)``."""
        return _marginals(self.H, self.means, self.covs)


def run_smoother(trace: FilterTrace) -> SmoothedStates:
    m_s, P_s, n_jitter, fail = _loops.smoother_loop(
        trace.m_pred, trace.P_pred, trace.m_filt, trace.P_filt, trace.At_stack, trace.tidx
    )
    if fail >= 0:
        raise SingularMatrix(f"predicted covariance singular at step {fail + 1}")
    return SmoothedStates(trace.times, m_s, P_s, trace.H, int(n_jitter))


def filter_smooth(spec: KernelSpec, times, grid, y, policy=None, observed=None):
    """Assemble the model, filter and smooth in one go."""
    model = assemble_model(spec, grid)
    trace = run_filter(model, times, y, policy, observed)
    return trace, run_smoother(trace)


@dataclass(frozen=True)
class PointPrediction:
    mean: np.ndarray
    var: np.ndarray

    @property
    def sd(self):
        return np.sqrt(self.var)


def _match_rows(rows, table):
    """Index of each row of ``rows`` in ``table`` (-1 where absent)."""
    out = np.full(rows.shape[0], -1, dtype=np.int64)
    for i, r in enumerate(rows):
        hit = np.flatnonzero(np.all(table == r, axis=1))
        if hit.size:
            out[i] = hit[0]
    return out


def predict_at(spec: KernelSpec, times, grid, y, query_points, policy=None, observed=None,
               smoothed=True) -> PointPrediction:
    """Latent-function marginals at arbitrary ``(t, s)`` query points.

    ``query_points`` has rows ``(t, s_1, ..., s_d)``. New locations and times are
    added to the model as permanently unobserved entries, so the filter simply
    predicts through them. Times after the last observation are forecasts;
    times before the first one are rejected.
    """
    times = np.asarray(times, dtype=float).ravel()
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    grid = np.zeros((1, 0)) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    q = np.atleast_2d(np.asarray(query_points, dtype=float))
    if q.shape[1] != 1 + grid.shape[1]:
        raise InvalidInput(f"query points need {1 + grid.shape[1]} columns (t, s...)")
    if np.any(q[:, 0] < times[0]):
        raise InvalidInput("cannot predict before the first timestamp")
    obs = np.isfinite(y) if observed is None else (np.asarray(observed, bool) & np.isfinite(y))

    q_s = q[:, 1:]
    loc_idx = _match_rows(q_s, grid) if grid.shape[1] else np.zeros(q.shape[0], dtype=np.int64)
    new_locs = np.unique(q_s[loc_idx < 0], axis=0) if np.any(loc_idx < 0) else np.zeros((0, grid.shape[1]))
    if new_locs.shape[0] and spec.spatial_family is None:
        raise InvalidInput("a purely temporal model cannot predict at new locations")
    aug_grid = np.vstack([grid, new_locs])
    all_times = np.union1d(times, q[:, 0])
    n_t, n_s = all_times.shape[0], aug_grid.shape[0]
    y_aug = np.zeros((n_t, n_s))
    obs_aug = np.zeros((n_t, n_s), dtype=bool)
    rows = np.searchsorted(all_times, times)
    y_aug[rows, : grid.shape[0]] = np.where(obs, y, 0.0)
    obs_aug[rows, : grid.shape[0]] = obs

    trace, sm = filter_smooth(spec, all_times, aug_grid, y_aug, policy, obs_aug)
    mean, var = sm.marginals() if smoothed else trace.filtered_marginals()
    t_idx = np.searchsorted(all_times, q[:, 0])
    s_idx = _match_rows(q_s, aug_grid) if aug_grid.shape[1] else np.zeros(q.shape[0], dtype=np.int64)
    return PointPrediction(mean[t_idx, s_idx], var[t_idx, s_idx])

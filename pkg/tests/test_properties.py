"""Randomised invariants (hypothesis, 100 cases each)."""

import numpy as np
from hypothesis import given, strategies as st

from strcgp.diagnostics import ewr
from strcgp.filtering import GaussianState, filter_smooth, update_gb
from strcgp.hyperopt import ThetaVector, fd_gradient, phi
from strcgp.linalg import matrix_exponential, solve_lyapunov
from strcgp.ssm import KernelSpec, sde_blocks
from strcgp.weights import WeightPolicy, adaptive_weights, imq_weight

seeds = st.integers(0, 2**32 - 1)
pos = lambda lo, hi: st.floats(lo, hi, allow_nan=False, allow_infinity=False)
policies = st.sampled_from(["constant", "adaptive", "fixed"])
temporal = st.sampled_from(["exponential", "matern32", "matern52"])


def _policy(name):
    return {"constant": WeightPolicy.constant(), "adaptive": WeightPolicy.adaptive(),
            "fixed": WeightPolicy.fixed_imq(0.0, 1.0)}[name]


def _instance(seed, fam, n_s, n_t, ell, noise):
    rng = np.random.default_rng(seed)
    spec = KernelSpec(fam, ell, 1.0, "matern32" if n_s > 1 else None, 0.6, 1.0, noise)
    grid = rng.uniform(-1, 1, (n_s, 2)) if n_s > 1 else None
    times = np.cumsum(rng.uniform(0.01, 0.5, n_t))
    y = rng.standard_normal((n_t, n_s))
    out = rng.uniform(size=y.shape) < 0.1
    y[out] += rng.choice([-1, 1], out.sum()) * rng.uniform(5, 50, out.sum())
    obs = rng.uniform(size=y.shape) > 0.15
    return spec, grid, times, y, obs


def _psd_ok(C):
    C = np.asarray(C)
    tr = abs(np.trace(C))
    return np.array_equal(C, C.T) or np.abs(C - C.T).max() <= 1e-12 * max(tr, 1.0), \
        np.linalg.eigvalsh(0.5 * (C + C.T)).min() >= -1e-8 * max(tr, 1e-300)


@given(seeds, temporal, st.integers(1, 3), st.integers(1, 10), pos(0.05, 3.0), pos(1e-4, 2.0), policies)
def test_psd_preservation(seed, fam, n_s, n_t, ell, noise, pol):
    spec, grid, times, y, obs = _instance(seed, fam, n_s, n_t, ell, noise)
    tr, sm = filter_smooth(spec, times, grid, y, _policy(pol), obs)
    for stack in (tr.P_pred, tr.P_filt, sm.covs):
        for C in stack:
            sym, psd = _psd_ok(C)
            assert sym and psd


@given(pos(-1e8, 1e8), pos(-10, 10), pos(1e-3, 1e3), pos(1e-3, 10.0), st.sampled_from([-0.25, -0.5, -1.0, -2.0]))
def test_weight_bounds(y, gamma, c, sigma, alpha):
    beta = sigma / np.sqrt(2)
    w, g = imq_weight(y, gamma, c, beta, alpha)
    assert 0.0 < w <= beta
    assert np.isfinite(g)
    if alpha == -0.5:
        assert abs(y) * w * w <= beta**2 * (abs(gamma) + c) * (1 + 1e-12)


@given(seeds, st.integers(1, 3), st.integers(2, 10), policies)
def test_ewr_at_most_one(seed, n_s, n_t, pol):
    spec, grid, times, y, obs = _instance(seed, "matern32", n_s, n_t, 0.4, 0.1)
    tr, _ = filter_smooth(spec, times, grid, y, _policy(pol), obs)
    w = tr.w[np.isfinite(tr.w)]
    assert np.all((w > 0) & (w <= spec.sigma / np.sqrt(2) * (1 + 1e-15)))
    if w.size:
        e = ewr(tr)
        assert 0.0 < e <= 1.0 + 1e-15
        if pol == "constant":
            assert abs(e - 1.0) <= 1e-15


@given(seeds, st.integers(1, 3), st.integers(2, 8), policies)
def test_full_mask_neutrality(seed, n_s, n_t, pol):
    spec, grid, times, y, obs = _instance(seed, "matern32", n_s, n_t, 0.4, 0.1)
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n_t))
    obs[k] = False
    tr, _ = filter_smooth(spec, times, grid, y, _policy(pol), obs)
    np.testing.assert_array_equal(tr.m_filt[k], tr.m_pred[k])
    np.testing.assert_array_equal(tr.P_filt[k], tr.P_pred[k])
    assert tr.logpdf[k] == 0.0
    d = 2 * n_s
    A = rng.standard_normal((d, d))
    state = GaussianState(rng.standard_normal(d), A @ A.T)
    H = np.eye(n_s, d)
    wv = adaptive_weights(np.zeros(n_s), np.zeros(n_s), np.ones(n_s), 0.5)
    new, lp = update_gb(state, rng.standard_normal(n_s), np.zeros(n_s, bool), H, 0.5, wv)
    assert new is state and lp == 0.0


@given(seeds, st.integers(1, 4), pos(1e-3, 2.0), pos(1e-3, 2.0))
def test_expm_semigroup(seed, d, a, b):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    S = rng.standard_normal((d, d))
    F = -(B @ B.T + 0.1 * np.eye(d)) + (S - S.T)
    lhs = matrix_exponential(F, a + b)
    rhs = matrix_exponential(F, a) @ matrix_exponential(F, b)
    assert np.linalg.norm(lhs - rhs) <= 1e-10


@given(temporal, pos(0.05, 10.0), pos(0.1, 5.0))
def test_lyapunov_residual_kernel_families(fam, ell, amp):
    blk = sde_blocks(KernelSpec(fam, ell, amp))
    Q = blk.Qc * blk.L @ blk.L.T
    X = solve_lyapunov(blk.F, Q)
    assert np.linalg.norm(blk.F @ X + X @ blk.F.T + Q) <= 1e-10 * (np.linalg.norm(Q) + 1.0)
    np.testing.assert_allclose(X[0, 0], amp**2, rtol=1e-10)


class _Series:
    def __init__(self, times, y):
        self.times, self.y, self.grid = times, y, None


@given(seeds, pos(-1.0, 1.0), pos(-1.0, 1.0), pos(-1.0, 1.0))
def test_fd_stencil_cross_check(seed, a, b, c):
    rng = np.random.default_rng(seed)
    times = np.linspace(0, 1, 30)
    data = _Series(times, (np.sin(5 * times) + 0.3 * rng.standard_normal(30))[:, None])
    base = KernelSpec("matern32", 0.2, 1.0, noise_variance=0.1)
    th = ThetaVector.from_spec(base)
    x = th.free + np.array([a, b, c])
    f = lambda z: phi(th.with_free(z), base, data).value
    g2 = fd_gradient(f, x, 1e-4, order=2)
    g4 = fd_gradient(f, x, 1e-3, order=4)
    assert np.max(np.abs(g2 - g4)) <= 1e-3 * max(np.max(np.abs(g4)), 1.0)

import numpy as np
import pytest

from oracles import kalman_reference
from strcgp.batch import batch_gp, batch_rcgp, space_time_inputs
from strcgp.data_io import GeneratorConfig, gen_temporal
from strcgp.errors import InvalidInput
from strcgp.filtering import (
    GaussianState, filter_smooth, predict, predict_at, predictive_moments, run_filter,
    run_smoother, update_gb,
)
from strcgp.ssm import KernelSpec, Transition, assemble_model, discretize, spatial_kernel_matrix
from strcgp.weights import WeightPolicy, WeightVector, imq_weight


def test_predict_examples():
    st = GaussianState(np.array([1.0, 2.0]), np.eye(2))
    same = predict(st, Transition(np.eye(2), np.zeros((2, 2)), 0.1))
    np.testing.assert_array_equal(same.mean, st.mean)
    np.testing.assert_array_equal(same.cov, st.cov)
    zero = predict(GaussianState(np.zeros(2), np.eye(2)), Transition(np.array([[1, 2], [3, 4.0]]), np.eye(2), 1))
    np.testing.assert_array_equal(zero.mean, 0.0)
    s = predict(GaussianState(np.array([1.0]), np.array([[1.0]])), Transition(np.array([[0.5]]), np.array([[0.75]]), 1))
    assert s.mean[0] == 0.5 and s.cov[0, 0] == 1.0
    with pytest.raises(InvalidInput):
        predict(st, Transition(np.eye(3), np.eye(3), 1))


def test_predictive_moments_examples():
    pm = predictive_moments(GaussianState(np.ones(2), np.zeros((2, 2))), np.eye(2), 0.3)
    np.testing.assert_allclose(pm.S_hat, 0.09 * np.eye(2))
    pm = predictive_moments(GaussianState(np.array([0.4]), np.array([[2.0]])), np.eye(1), 0.5)
    assert pm.f_hat[0] == 0.4 and pm.S_hat[0, 0] == pytest.approx(2.25)
    spec = KernelSpec("matern32", 0.5, 1.3, "se", 0.4, 1.0, 0.2)
    grid = np.array([[0.0], [0.3], [1.0]])
    m = assemble_model(spec, grid)
    pm = predictive_moments(GaussianState(np.zeros(m.state_dim), m.Sigma0), m.H, spec.sigma)
    K_s = spatial_kernel_matrix(spec, grid)
    np.testing.assert_allclose(pm.S_hat, 1.3**2 * K_s + 0.2 * np.eye(3), rtol=1e-12)


def test_constant_weight_update_equals_kalman():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4))
    P = A @ A.T + np.eye(4)
    m = rng.standard_normal(4)
    H = np.array([[1, 0, 0, 0], [0, 0, 1, 0.0]])
    y = rng.standard_normal(2)
    sigma = 0.7
    w = WeightVector(np.full(2, sigma / np.sqrt(2)), np.zeros(2))
    new, lp = update_gb(GaussianState(m, P), y, None, H, sigma, w)
    S = H @ P @ H.T + sigma**2 * np.eye(2)
    K = P @ H.T @ np.linalg.inv(S)
    np.testing.assert_allclose(new.mean, m + K @ (y - H @ m), rtol=1e-12)
    np.testing.assert_allclose(new.cov, P - K @ S @ K.T, rtol=1e-11, atol=1e-13)
    r = y - H @ m
    ref = -0.5 * (np.log(np.linalg.det(2 * np.pi * S)) + r @ np.linalg.solve(S, r))
    assert lp == pytest.approx(ref, rel=1e-12)


def test_full_mask_is_neutral():
    st = GaussianState(np.array([0.2, 0.1]), np.eye(2))
    w = WeightVector(np.array([0.5, 0.5]), np.zeros(2))
    new, lp = update_gb(st, [1.0, 2.0], [False, False], np.eye(2), 0.5, w)
    assert new is st and lp == 0.0


def test_single_step_matches_batch_rcgp():
    spec = KernelSpec("exponential", 0.5, 1.2, noise_variance=0.3)
    y = np.array([[1.9]])
    w, g = imq_weight(1.9, 0.0, 1.0, spec.sigma / np.sqrt(2))
    pol = WeightPolicy.fixed_imq(0.0, 1.0)
    tr = run_filter(assemble_model(spec), np.array([0.0]), y, pol)
    post = batch_rcgp(spec, [[0.0]], [1.9], [w], [g])
    mean, var = tr.filtered_marginals()
    assert mean[0, 0] == pytest.approx(post.mean[0], rel=1e-12)
    assert var[0, 0] == pytest.approx(post.var[0], rel=1e-12)


def test_constant_policy_filter_equals_textbook_kalman(rng):
    spec = KernelSpec("matern32", 0.4, 1.1, "matern32", 0.7, 1.0, 0.15)
    grid = rng.uniform(-1, 1, (3, 2))
    times = np.sort(rng.uniform(0, 2, 7))
    y = rng.standard_normal((7, 3))
    model = assemble_model(spec, grid)
    tr = run_filter(model, times, y, WeightPolicy.constant())
    for k, (m, P) in enumerate(kalman_reference(model, times, y)):
        np.testing.assert_allclose(tr.m_filt[k], m, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(tr.P_filt[k], P, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(tr.w, spec.sigma / np.sqrt(2))


def test_filter_tracks_noise_free_signal():
    spec = KernelSpec("matern32", 0.3, 1.0, noise_variance=1e-6)
    times = np.linspace(0, 1, 100)
    f = np.sin(2 * np.pi * times)
    tr = run_filter(assemble_model(spec), times, f[:, None], WeightPolicy.adaptive())
    mean, _ = tr.filtered_marginals()
    assert np.max(np.abs(mean[:, 0] - f)) < 3e-3


def test_outlier_steps_get_small_weights():
    ds = gen_temporal(GeneratorConfig(seed=0))
    spec = KernelSpec("matern32", 0.1, np.sqrt(2.0), noise_variance=0.25)
    tr = run_filter(assemble_model(spec), ds.times, ds.y, WeightPolicy.adaptive())
    w_out = tr.w[ds.outlier_mask]
    assert np.all(w_out < 0.5 * spec.sigma / np.sqrt(2))


def test_smoother_base_cases(rng):
    spec = KernelSpec("matern32", 0.4, 1.0, noise_variance=0.2)
    tr = run_filter(assemble_model(spec), np.array([0.3]), np.array([[0.5]]))
    sm = run_smoother(tr)
    np.testing.assert_array_equal(sm.means[0], tr.m_filt[0])
    times = np.sort(rng.uniform(0, 1, 6))
    tr, sm = filter_smooth(spec, times, None, rng.standard_normal((6, 1)), WeightPolicy.adaptive())
    np.testing.assert_array_equal(sm[len(sm) - 1].mean, tr.m_filt[-1])
    np.testing.assert_array_equal(sm[len(sm) - 1].cov, tr.P_filt[-1])
    assert len(list(sm)) == 6


def test_smoother_matches_batch_gp_6x2(rng):
    spec = KernelSpec("matern32", 0.5, 1.2, "matern32", 0.8, 1.0, 0.1)
    grid = np.array([[0.0], [0.6]])
    times = np.sort(rng.uniform(0, 2, 6))
    y = rng.standard_normal((6, 2))
    _, sm = filter_smooth(spec, times, grid, y, WeightPolicy.constant())
    mean, var = sm.marginals()
    post = batch_gp(spec, space_time_inputs(times, grid), y.ravel())
    np.testing.assert_allclose(mean.ravel(), post.mean, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(var.ravel(), post.var, rtol=1e-8)


def test_fixed_imq_smoother_matches_batch_rcgp(rng):
    spec = KernelSpec("exponential", 0.5, 1.0, "se", 0.5, 1.0, 0.2)
    grid = np.array([[0.0], [0.5], [1.0]])
    times = np.sort(rng.uniform(0, 2, 5))
    y = rng.standard_normal((5, 3))
    y[2, 1] = 9.0
    pol = WeightPolicy.fixed_imq(0.1, 0.8)
    _, sm = filter_smooth(spec, times, grid, y, pol)
    w, g = imq_weight(y.ravel(), 0.1, 0.8, spec.sigma / np.sqrt(2))
    post = batch_rcgp(spec, space_time_inputs(times, grid), y.ravel(), w, g)
    mean, var = sm.marginals()
    np.testing.assert_allclose(mean.ravel(), post.mean, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(var.ravel(), post.var, rtol=1e-8)


def test_missing_data_equals_batch_on_observed(rng):
    spec = KernelSpec("matern32", 0.5, 1.0, "matern32", 0.8, 1.0, 0.1)
    grid = np.array([[0.0], [0.6], [1.3]])
    times = np.linspace(0, 1, 5)
    y = rng.standard_normal((5, 3))
    obs = rng.uniform(size=y.shape) > 0.3
    obs[1] = False
    _, sm = filter_smooth(spec, times, grid, y, WeightPolicy.constant(), obs)
    X = space_time_inputs(times, grid)
    post = batch_gp(spec, X[obs.ravel()], y.ravel()[obs.ravel()], queries=X)
    mean, var = sm.marginals()
    np.testing.assert_allclose(mean.ravel(), post.mean, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(var.ravel(), post.var, rtol=1e-8)


def test_covariance_monotone_under_update(rng):
    spec = KernelSpec("matern32", 0.3, 1.0, "se", 0.5, 1.0, 0.3)
    grid = rng.uniform(-1, 1, (3, 1))
    y = 3 * rng.standard_normal((8, 3))
    for pol in (WeightPolicy.constant(), WeightPolicy.adaptive(), WeightPolicy.fixed_imq(0.0, 0.5)):
        tr = run_filter(assemble_model(spec, grid), np.linspace(0, 1, 8), y, pol)
        _, v_pred = (tr.m_pred @ tr.H.T, np.einsum("ij,kjl,il->ki", tr.H, tr.P_pred, tr.H))
        _, v_filt = tr.filtered_marginals()
        assert np.all(v_filt <= v_pred + 1e-10)


def test_predict_at_observed_point_matches_batch(rng):
    spec = KernelSpec("matern32", 0.5, 1.0, "matern32", 0.8, 1.0, 0.1)
    grid = np.array([[0.0], [0.6]])
    times = np.linspace(0, 1, 5)
    y = rng.standard_normal((5, 2))
    q = np.array([[times[2], 0.6], [0.37, 0.6], [0.5, 0.3]])
    pred = predict_at(spec, times, grid, y, q, WeightPolicy.constant())
    post = batch_gp(spec, space_time_inputs(times, grid), y.ravel(), queries=q)
    np.testing.assert_allclose(pred.mean, post.mean, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(pred.var, post.var, rtol=1e-8)


def test_forecast_is_pure_prediction(rng):
    spec = KernelSpec("matern32", 0.5, 1.0, noise_variance=0.1)
    times = np.linspace(0, 1, 6)
    y = rng.standard_normal((6, 1))
    model = assemble_model(spec)
    tr = run_filter(model, times, y, WeightPolicy.constant())
    step = discretize(model, 0.2)
    pred = predict_at(spec, times, None, y, [[1.2]], WeightPolicy.constant(), smoothed=False)
    m = step.A @ tr.m_filt[-1]
    P = step.A @ tr.P_filt[-1] @ step.A.T + step.Sigma
    assert pred.mean[0] == pytest.approx((model.H @ m)[0], rel=1e-12)
    assert pred.var[0] == pytest.approx((model.H @ P @ model.H.T)[0, 0], rel=1e-12)


def test_masked_site_has_larger_variance(rng):
    spec = KernelSpec("matern32", 0.5, 1.0, "matern32", 0.5, 1.0, 0.1)
    grid = np.array([[0.0], [0.5], [1.0]])
    times = np.linspace(0, 1, 6)
    y = rng.standard_normal((6, 3))
    obs = np.ones_like(y, dtype=bool)
    obs[:, 1] = False
    _, sm = filter_smooth(spec, times, grid, y, WeightPolicy.adaptive(), obs)
    _, var = sm.marginals()
    assert np.all(var[:, 1] >= var[:, 0]) and np.all(var[:, 1] >= var[:, 2])


def test_predict_at_errors():
    spec = KernelSpec("matern32", 0.5, 1.0, noise_variance=0.1)
    times = np.linspace(0, 1, 4)
    y = np.zeros((4, 1))
    with pytest.raises(InvalidInput):
        predict_at(spec, times, None, y, [[-0.1]])
    with pytest.raises(InvalidInput):
        predict_at(spec, times, np.array([[0.0]]), y, [[0.5, 0.3]])

import numpy as np
import pytest

from oracles import prior_cov_by_chaining
from strcgp.batch import product_kernel, space_time_inputs
from strcgp.errors import DegenerateGrid, InvalidTimeStep, UnsupportedKernel
from strcgp.ssm import (
    WIENER_START_VARIANCE, KernelSpec, assemble_model, discretize, sde_blocks,
    spatial_kernel_matrix, temporal_kernel,
)


def test_sde_blocks_families():
    b = sde_blocks(KernelSpec("exponential", 2.0, 1.0))
    np.testing.assert_allclose(b.F, [[-0.5]])
    assert b.Qc == pytest.approx(1.0)
    assert b.nu == 0
    b = sde_blocks(KernelSpec("matern32", np.sqrt(3.0), 1.0))
    np.testing.assert_allclose(b.F, [[0, 1], [-1, -2]], atol=1e-15)
    assert b.Qc == pytest.approx(4.0)
    np.testing.assert_allclose(b.Sigma_inf, np.diag([1.0, 1.0]), atol=1e-12)
    b = sde_blocks(KernelSpec("matern52", 1.0, 1.0))
    assert b.nu == 2
    lam = np.sqrt(5.0)
    assert b.Qc == pytest.approx(16 * lam**5 / 3)
    b = sde_blocks(KernelSpec("wiener", None, 1.5))
    assert not b.stationary and b.Qc == pytest.approx(2.25)


def test_periodic_and_unknown_rejected():
    with pytest.raises(UnsupportedKernel):
        KernelSpec("periodic", 1.0, 1.0)
    with pytest.raises(UnsupportedKernel):
        KernelSpec("matern32", 1.0, 1.0, "cosine")


def test_spatial_kernel_matrix_properties():
    spec = KernelSpec("matern32", 1.0, 1.0, "matern32", 0.5, 1.7)
    K = spatial_kernel_matrix(spec, [[0.3, 0.1]])
    np.testing.assert_allclose(K, [[1.7**2]])
    K = spatial_kernel_matrix(spec, [[0.0], [1e-9]])
    np.testing.assert_allclose(K, 1.7**2, rtol=1e-8)
    K = spatial_kernel_matrix(spec, [[0.0], [0.2], [0.9]])
    assert np.linalg.eigvalsh(K).min() >= -1e-10
    with pytest.raises(DegenerateGrid):
        spatial_kernel_matrix(spec, [[0.0], [0.0]])


def test_assemble_selector_and_prior():
    spec = KernelSpec("matern32", 0.7, 1.3, "se", 0.4, 1.1)
    grid = np.array([[0.0], [0.5]])
    m = assemble_model(spec, grid)
    assert m.state_dim == 4
    np.testing.assert_array_equal(m.H, [[1, 0, 0, 0], [0, 0, 1, 0]])
    K_s = spatial_kernel_matrix(spec, grid)
    np.testing.assert_allclose(m.H @ m.Sigma0 @ m.H.T, K_s * 1.3**2, rtol=1e-12)
    np.testing.assert_allclose(m.F, np.kron(np.eye(2), m.blocks.F))
    np.testing.assert_allclose(m.Qc, K_s * m.blocks.Qc)


def test_temporal_only_equals_scalar_kronecker():
    spec = KernelSpec("matern32", 0.7, 1.3)
    m = assemble_model(spec)
    assert m.n_s == 1
    np.testing.assert_allclose(m.Sigma0, m.blocks.Sigma_inf)


def test_discretize_limits_and_scalar_formula():
    m = assemble_model(KernelSpec("exponential", 1.0, 1.0))
    tr = discretize(m, 1.0)
    assert tr.A[0, 0] == pytest.approx(np.exp(-1.0), rel=1e-14)
    assert tr.Sigma[0, 0] == pytest.approx(1 - np.exp(-2.0), rel=1e-12)
    m = assemble_model(KernelSpec("matern32", 0.5, 1.0))
    far = discretize(m, 1e3 * 0.5)
    np.testing.assert_allclose(far.A, 0.0, atol=1e-12)
    np.testing.assert_allclose(far.Sigma, m.Sigma0, atol=1e-12)
    near = discretize(m, 1e-13)
    np.testing.assert_allclose(near.A, np.eye(2), atol=1e-8)
    np.testing.assert_allclose(near.Sigma, 0.0, atol=1e-8)
    with pytest.raises(InvalidTimeStep):
        discretize(m, 0.0)


@pytest.mark.parametrize("family", ["exponential", "matern32", "matern52"])
def test_chained_prior_matches_kernel(family, rng):
    for _ in range(5):
        n = int(rng.integers(2, 9))
        times = np.sort(rng.uniform(0.0, 3.0, n))
        spec = KernelSpec(family, float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.5, 2.0)))
        C = prior_cov_by_chaining(assemble_model(spec), times)
        K = temporal_kernel(spec, times[:, None], times[None, :])
        np.testing.assert_allclose(C, K, rtol=1e-8, atol=1e-12 * K.max())


def test_wiener_start_convention():
    spec = KernelSpec("wiener", None, 1.2)
    times = np.array([0.5, 0.9, 1.7, 2.0])
    C = prior_cov_by_chaining(assemble_model(spec), times)
    K = temporal_kernel(spec, times[:, None], times[None, :], origin=times[0])
    # the closed form already carries the start variance
    assert K[0, 0] == pytest.approx(WIENER_START_VARIANCE * 1.2**2)
    np.testing.assert_allclose(C, K, rtol=1e-8)


def test_separable_prior_is_kronecker(rng):
    for _ in range(5):
        n_s = int(rng.integers(1, 4))
        n_t = int(rng.integers(2, 7))
        grid = rng.uniform(-1, 1, (n_s, 2))
        times = np.sort(rng.uniform(0, 2, n_t))
        spec = KernelSpec("matern32", 0.8, 1.1, "matern32", 0.6, 0.9)
        C = prior_cov_by_chaining(assemble_model(spec, grid), times)
        K_t = temporal_kernel(spec, times[:, None], times[None, :])
        K_s = spatial_kernel_matrix(spec, grid)
        np.testing.assert_allclose(C, np.kron(K_t, K_s), rtol=1e-8, atol=1e-12)
        X = space_time_inputs(times, grid)
        np.testing.assert_allclose(product_kernel(spec, X, X), np.kron(K_t, K_s), rtol=1e-12)

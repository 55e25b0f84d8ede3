"""Kernel specifications and their state-space (SDE) representation.

A separable kernel ``k((s, t), (s', t')) = k_s(s - s') k_t(t - t')`` with a
temporal factor from the Matern family (or the Wiener process) is turned into

    dz/dt = F z + L w,    w white noise with spectral density Qc,

with one ``(nu + 1)``-dimensional block per spatial location. Discretising on a
time grid gives the linear-Gaussian transition ``z_k = A z_{k-1} + q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegenerateGrid, InvalidInput, InvalidTimeStep, UnsupportedKernel
from .linalg import clamp_psd, is_hurwitz, matrix_exponential, solve_lyapunov, symmetrize

TEMPORAL_FAMILIES = ("wiener", "exponential", "matern32", "matern52")
SPATIAL_FAMILIES = ("se", "matern32")

_ALIASES = {
    "matern12": "exponential",
    "exp": "exponential",
    "ou": "exponential",
    "matern-1/2": "exponential",
    "matern-3/2": "matern32",
    "matern-5/2": "matern52",
    "squared_exponential": "se",
    "squaredexponential": "se",
    "rbf": "se",
    "none": None,
}

# Sigma0 for the (non-stationary) Wiener process: eps * amplitude^2 * I
WIENER_START_VARIANCE = 1e-6


def _canonical(name):
    if name is None:
        return None
    key = str(name).strip().lower()
    return _ALIASES.get(key, key)


@dataclass(frozen=True)
class KernelSpec:
    """Separable spatio-temporal kernel plus observation noise.

    Amplitudes are standard deviations (the kernel variance is
    ``amplitude**2``); ``noise_variance`` is ``sigma**2``.
    """

    temporal_family: str = "matern32"
    lengthscale_t: Optional[float] = 1.0
    amplitude_t: float = 1.0
    spatial_family: Optional[str] = None
    lengthscale_s: float = 1.0
    amplitude_s: float = 1.0
    noise_variance: float = 0.1

    def __post_init__(self):
        temporal = _canonical(self.temporal_family)
        spatial = _canonical(self.spatial_family)
        if temporal == "periodic":
            raise UnsupportedKernel("the periodic kernel has no state-space form here")
        if temporal not in TEMPORAL_FAMILIES:
            raise UnsupportedKernel(f"unknown temporal kernel {self.temporal_family!r}")
        if spatial is not None and spatial not in SPATIAL_FAMILIES:
            raise UnsupportedKernel(f"unknown spatial kernel {self.spatial_family!r}")
        object.__setattr__(self, "temporal_family", temporal)
        object.__setattr__(self, "spatial_family", spatial)
        positive = ["amplitude_t", "noise_variance"]
        if temporal != "wiener":
            positive.append("lengthscale_t")
        if spatial is not None:
            positive += ["lengthscale_s", "amplitude_s"]
        for name in positive:
            value = getattr(self, name)
            if value is None or not np.isfinite(value) or value <= 0:
                raise InvalidInput(f"{name} must be a positive finite number, got {value!r}")

    @property
    def sigma(self):
        return float(np.sqrt(self.noise_variance))

    @property
    def is_spatial(self):
        return self.spatial_family is not None

    def with_params(self, **kwargs):
        return replace(self, **kwargs)


@dataclass(frozen=True)
class SdeBlocks:
    F: np.ndarray
    L: np.ndarray
    Qc: float
    nu: int
    Sigma_inf: Optional[np.ndarray]

    @property
    def stationary(self):
        return self.Sigma_inf is not None


def sde_blocks(spec: KernelSpec) -> SdeBlocks:
    """Temporal SDE matrices for ``spec.temporal_family``.

    The rows are keyed by state dimension and ``lambda``: the 2-state model uses
    ``lambda = sqrt(3)/l`` (Matern-3/2) and the 3-state model ``sqrt(5)/l``
    (Matern-5/2).
    """
    fam = spec.temporal_family
    var = spec.amplitude_t**2
    if fam == "wiener":
        return SdeBlocks(np.zeros((1, 1)), np.ones((1, 1)), var, 0, None)
    ell = spec.lengthscale_t
    if fam == "exponential":
        F = np.array([[-1.0 / ell]])
        L = np.ones((1, 1))
        Qc = 2.0 * var / ell
        nu = 0
    elif fam == "matern32":
        lam = np.sqrt(3.0) / ell
        F = np.array([[0.0, 1.0], [-(lam**2), -2.0 * lam]])
        L = np.array([[0.0], [1.0]])
        Qc = 4.0 * lam**3 * var
        nu = 1
    elif fam == "matern52":
        lam = np.sqrt(5.0) / ell
        F = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-(lam**3), -3.0 * lam**2, -3.0 * lam]])
        L = np.array([[0.0], [0.0], [1.0]])
        Qc = 16.0 * var * lam**5 / 3.0
        nu = 2
    else:  # pragma: no cover - guarded by KernelSpec
        raise UnsupportedKernel(fam)
    Sigma_inf = solve_lyapunov(F, Qc * (L @ L.T))
    return SdeBlocks(F, L, float(Qc), nu, Sigma_inf)


# closed-form kernels -------------------------------------------------------


def temporal_kernel(spec: KernelSpec, t1, t2, origin=None):
    """Closed-form temporal covariance ``k_t(t1, t2)`` (broadcasting).

    For the Wiener process the state-space model starts at ``origin`` with a
    small variance, so the matching covariance is
    ``eps * a^2 + a^2 * (min(t1, t2) - origin)``.
    """
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    var = spec.amplitude_t**2
    fam = spec.temporal_family
    if fam == "wiener":
        if origin is None:
            raise InvalidInput("the Wiener kernel needs the time origin of the model")
        return var * (WIENER_START_VARIANCE + np.minimum(t1, t2) - origin)
    r = np.abs(t1 - t2) / spec.lengthscale_t
    if fam == "exponential":
        return var * np.exp(-r)
    if fam == "matern32":
        a = np.sqrt(3.0) * r
        return var * (1.0 + a) * np.exp(-a)
    if fam == "matern52":
        a = np.sqrt(5.0) * r
        return var * (1.0 + a + a * a / 3.0) * np.exp(-a)
    raise UnsupportedKernel(fam)  # pragma: no cover


def spatial_kernel(spec: KernelSpec, s1, s2):
    """Closed-form spatial covariance between the rows of ``s1`` and ``s2``."""
    s1 = np.atleast_2d(np.asarray(s1, dtype=float))
    s2 = np.atleast_2d(np.asarray(s2, dtype=float))
    if spec.spatial_family is None:
        return np.ones((s1.shape[0], s2.shape[0]))
    diff = s1[:, None, :] - s2[None, :, :]
    r = np.sqrt(np.sum(diff * diff, axis=-1)) / spec.lengthscale_s
    var = spec.amplitude_s**2
    if spec.spatial_family == "se":
        return var * np.exp(-0.5 * r * r)
    a = np.sqrt(3.0) * r
    return var * (1.0 + a) * np.exp(-a)


def _as_grid(grid):
    if grid is None:
        return np.zeros((1, 0))
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.ndim != 2 or grid.shape[0] < 1:
        raise InvalidInput(f"grid must be an (n_s, d_s) array, got shape {grid.shape}")
    return grid


def spatial_kernel_matrix(spec: KernelSpec, grid) -> np.ndarray:
    grid = _as_grid(grid)
    if grid.shape[0] > 1:
        uniq = np.unique(grid, axis=0)
        if uniq.shape[0] != grid.shape[0]:
            raise DegenerateGrid("spatial grid contains duplicate locations")
    if spec.spatial_family is None:
        if grid.shape[0] != 1:
            raise InvalidInput("a purely temporal kernel needs exactly one location")
        return np.ones((1, 1))
    K = spatial_kernel(spec, grid, grid)
    np.fill_diagonal(K, spec.amplitude_s**2)
    return clamp_psd(K)


# state-space model -----------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    A: np.ndarray
    Sigma: np.ndarray
    dt: float


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    spec: KernelSpec
    blocks: SdeBlocks
    grid: np.ndarray
    K_s: np.ndarray
    H: np.ndarray
    Sigma0: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_s(self):
        return self.K_s.shape[0]

    @property
    def block_dim(self):
        return self.blocks.nu + 1

    @property
    def state_dim(self):
        return self.n_s * self.block_dim

    @property
    def F(self):
        return np.kron(np.eye(self.n_s), self.blocks.F)

    @property
    def L(self):
        return np.kron(np.eye(self.n_s), self.blocks.L)

    @property
    def Qc(self):
        return self.K_s * self.blocks.Qc

    def transition(self, dt):
        """Memoised :func:`discretize` (regular grids hit a single entry)."""
        key = float(dt)
        hit = self._cache.get(key)
        if hit is None:
            hit = discretize(self, key)
            self._cache[key] = hit
        return hit


def assemble_model(spec: KernelSpec, grid=None) -> StateSpaceModel:
    grid = _as_grid(grid)
    blocks = sde_blocks(spec)
    K_s = spatial_kernel_matrix(spec, grid)
    n_s = K_s.shape[0]
    d = blocks.nu + 1
    H = np.kron(np.eye(n_s), np.eye(1, d))
    if blocks.stationary:
        Sigma0 = np.kron(K_s, blocks.Sigma_inf)
    else:
        Sigma0 = np.kron(K_s, WIENER_START_VARIANCE * spec.amplitude_t**2 * np.eye(d))
    return StateSpaceModel(spec, blocks, grid, K_s, H, symmetrize(Sigma0))


def _temporal_noise(blocks: SdeBlocks, A_t, dt):
    if blocks.stationary:
        S_inf = blocks.Sigma_inf
        # cancellation error scales with Sigma_inf, not with the (small) result
        return clamp_psd(S_inf - A_t @ S_inf @ A_t.T, scale=np.trace(S_inf))
    # Van Loan: exp([[F, LQcL^T], [0, -F^T]] dt) for non-stationary drifts
    d = blocks.F.shape[0]
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = blocks.F
    M[:d, d:] = blocks.Qc * (blocks.L @ blocks.L.T)
    M[d:, d:] = -blocks.F.T
    E = matrix_exponential(M, dt)
    return clamp_psd(E[:d, d:] @ A_t.T, scale=max(np.trace(blocks.Qc * blocks.L @ blocks.L.T) * dt, 1e-300))


def discretize(model: StateSpaceModel, dt) -> Transition:
    """Transition over a step ``dt``, computed blockwise as ``I (x) exp(F_t dt)``."""
    dt = float(dt)
    if not np.isfinite(dt) or dt <= 0.0:
        raise InvalidTimeStep(f"time step must be positive, got {dt!r}")
    A_t = matrix_exponential(model.blocks.F, dt)
    Sigma_t = _temporal_noise(model.blocks, A_t, dt)
    eye = np.eye(model.n_s)
    A = np.kron(eye, A_t)
    Sigma = symmetrize(np.kron(model.K_s, Sigma_t))
    return Transition(A, Sigma, dt)


def check_stationary(model: StateSpaceModel):
    return model.blocks.stationary and is_hurwitz(model.blocks.F)


def transitions_for_times(model: StateSpaceModel, times, rtol=1e-12):
    """Unique transitions for the steps of ``times``.

    Returns ``(A_stack, Sigma_stack, index)`` where ``index[k]`` selects the
    transition from ``times[k-1]`` to ``times[k]`` and ``index[0] = -1`` (the
    first state is drawn from ``Sigma0``). Steps equal to within ``rtol`` share
    one entry.
    """
    times = np.asarray(times, dtype=float)
    n_t = times.shape[0]
    index = np.full(n_t, -1, dtype=np.int64)
    if n_t == 0:
        raise InvalidInput("empty time grid")
    dts = np.diff(times)
    if np.any(~np.isfinite(dts)) or np.any(dts <= 0.0):
        raise InvalidTimeStep("timestamps must be strictly increasing")
    reps = np.empty(0)
    if dts.size:
        # group steps equal to ~12 significant digits
        mag = 10.0 ** np.floor(np.log10(dts))
        keys = np.round(dts / mag, int(round(-np.log10(rtol)))) * mag
        _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        reps = dts[first]
        index[1:] = inverse
    D = model.state_dim
    A_stack = np.empty((max(len(reps), 1), D, D))
    S_stack = np.zeros((max(len(reps), 1), D, D))
    if len(reps) == 0:
        A_stack[0] = np.eye(D)
    for i, dt in enumerate(reps):
        tr = model.transition(dt)
        A_stack[i] = tr.A
        S_stack[i] = tr.Sigma
    return A_stack, S_stack, index

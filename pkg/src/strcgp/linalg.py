"""Dense linear-algebra primitives used by the state-space layer."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import InvalidMatrix, NotHurwitz, SingularMatrix

JITTER = 1e-8


def _as_square(M, name="matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InvalidMatrix(f"{name} must be a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidMatrix(f"{name} has non-finite entries")
    return M


def symmetrize(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def matrix_exponential(F, dt=1.0):
    """Return ``exp(F * dt)``.

    Backed by :func:`scipy.linalg.expm` (scaling and squaring with a degree-13
    Pade approximant).
    """
    F = _as_square(F, "F")
    if not np.isfinite(dt):
        raise InvalidMatrix("dt must be finite")
    if dt == 0.0:
        return np.eye(F.shape[0])
    return scipy.linalg.expm(F * dt)


def is_hurwitz(F):
    return bool(np.all(np.linalg.eigvals(np.atleast_2d(F)).real < 0.0))


def solve_lyapunov(F, Q):
    """Solve ``F X + X F^T + Q = 0`` for the steady-state covariance ``X``.

    Uses the vectorised Kronecker system ``(I (x) F + F (x) I) vec(X) = -vec(Q)``,
    which is fine for the tiny state blocks of the supported kernels.
    """
    F = _as_square(F, "F")
    Q = _as_square(Q, "Q")
    if Q.shape != F.shape:
        raise InvalidMatrix(f"Q shape {Q.shape} does not match F shape {F.shape}")
    if not is_hurwitz(F):
        raise NotHurwitz("F has an eigenvalue with non-negative real part")
    d = F.shape[0]
    eye = np.eye(d)
    system = np.kron(eye, F) + np.kron(F, eye)
    # column-major vec
    x = np.linalg.solve(system, -Q.reshape(-1, order="F"))
    X = symmetrize(x.reshape((d, d), order="F"))
    resid = np.linalg.norm(F @ X + X @ F.T + Q)
    if resid > 1e-10 * (np.linalg.norm(Q) + 1.0):
        raise NotHurwitz(f"Lyapunov residual {resid:.3e} too large; F is close to unstable")
    return X


def psd_solve(M, B, return_flag=False):
    """Solve ``M X = B`` for symmetric ``M`` through a Cholesky factorisation.

    When the factorisation fails the diagonal is inflated once by
    ``1e-8 * trace(M) / dim``. With ``return_flag=True`` the result is
    ``(X, jittered)``.
    """
    M = _as_square(M, "M")
    B = np.asarray(B, dtype=float)
    if B.shape[0] != M.shape[0]:
        raise InvalidMatrix(f"B has {B.shape[0]} rows, M is {M.shape[0]}x{M.shape[0]}")
    jittered = False
    try:
        factor = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        d = M.shape[0]
        delta = JITTER * abs(np.trace(M)) / d
        if delta == 0.0:
            delta = JITTER
        try:
            factor = scipy.linalg.cho_factor(M + delta * np.eye(d), lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix("matrix is not positive definite even after jitter") from exc
        jittered = True
    X = scipy.linalg.cho_solve(factor, B, check_finite=False)
    return (X, jittered) if return_flag else X


def clamp_psd(M, rel_tol=1e-8, scale=None):
    """Symmetrise ``M`` and zero small negative eigenvalues.

    Eigenvalues below ``-rel_tol * scale`` (``scale`` defaults to the trace)
    indicate a genuine error and raise.
    """
    M = symmetrize(M)
    vals, vecs = np.linalg.eigh(M)
    if scale is None:
        scale = abs(np.trace(M))
    floor = -rel_tol * max(scale, np.finfo(float).tiny)
    if vals.min() < floor:
        raise SingularMatrix(f"matrix has eigenvalue {vals.min():.3e} below tolerance {floor:.3e}")
    if vals.min() >= 0.0:
        return M
    vals = np.where(vals < 0.0, 0.0, vals)
    return symmetrize((vecs * vals) @ vecs.T)

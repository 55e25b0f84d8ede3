"""Hot loops of the filter and smoother.

Everything here is written in the numpy subset numba understands and is
compiled with ``numba.njit`` unless ``STRCGP_DISABLE_NUMBA`` is set. Failures
are reported through integer status codes rather than exceptions; the public
wrappers in :mod:`strcgp.filtering` translate them.
"""

import numpy as np
import scipy.linalg

from ._backend import USE_NUMBA, maybe_njit

OK = 0
JITTERED = 1
FAILED = 2

MODE_CONSTANT = 0
MODE_FIXED = 1
MODE_ADAPTIVE = 2

LOG_2PI = np.log(2.0 * np.pi)
JITTER = 1e-8


@maybe_njit
def symm(M):
    return 0.5 * (M + M.T)


@maybe_njit
def chol_jitter(M):
    """Cholesky factor of ``M``; one retry with relative diagonal jitter."""
    d = M.shape[0]
    try:
        return np.linalg.cholesky(M), OK
    except Exception:
        pass
    delta = JITTER * abs(np.trace(M)) / d
    if delta == 0.0:
        delta = JITTER
    M2 = M + delta * np.eye(d)
    try:
        return np.linalg.cholesky(M2), JITTERED
    except Exception:
        return np.zeros((d, d)), FAILED


@maybe_njit
def _tri_solve_2d(Lc, B):
    # forward then backward substitution with the lower factor Lc
    n = Lc.shape[0]
    U = np.ascontiguousarray(Lc.T)
    X = np.ascontiguousarray(B).copy()
    for i in range(n):
        if i > 0:
            X[i] -= Lc[i, :i] @ X[:i]
        X[i] /= Lc[i, i]
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            X[i] -= U[i, i + 1:] @ X[i + 1:]
        X[i] /= U[i, i]
    return X


if USE_NUMBA:

    @maybe_njit
    def chol_solve(Lc, B):
        """Solve ``(Lc Lc^T) X = B`` for a vector or matrix ``B``."""
        if B.ndim == 1:
            return _tri_solve_2d(Lc, B.reshape(B.shape[0], 1)).reshape(B.shape[0])
        return _tri_solve_2d(Lc, B)

else:

    def chol_solve(Lc, B):
        """Solve ``(Lc Lc^T) X = B`` for a vector or matrix ``B``."""
        return scipy.linalg.cho_solve((Lc, True), B, check_finite=False)


@maybe_njit
def imq(resid, c2, beta, alpha):
    """IMQ weight and d/dy log(w^2) for residual ``y - gamma``."""
    u = 1.0 + resid * resid / c2
    w = beta * u**alpha
    dlogw2 = 2.0 * alpha * 2.0 * resid / (c2 + resid * resid)
    return w, dlogw2


@maybe_njit
def predict_step(m, P, A, Q):
    return A @ m, symm(A @ P @ A.T + Q)


@maybe_njit
def right_block(M, At):
    """``M @ kron(I, At).T`` without forming the Kronecker product."""
    r, c = M.shape
    d = At.shape[0]
    Mc = np.ascontiguousarray(M)
    return (Mc.reshape(r * (c // d), d) @ At.T).reshape(r, c)


@maybe_njit
def predict_block(m, P, At, Q):
    """Predict step for ``A = kron(I, At)``: O(D^2 d) instead of O(D^3)."""
    d = At.shape[0]
    D = m.shape[0]
    m_new = (np.ascontiguousarray(m).reshape(D // d, d) @ At.T).reshape(D)
    T = right_block(P, At)  # P A^T
    R = right_block(np.ascontiguousarray(T.T), At).T  # A P A^T
    return m_new, symm(R + Q)


@maybe_njit
def log_gauss(resid, S):
    Lc, status = chol_jitter(S)
    if status == FAILED:
        return np.nan, status
    z = np.linalg.solve(Lc, resid)  # a single vector; LU cost is negligible
    logdet = 2.0 * np.sum(np.log(np.diag(Lc)))
    return -0.5 * (resid.shape[0] * LOG_2PI + logdet + z @ z), status


@maybe_njit
def update_step(m, P, y_o, H_o, f_o, sigma2, w_o, dlogw2_o):
    """Generalised-Bayes update in innovation form.

    ``R_w = sigma^4 / (2 w^2)`` replaces the noise variance and the prediction
    is shifted to ``f + sigma^2 dlog(w^2)/dy``. With ``w = sigma/sqrt(2)`` and a
    zero shift this is the ordinary Kalman update.
    """
    PHt = P @ H_o.T
    Sw = H_o @ PHt + np.diag(sigma2 * sigma2 / (2.0 * w_o * w_o))
    Lc, status = chol_jitter(symm(Sw))
    if status == FAILED:
        return m, P, status
    K = chol_solve(Lc, PHt.T).T
    innov = y_o - (f_o + sigma2 * dlogw2_o)
    m_new = m + K @ innov
    P_new = symm(P - K @ PHt.T)
    return m_new, P_new, status


@maybe_njit
def update_sel(m, P, y_o, sel_o, f_o, sigma2, w_o, dlogw2_o):
    """:func:`update_step` for a selection observation matrix."""
    PHt = np.ascontiguousarray(P[:, sel_o])
    Sw = PHt[sel_o] + np.diag(sigma2 * sigma2 / (2.0 * w_o * w_o))
    Lc, status = chol_jitter(symm(Sw))
    if status == FAILED:
        return m, P, status
    K = chol_solve(Lc, PHt.T).T
    innov = y_o - (f_o + sigma2 * dlogw2_o)
    m_new = m + K @ innov
    P_new = symm(P - K @ PHt.T)
    return m_new, P_new, status


@maybe_njit
def filter_loop(y, observed, At_stack, Q_stack, tidx, sel, m0, P0, sigma2, mode, beta, alpha,
                gamma_fix, c_fix, c2_floor):
    """Forward pass for a model with ``A = kron(I, At)`` and an observation
    matrix that picks state ``sel[j]`` for location ``j``."""
    n_t, n_s = y.shape
    D = m0.shape[0]
    m_pred = np.empty((n_t, D))
    P_pred = np.empty((n_t, D, D))
    m_filt = np.empty((n_t, D))
    P_filt = np.empty((n_t, D, D))
    f_hat = np.empty((n_t, n_s))
    S_hat = np.empty((n_t, n_s, n_s))
    w = np.full((n_t, n_s), np.nan)
    dlogw2 = np.full((n_t, n_s), np.nan)
    logpdf = np.zeros(n_t)
    n_jitter = 0
    fail_step = -1

    m = m0.copy()
    P = P0.copy()
    for k in range(n_t):
        ti = tidx[k]
        if ti >= 0:
            m, P = predict_block(m, P, At_stack[ti], Q_stack[ti])
        m_pred[k] = m
        P_pred[k] = P
        fk = m[sel]
        Sk = symm(P[sel][:, sel] + sigma2 * np.eye(n_s))
        f_hat[k] = fk
        S_hat[k] = Sk

        idx = np.nonzero(observed[k])[0]
        n_o = idx.shape[0]
        if n_o == 0:
            m_filt[k] = m
            P_filt[k] = P
            continue

        y_o = y[k][idx]
        f_o = fk[idx]
        w_o = np.empty(n_o)
        g_o = np.empty(n_o)
        for a in range(n_o):
            j = idx[a]
            if mode == MODE_CONSTANT:
                wj = beta
                gj = 0.0
            elif mode == MODE_FIXED:
                wj, gj = imq(y[k, j] - gamma_fix[k, j], c_fix[k, j] ** 2, beta, alpha)
            else:
                c2 = max(Sk[j, j], c2_floor)
                wj, gj = imq(y[k, j] - fk[j], c2, beta, alpha)
            w_o[a] = wj
            g_o[a] = gj
            w[k, j] = wj
            dlogw2[k, j] = gj

        S_o = Sk[idx][:, idx]
        lp, st = log_gauss(y_o - f_o, S_o)
        if st == FAILED:
            fail_step = k
            break
        if st == JITTERED:
            n_jitter += 1
        logpdf[k] = lp

        m, P, st = update_sel(m, P, y_o, sel[idx], f_o, sigma2, w_o, g_o)
        if st == FAILED:
            fail_step = k
            break
        if st == JITTERED:
            n_jitter += 1
        m_filt[k] = m
        P_filt[k] = P

    return m_pred, P_pred, m_filt, P_filt, f_hat, S_hat, w, dlogw2, logpdf, n_jitter, fail_step


@maybe_njit
def smoother_loop(m_pred, P_pred, m_filt, P_filt, At_stack, tidx):
    """Rauch-Tung-Striebel backward pass over stored filter moments
    (transitions ``kron(I, At)``)."""
    n_t = m_filt.shape[0]
    m_s = m_filt.copy()
    P_s = P_filt.copy()
    n_jitter = 0
    fail_step = -1
    for k in range(n_t - 2, -1, -1):
        At = At_stack[tidx[k + 1]]
        Lc, st = chol_jitter(P_pred[k + 1])
        if st == FAILED:
            fail_step = k
            break
        if st == JITTERED:
            n_jitter += 1
        # G = P_filt A^T P_pred^{-1}
        G = chol_solve(Lc, right_block(P_filt[k], At).T).T
        m_s[k] = m_filt[k] + G @ (m_s[k + 1] - m_pred[k + 1])
        P_s[k] = symm(P_filt[k] + G @ (P_s[k + 1] - P_pred[k + 1]) @ G.T)
    return m_s, P_s, n_jitter, fail_step

"""Pure-numpy kernels.

Same signatures and results as :mod:`tbcal.kernels._numba` (to rounding), but
vectorized with numpy/scipy instead of compiled loops. The photoelectron model
here goes through explicit binomial matrices, which makes it an independent
route to the generating-function recurrence used on the numba side.
"""

import numpy as np
from scipy.special import gammaln

PARAM_COLUMNS = 8  # eta_s, eta_i, M_p, b_p, M_s, b_s, M_i, b_i


def discretize(v, dv):
    raw = np.floor(np.asarray(v, dtype=np.float64) / dv + 0.5)
    under = raw < 0
    raw[under] = 0.0
    return raw.astype(np.int64), int(under.sum())


def _corr(a, b):
    da = a - a.mean()
    db = b - b.mean()
    saa = np.dot(da, da)
    sbb = np.dot(db, db)
    if saa <= 0.0 or sbb <= 0.0:
        return np.nan
    return np.dot(da, db) / np.sqrt(saa * sbb)


def count_covariance(v_s, v_i, dv_s, dv_i):
    a = np.maximum(np.floor(v_s / dv_s + 0.5), 0.0)
    b = np.maximum(np.floor(v_i / dv_i + 0.5), 0.0)
    return _corr(a, b)


def covariance_grid(v_s, v_i, dvs, dvi):
    out = np.empty(len(dvs))
    for k in range(len(dvs)):
        out[k] = count_covariance(v_s, v_i, dvs[k], dvi[k])
    return out


def histogram2d(m_s, m_i):
    rows = int(m_s.max()) + 1
    cols = int(m_i.max()) + 1
    flat = np.bincount(m_s * cols + m_i, minlength=rows * cols)
    return flat.reshape(rows, cols).astype(np.int64)


def nb_logpmf(n, M, b):
    n = np.asarray(n, dtype=np.float64)
    return (gammaln(n + M) - gammaln(n + 1.0) - gammaln(M)
            + n * np.log(b) - (n + M) * np.log1p(b))


def nb_pmf(M, b, length):
    out = np.zeros(length)
    if length == 0:
        return out
    if b <= 0.0:
        out[0] = 1.0
        return out
    out[:] = np.exp(nb_logpmf(np.arange(length), M, b))
    return out


CUM_RELIABLE = 1e-12  # below this, 1 - cum is dominated by rounding


def nb_cutoff(M, b, eps, cap):
    """Smallest cutoff ``K`` with ``P(n > K) <= eps``, or ``cap``."""
    if b <= 0.0:
        return 0
    total = 0.0
    start = 0
    chunk = 64
    while start <= cap:
        stop = min(start + chunk, cap + 1)
        n = np.arange(start, stop)
        p = np.exp(nb_logpmf(n, M, b))
        cum = total + np.cumsum(p)
        # geometric tail bound alongside 1 - cum, which cancels near eps ~ 1e-16
        x = b / (1.0 + b)
        r = np.full(n.size, x) if M < 1.0 else (n + M) / (n + 1.0) * x
        with np.errstate(divide="ignore"):
            bound = np.where(r < 1.0, p * r / (1.0 - r), np.inf)
        hit = np.nonzero(((1.0 - cum <= eps) & (eps >= CUM_RELIABLE)) | (bound <= eps))[0]
        if hit.size:
            return start + int(hit[0])
        total = cum[-1]
        start = stop
        chunk *= 2
    return cap


def binomial_matrix(eta, rows, cols):
    """``T[m, n] = C(n, m) eta^m (1-eta)^(n-m)`` for m < rows, n < cols."""
    m = np.arange(rows)[:, None].astype(np.float64)
    n = np.arange(cols)[None, :].astype(np.float64)
    T = np.zeros((rows, cols))
    if eta >= 1.0:
        k = min(rows, cols)
        T[np.arange(k), np.arange(k)] = 1.0
        return T
    if eta <= 0.0:
        T[0, :] = 1.0
        return T
    valid = m <= n
    with np.errstate(invalid="ignore"):
        logc = gammaln(n + 1.0) - gammaln(m + 1.0) - gammaln(n - m + 1.0)
        logt = logc + m * np.log(eta) + (n - m) * np.log1p(-eta)
    T[valid] = np.exp(np.where(valid, logt, -np.inf))[valid]
    return T


def pair_grid(M, b, eta_s, eta_i, rows, cols):
    """Photoelectron distribution of a thinned twin-photon component."""
    if b <= 0.0:
        out = np.zeros((rows, cols))
        out[0, 0] = 1.0
        return out
    K = nb_cutoff(M, b, 1e-16, 1_000_000) + 1
    pp = nb_pmf(M, b, K)
    Bs = binomial_matrix(eta_s, rows, K)
    Bi = binomial_matrix(eta_i, cols, K)
    return (Bs * pp) @ Bi.T


def _convolve_axis(Q, kernel, axis):
    if kernel.size == 1:
        return Q * kernel[0]
    Q = np.moveaxis(Q, axis, 0)
    out = np.zeros_like(Q)
    n = Q.shape[0]
    for u in range(min(kernel.size, n)):
        out[u:] += kernel[u] * Q[: n - u]
    return np.moveaxis(out, 0, axis)


def model_grid(eta_s, eta_i, M_p, b_p, M_s, b_s, M_i, b_i, rows, cols, eps):
    e = eps / 4.0
    qs = min(rows, nb_cutoff(M_p, eta_s * b_p, e, rows) + 1)
    qi = min(cols, nb_cutoff(M_p, eta_i * b_p, e, cols) + 1)
    Q = np.zeros((rows, cols))
    Q[:qs, :qi] = pair_grid(M_p, b_p, eta_s, eta_i, qs, qi)
    ls = min(rows, nb_cutoff(M_s, eta_s * b_s, e, rows) + 1)
    li = min(cols, nb_cutoff(M_i, eta_i * b_i, e, cols) + 1)
    Q = _convolve_axis(Q, nb_pmf(M_s, eta_s * b_s, ls), 0)
    Q = _convolve_axis(Q, nb_pmf(M_i, eta_i * b_i, li), 1)
    return Q


def model_shape(eta_s, eta_i, M_p, b_p, M_s, b_s, M_i, b_i, h_rows, h_cols, eps, cap):
    e = eps / 4.0
    cs = nb_cutoff(M_p, eta_s * b_p, e, cap) + nb_cutoff(M_s, eta_s * b_s, e, cap) + 1
    ci = nb_cutoff(M_p, eta_i * b_p, e, cap) + nb_cutoff(M_i, eta_i * b_i, e, cap) + 1
    return max(h_rows, min(cap, cs)), max(h_cols, min(cap, ci))


def declination_batch(f, params, eps, cap):
    """Declination of ``f`` against the model at each row of ``params``."""
    h_rows, h_cols = f.shape
    out = np.empty(params.shape[0])
    for k in range(params.shape[0]):
        p = params[k]
        rows, cols = model_shape(*p, h_rows, h_cols, eps, cap)
        model = model_grid(*p, rows, cols, eps)
        model[:h_rows, :h_cols] -= f
        out[k] = np.sqrt(np.sum(model * model))
    return out

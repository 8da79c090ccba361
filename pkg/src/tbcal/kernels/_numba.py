"""numba-compiled kernels.

The thinned pair component is evaluated from its probability generating
function ``[1 + b - b (a_s + eta_s z_s)(a_i + eta_i z_i)]^(-M)`` with
``a = 1 - eta``.  Matching coefficients of ``H dP/dz_s = -M P dH/dz_s`` gives a
three-term recurrence whose terms are all non-negative, so it is stable and
needs no photon-number truncation.
"""

import math

import numpy as np
from numba import njit

PARAM_COLUMNS = 8


@njit(cache=True)
def discretize(v, dv):
    out = np.empty(v.shape[0], dtype=np.int64)
    under = 0
    for j in range(v.shape[0]):
        m = math.floor(v[j] / dv + 0.5)
        if m < 0:
            m = 0
            under += 1
        out[j] = m
    return out, under


@njit(cache=True)
def count_covariance(v_s, v_i, dv_s, dv_i):
    n = v_s.shape[0]
    a = np.empty(n)
    b = np.empty(n)
    sa = 0.0
    sb = 0.0
    for j in range(n):
        x = math.floor(v_s[j] / dv_s + 0.5)
        y = math.floor(v_i[j] / dv_i + 0.5)
        if x < 0.0:
            x = 0.0
        if y < 0.0:
            y = 0.0
        a[j] = x
        b[j] = y
        sa += x
        sb += y
    ma = sa / n
    mb = sb / n
    saa = 0.0
    sbb = 0.0
    sab = 0.0
    for j in range(n):
        da = a[j] - ma
        db = b[j] - mb
        saa += da * da
        sbb += db * db
        sab += da * db
    if saa <= 0.0 or sbb <= 0.0:
        return np.nan
    return sab / math.sqrt(saa * sbb)


@njit(cache=True)
def covariance_grid(v_s, v_i, dvs, dvi):
    out = np.empty(dvs.shape[0])
    for k in range(dvs.shape[0]):
        out[k] = count_covariance(v_s, v_i, dvs[k], dvi[k])
    return out


@njit(cache=True)
def histogram2d(m_s, m_i):
    rows = 0
    cols = 0
    for j in range(m_s.shape[0]):
        if m_s[j] > rows:
            rows = m_s[j]
        if m_i[j] > cols:
            cols = m_i[j]
    out = np.zeros((rows + 1, cols + 1), dtype=np.int64)
    for j in range(m_s.shape[0]):
        out[m_s[j], m_i[j]] += 1
    return out


@njit(cache=True)
def _nb_logpmf(n, M, b):
    return (math.lgamma(n + M) - math.lgamma(n + 1.0) - math.lgamma(M)
            + n * math.log(b) - (n + M) * math.log1p(b))


@njit(cache=True)
def nb_pmf(M, b, length):
    out = np.zeros(length)
    if length == 0:
        return out
    if b <= 0.0:
        out[0] = 1.0
        return out
    log0 = -M * math.log1p(b)
    if log0 < -700.0:
        for n in range(length):
            out[n] = math.exp(_nb_logpmf(n, M, b))
        return out
    x = b / (1.0 + b)
    out[0] = math.exp(log0)
    for n in range(1, length):
        out[n] = out[n - 1] * (n - 1.0 + M) / n * x
    return out


CUM_RELIABLE = 1e-12  # below this, 1 - cum is dominated by rounding


@njit(cache=True)
def nb_cutoff(M, b, eps, cap):
    """Smallest cutoff ``K`` with ``P(n > K) <= eps``, or ``cap``."""
    if b <= 0.0:
        return 0
    log0 = -M * math.log1p(b)
    x = b / (1.0 + b)
    p = math.exp(log0)
    cum = 0.0
    for n in range(cap + 1):
        if log0 < -700.0:
            p = math.exp(_nb_logpmf(n, M, b))
        elif n > 0:
            p = p * (n - 1.0 + M) / n * x
        cum += p
        if eps >= CUM_RELIABLE and 1.0 - cum <= eps:
            return n
        # rigorous geometric tail bound, needed once 1 - cum cancels
        r = x if M < 1.0 else (n + M) / (n + 1.0) * x
        if r < 1.0 and p * r / (1.0 - r) <= eps:
            return n
    return cap


@njit(cache=True)
def pair_grid(M, b, eta_s, eta_i, rows, cols):
    """Photoelectron distribution of a thinned twin-photon component."""
    out = np.zeros((rows, cols))
    if b <= 0.0:
        out[0, 0] = 1.0
        return out
    a_s = 1.0 - eta_s
    a_i = 1.0 - eta_i
    h00 = 1.0 + b - b * a_s * a_i
    g10 = b * eta_s * a_i / h00
    g01 = b * a_s * eta_i / h00
    g11 = b * eta_s * eta_i / h00
    out[0, 0] = math.exp(-M * math.log(h00))
    for k in range(1, cols):
        out[0, k] = (M + k - 1.0) * g01 / k * out[0, k - 1]
    for j in range(1, rows):
        w = (M + j - 1.0) / j
        out[j, 0] = w * g10 * out[j - 1, 0]
        for k in range(1, cols):
            out[j, k] = (w * (g10 * out[j - 1, k] + g11 * out[j - 1, k - 1])
                         + g01 * out[j, k - 1])
    return out


@njit(cache=True)
def model_grid(eta_s, eta_i, M_p, b_p, M_s, b_s, M_i, b_i, rows, cols, eps):
    e = eps / 4.0
    # the pair grid is only carried over its own support; noise spreads it
    qs = min(rows, nb_cutoff(M_p, eta_s * b_p, e, rows) + 1)
    qi = min(cols, nb_cutoff(M_p, eta_i * b_p, e, cols) + 1)
    Q = pair_grid(M_p, b_p, eta_s, eta_i, qs, qi)
    ls = min(rows, nb_cutoff(M_s, eta_s * b_s, e, rows) + 1)
    li = min(cols, nb_cutoff(M_i, eta_i * b_i, e, cols) + 1)
    ns = nb_pmf(M_s, eta_s * b_s, ls)
    ni = nb_pmf(M_i, eta_i * b_i, li)
    R = np.zeros((rows, qi))
    for t in range(qs):
        for u in range(min(ls, rows - t)):
            w = ns[u]
            for k in range(qi):
                R[t + u, k] += w * Q[t, k]
    out = np.zeros((rows, cols))
    for j in range(rows):
        for v in range(qi):
            x = R[j, v]
            if x == 0.0:
                continue
            for u in range(min(li, cols - v)):
                out[j, v + u] += ni[u] * x
    return out


@njit(cache=True)
def model_shape(eta_s, eta_i, M_p, b_p, M_s, b_s, M_i, b_i, h_rows, h_cols, eps, cap):
    e = eps / 4.0
    cs = nb_cutoff(M_p, eta_s * b_p, e, cap) + nb_cutoff(M_s, eta_s * b_s, e, cap) + 1
    ci = nb_cutoff(M_p, eta_i * b_p, e, cap) + nb_cutoff(M_i, eta_i * b_i, e, cap) + 1
    return max(h_rows, min(cap, cs)), max(h_cols, min(cap, ci))


@njit(cache=True)
def declination_batch(f, params, eps, cap):
    h_rows, h_cols = f.shape
    out = np.empty(params.shape[0])
    for k in range(params.shape[0]):
        p = params[k]
        rows, cols = model_shape(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7],
                                 h_rows, h_cols, eps, cap)
        model = model_grid(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7],
                           rows, cols, eps)
        acc = 0.0
        for j in range(rows):
            for i in range(cols):
                d = model[j, i]
                if j < h_rows and i < h_cols:
                    d -= f[j, i]
                acc += d * d
        out[k] = math.sqrt(acc)
    return out

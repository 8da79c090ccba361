"""Photon-number statistics of multi-mode thermal twin beams.

A twin beam is modelled as three independent multi-mode thermal fields: an
ideal paired field seen by both arms and one noise field per arm.  Each has
a Mandel-Rice (negative binomial) photon-number law with a possibly
non-integer number of modes ``M`` and mean ``b`` photons per mode.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import betainc
from scipy.stats import nbinom

from . import kernels
from .errors import InfeasibleError, ParameterDomainError, ResourceError
from .kernels import _numpy as _np_kernels

DEFAULT_EPSILON = 1e-10
DEFAULT_MAX_CELLS = 25_000_000
LOW_CONFIDENCE_TAIL = 1e-6


@dataclass(frozen=True)
class ModeParams:
    """``M`` equally populated thermal modes with ``b`` photons per mode."""

    M: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.M) and self.M > 0):
            raise ParameterDomainError(f"mode number must be positive, got M={self.M}")
        if not (np.isfinite(self.b) and self.b >= 0):
            raise ParameterDomainError(f"photons per mode must be >= 0, got b={self.b}")

    @classmethod
    def vacuum(cls):
        return cls(1.0, 0.0)

    @property
    def mean(self):
        return self.M * self.b

    @property
    def variance(self):
        return self.M * self.b * (1.0 + self.b)


@dataclass(frozen=True)
class TwinBeamParams:
    paired: ModeParams
    signal_noise: ModeParams
    idler_noise: ModeParams

    @classmethod
    def from_values(cls, M_p, b_p, M_s, b_s, M_i, b_i):
        return cls(ModeParams(M_p, b_p), ModeParams(M_s, b_s), ModeParams(M_i, b_i))

    def swapped(self):
        """Exchange the roles of signal and idler."""
        return TwinBeamParams(self.paired, self.idler_noise, self.signal_noise)

    def as_dict(self):
        return {
            "M_p": self.paired.M, "b_p": self.paired.b,
            "M_s": self.signal_noise.M, "b_s": self.signal_noise.b,
            "M_i": self.idler_noise.M, "b_i": self.idler_noise.b,
        }


@dataclass(frozen=True)
class JointPND:
    """Truncated joint distribution ``values[n_s, n_i]`` on a square grid.

    ``tail_bound`` bounds the probability mass that lies outside the grid.
    ``params`` records the twin beam the grid was built from, when known.
    """

    values: np.ndarray
    cutoff: int
    tail_bound: float
    params: Optional[TwinBeamParams] = field(default=None, compare=False)

    @property
    def total(self):
        return float(self.values.sum())


@dataclass(frozen=True)
class PhotonMoments:
    n_p_mean: float
    n_p_var: float
    n_s_mean: float
    n_s_var: float
    n_i_mean: float
    n_i_var: float


@dataclass(frozen=True)
class FieldDiagnostics:
    photon_covariance: float
    noise_reduction_factor: float
    mean_pairs: float
    mean_signal_noise: float
    mean_idler_noise: float


@dataclass(frozen=True)
class PndStatistics:
    mean_s: float
    mean_i: float
    var_s: float
    var_i: float
    cov: float
    diagnostics: FieldDiagnostics
    moments: Optional[PhotonMoments]
    low_confidence: bool


def _check_eta(eta, name="eta"):
    if not (0.0 <= eta <= 1.0):
        raise ParameterDomainError(f"{name} must lie in [0, 1], got {eta}")


def mandel_rice_logpmf(n, mode):
    """Log of the Mandel-Rice probability; ``-inf`` where it vanishes."""
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 0):
        raise ParameterDomainError("photon number must be non-negative")
    if mode.b == 0.0:
        return np.where(n == 0, 0.0, -np.inf)
    return nbinom.logpmf(n, mode.M, 1.0 / (1.0 + mode.b))


def mandel_rice_pmf(n, mode):
    """Probability of ``n`` photons in ``M`` thermal modes of mean ``b``.

    ``Gamma(n+M) / (n! Gamma(M)) * b^n / (1+b)^(n+M)``.  Accepts scalar or
    array ``n``.  Uses scipy's negative binomial, which is several times more
    accurate than ``exp`` of a log-gamma sum once ``n + M`` is in the
    thousands.
    """
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 0):
        raise ParameterDomainError("photon number must be non-negative")
    if mode.b == 0.0:
        out = np.where(n == 0, 1.0, 0.0)
    else:
        out = nbinom.pmf(n, mode.M, 1.0 / (1.0 + mode.b))
    return float(out) if out.ndim == 0 else out


def mandel_rice_sf(k, mode):
    """``P(n > k)`` for the Mandel-Rice law."""
    k = np.asarray(k, dtype=np.float64)
    if mode.b == 0.0:
        return np.zeros_like(k)
    return betainc(k + 1.0, mode.M, mode.b / (1.0 + mode.b))


def mandel_rice_vector(mode, epsilon=DEFAULT_EPSILON, max_cutoff=10_000_000):
    """Truncated Mandel-Rice pmf with the smallest cutoff leaving tail <= epsilon.

    Returns ``(pmf, cutoff, tail_bound)`` where ``pmf`` has ``cutoff + 1``
    entries and ``tail_bound`` is the exact excluded mass.
    """
    if not (0.0 < epsilon < 1.0):
        raise ParameterDomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if mode.b == 0.0:
        return np.ones(1), 0, 0.0
    # the tail is monotone in k: bracket then bisect
    hi = max(16, int(mode.mean + 10.0 * np.sqrt(mode.variance)) + 1)
    while mandel_rice_sf(hi, mode) > epsilon:
        if hi >= max_cutoff:
            raise ResourceError(
                f"Mandel-Rice cutoff exceeds {max_cutoff} for {mode}", required_cutoff=None)
        hi = min(2 * hi, max_cutoff)
    lo = -1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mandel_rice_sf(mid, mode) > epsilon:
            lo = mid
        else:
            hi = mid
    cutoff = hi
    pmf = mandel_rice_pmf(np.arange(cutoff + 1), mode)
    return pmf, cutoff, float(mandel_rice_sf(cutoff, mode))


def joint_pnd(params, epsilon=DEFAULT_EPSILON, max_cells=DEFAULT_MAX_CELLS):
    """Joint signal-idler photon-number distribution of a twin beam.

    The paired photons are shared by both arms, so
    ``p(n_s, n_i) = sum_n p_s(n_s - n) p_i(n_i - n) p_p(n)``.  Each component is
    truncated at ``epsilon / 3`` so the grid misses at most ``epsilon``.
    """
    e = epsilon / 3.0
    pp, kp, tp = mandel_rice_vector(params.paired, e)
    ps, ks, ts = mandel_rice_vector(params.signal_noise, e)
    pi, ki, ti = mandel_rice_vector(params.idler_noise, e)
    cutoff = kp + max(ks, ki)
    if (cutoff + 1) ** 2 > max_cells:
        raise ResourceError(
            f"joint grid needs cutoff {cutoff} ({(cutoff + 1) ** 2} cells) "
            f"above the cap of {max_cells} cells",
            required_cutoff=cutoff,
        )
    values = np.zeros((cutoff + 1, cutoff + 1))
    noise = np.outer(ps, pi)
    for n in range(kp + 1):
        values[n:n + ks + 1, n:n + ki + 1] += pp[n] * noise
    return JointPND(values, cutoff, tp + ts + ti, params)


def moments_to_mode_params(mean, variance):
    """Invert mean ``M b`` and variance ``M b (1 + b)`` for ``(M, b)``."""
    if not mean > 0:
        raise InfeasibleError(f"thermal model needs a positive mean, got {mean}")
    if not variance > mean:
        raise InfeasibleError(
            f"thermal model needs variance > mean, got variance={variance}, mean={mean}")
    excess = variance - mean  # one subtraction shared by both, so M * b == mean
    return ModeParams(mean * mean / excess, excess / mean)


def mode_params_to_moments(mode):
    return mode.mean, mode.variance


def bernoulli_kernel(m, n, eta):
    """Probability that ``m`` of ``n`` incident photons are detected."""
    _check_eta(eta)
    if m < 0 or n < 0:
        raise ParameterDomainError("photon and photoelectron numbers must be >= 0")
    if m > n:
        return 0.0
    return float(_np_kernels.binomial_matrix(eta, m + 1, n + 1)[m, n])


def bernoulli_matrix(eta, size):
    """Square detection matrix ``T[m, n]`` for ``0 <= m, n < size``."""
    _check_eta(eta)
    return _np_kernels.binomial_matrix(eta, size, size)


def detect_joint(pnd, eta_s, eta_i):
    """Apply independent Bernoulli detection to each arm of a joint PND."""
    _check_eta(eta_s, "eta_s")
    _check_eta(eta_i, "eta_i")
    size = pnd.cutoff + 1
    Ts = bernoulli_matrix(eta_s, size)
    Ti = bernoulli_matrix(eta_i, size)
    return JointPND(Ts @ pnd.values @ Ti.T, pnd.cutoff, pnd.tail_bound, None)


def photoelectron_model(params, eta_s, eta_i, shape=None, epsilon=DEFAULT_EPSILON,
                        max_grid=4096):
    """Photoelectron distribution of a detected twin beam.

    Goes through the compiled generating-function kernel instead of building the
    photon-level grid first, so it stays cheap for broad noise components.  The
    returned grid is at least ``shape`` and large enough that the excluded mass
    is below ``epsilon`` (unless capped at ``max_grid`` per axis).
    """
    _check_eta(eta_s, "eta_s")
    _check_eta(eta_i, "eta_i")
    p = _param_row(params, eta_s, eta_i)
    h_rows, h_cols = shape if shape is not None else (1, 1)
    rows, cols = kernels.model_shape(*p, int(h_rows), int(h_cols), epsilon, int(max_grid))
    return kernels.model_grid(*p, rows, cols, epsilon)


def _param_row(params, eta_s, eta_i):
    return (
        float(eta_s), float(eta_i),
        float(params.paired.M), float(params.paired.b),
        float(params.signal_noise.M), float(params.signal_noise.b),
        float(params.idler_noise.M), float(params.idler_noise.b),
    )


def _union_pad(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    shape = (max(a.shape[0], b.shape[0]), max(a.shape[1], b.shape[1]))
    pa = np.zeros(shape)
    pb = np.zeros(shape)
    pa[: a.shape[0], : a.shape[1]] = a
    pb[: b.shape[0], : b.shape[1]] = b
    return pa, pb


def declination(p_model, f_empirical):
    """Euclidean distance between two distributions on zero-padded grids."""
    a = getattr(p_model, "values", p_model)
    b = getattr(f_empirical, "freq", f_empirical)
    b = getattr(b, "values", b)
    pa, pb = _union_pad(a, b)
    return float(np.sqrt(np.sum((pa - pb) ** 2)))


def _normalized(cov, var_s, var_i):
    if var_s <= 0 or var_i <= 0:
        return float("nan")
    return float(np.clip(cov / np.sqrt(var_s * var_i), -1.0, 1.0))


def _reduction(var_s, var_i, cov, mean_s, mean_i):
    total = mean_s + mean_i
    if total <= 0:
        return float("nan")
    return float(max(var_s + var_i - 2.0 * cov, 0.0) / total)


def field_diagnostics(params):
    """Photon covariance and noise reduction factor computed analytically."""
    p, s, i = params.paired, params.signal_noise, params.idler_noise
    mean_s, mean_i = p.mean + s.mean, p.mean + i.mean
    var_s, var_i = p.variance + s.variance, p.variance + i.variance
    cov = p.variance
    return FieldDiagnostics(
        photon_covariance=_normalized(cov, var_s, var_i),
        noise_reduction_factor=_reduction(var_s, var_i, cov, mean_s, mean_i),
        mean_pairs=p.mean,
        mean_signal_noise=s.mean,
        mean_idler_noise=i.mean,
    )


def pnd_statistics(pnd):
    """Marginal moments, normalized covariance and noise reduction factor.

    Sums run over the truncated grid.  Component means are only available
    when the PND remembers the twin beam it was built from; otherwise they
    are NaN.
    """
    p = pnd.values
    n_s = np.arange(p.shape[0], dtype=np.float64)
    n_i = np.arange(p.shape[1], dtype=np.float64)
    ps = p.sum(axis=1)
    pi = p.sum(axis=0)
    mean_s = float(n_s @ ps)
    mean_i = float(n_i @ pi)
    var_s = float(((n_s - mean_s) ** 2) @ ps)
    var_i = float(((n_i - mean_i) ** 2) @ pi)
    cov = float((n_s - mean_s) @ p @ (n_i - mean_i))
    if pnd.params is not None:
        tb = pnd.params
        comp = (tb.paired.mean, tb.signal_noise.mean, tb.idler_noise.mean)
        moments = PhotonMoments(
            tb.paired.mean, tb.paired.variance,
            tb.signal_noise.mean, tb.signal_noise.variance,
            tb.idler_noise.mean, tb.idler_noise.variance,
        )
    else:
        comp = (float("nan"),) * 3
        moments = None
    diag = FieldDiagnostics(
        photon_covariance=_normalized(cov, var_s, var_i),
        noise_reduction_factor=_reduction(var_s, var_i, cov, mean_s, mean_i),
        mean_pairs=comp[0],
        mean_signal_noise=comp[1],
        mean_idler_noise=comp[2],
    )
    return PndStatistics(mean_s, mean_i, var_s, var_i, cov, diag, moments,
                         low_confidence=pnd.tail_bound > LOW_CONFIDENCE_TAIL)

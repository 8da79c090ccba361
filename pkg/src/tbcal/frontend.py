"""Analog front end: voltage moments, photoelectron binning and window search."""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import kernels
from .errors import (
    InsufficientDataError,
    OptimizationFailedError,
    ParameterDomainError,
    UndefinedCovarianceError,
)

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class VoltageEnsemble:
    """``N`` simultaneous (signal, idler) voltage readings."""

    v_s: np.ndarray
    v_i: np.ndarray

    def __post_init__(self):
        v_s = np.ascontiguousarray(self.v_s, dtype=np.float64)
        v_i = np.ascontiguousarray(self.v_i, dtype=np.float64)
        if v_s.ndim != 1 or v_s.shape != v_i.shape:
            raise ParameterDomainError("voltage arms must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(v_s)) and np.all(np.isfinite(v_i))):
            raise ParameterDomainError("voltage ensemble contains non-finite values")
        object.__setattr__(self, "v_s", v_s)
        object.__setattr__(self, "v_i", v_i)

    @classmethod
    def from_pairs(cls, pairs):
        arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def N(self):
        return self.v_s.shape[0]

    def scaled(self, alpha_s, alpha_i=None):
        alpha_i = alpha_s if alpha_i is None else alpha_i
        return VoltageEnsemble(self.v_s * alpha_s, self.v_i * alpha_i)


@dataclass(frozen=True)
class AnalogMoments:
    mean_s: float
    mean_i: float
    var_s: float
    var_i: float
    cov: float
    ratio_r: Optional[float]


@dataclass(frozen=True)
class WindowWidths:
    dv_s: float
    dv_i: float

    def __post_init__(self):
        if not (self.dv_s > 0 and self.dv_i > 0 and np.isfinite(self.dv_s)
                and np.isfinite(self.dv_i)):
            raise ParameterDomainError(
                f"window widths must be positive, got ({self.dv_s}, {self.dv_i})")


@dataclass(frozen=True)
class CountRecord:
    m_s: np.ndarray
    m_i: np.ndarray
    underflow_s: int = 0
    underflow_i: int = 0

    @property
    def underflow_count(self):
        return self.underflow_s + self.underflow_i

    @property
    def N(self):
        return self.m_s.shape[0]


@dataclass(frozen=True)
class JointHistogram:
    """Relative frequencies ``freq[m_s, m_i]`` of ``N`` events."""

    freq: np.ndarray
    N: int
    counts: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def max_s(self):
        return self.freq.shape[0] - 1

    @property
    def max_i(self):
        return self.freq.shape[1] - 1


@dataclass
class CovarianceScan:
    """Every evaluated ``(dv_s, dv_i, c_m)`` in evaluation order."""

    dv_s: np.ndarray
    dv_i: np.ndarray
    c: np.ndarray
    best: int
    mode: str = "ratio"

    @property
    def argmax(self) -> Tuple[float, float, float]:
        return float(self.dv_s[self.best]), float(self.dv_i[self.best]), float(self.c[self.best])

    def rows(self):
        return np.column_stack([self.dv_s, self.dv_i, self.c])


@dataclass(frozen=True)
class WindowSearchConfig:
    """Window scan settings.

    ``dv_grid`` is ``(min, max, step)`` for the signal axis; ``None`` picks a
    grid from the data.  In 2-D mode ``dv_grid_i`` defaults to the signal grid
    scaled by the voltage ratio.
    """

    mode: str = "ratio"
    dv_grid: Optional[Tuple[float, float, float]] = None
    dv_grid_i: Optional[Tuple[float, float, float]] = None
    refine_passes: int = 3
    n_points: int = 100

    def __post_init__(self):
        if self.mode not in ("ratio", "2d"):
            raise ParameterDomainError(f"unknown window mode {self.mode!r}")
        for g in (self.dv_grid, self.dv_grid_i):
            if g is not None:
                lo, hi, step = g
                if not (0 < lo < hi and step > 0):
                    raise ParameterDomainError(f"bad window grid {g}")
        if self.refine_passes < 0 or self.n_points < 2:
            raise ParameterDomainError("refine_passes >= 0 and n_points >= 2 required")


def analog_moments(ensemble):
    """Sample means and central second moments with 1/N normalization."""
    if ensemble.N < 2:
        raise InsufficientDataError(f"need at least 2 voltage pairs, got {ensemble.N}")
    vs, vi = ensemble.v_s, ensemble.v_i
    ms, mi = vs.mean(), vi.mean()
    ds, di = vs - ms, vi - mi
    var_s = float(np.dot(ds, ds) / ensemble.N)
    var_i = float(np.dot(di, di) / ensemble.N)
    cov = float(np.dot(ds, di) / ensemble.N)
    return AnalogMoments(float(ms), float(mi), var_s, var_i, cov,
                         float(mi / ms) if ms > 0 else None)


def discretize(ensemble, windows):
    """Round each voltage to the nearest multiple of its window width.

    Negative results (baseline below zero) are clamped to 0 and tallied.
    """
    m_s, us = kernels.discretize(ensemble.v_s, float(windows.dv_s))
    m_i, ui = kernels.discretize(ensemble.v_i, float(windows.dv_i))
    return CountRecord(m_s, m_i, int(us), int(ui))


def histogram(record):
    if record.N == 0:
        raise InsufficientDataError("empty count record")
    counts = kernels.histogram2d(record.m_s, record.m_i)
    return JointHistogram(counts / record.N, record.N, counts)


def histogram_from_distribution(p, trim=1e-14):
    """Wrap a model distribution as a histogram, trimming negligible edges.

    Trailing rows and columns are dropped while their combined mass stays
    below ``trim``; the remainder is renormalized to unit sum.
    """
    p = np.asarray(getattr(p, "values", p), dtype=np.float64)
    rows = p.sum(axis=1)
    cols = p.sum(axis=0)
    r = len(rows)
    dropped = 0.0
    while r > 1 and dropped + rows[r - 1] < trim / 2:
        dropped += rows[r - 1]
        r -= 1
    c = len(cols)
    dropped = 0.0
    while c > 1 and dropped + cols[c - 1] < trim / 2:
        dropped += cols[c - 1]
        c -= 1
    f = p[:r, :c].copy()
    f /= f.sum()
    return JointHistogram(f, 0, None)


def discrete_covariance(record):
    """Normalized signal-idler count covariance of a record."""
    c = kernels.count_covariance(record.m_s.astype(np.float64),
                                 record.m_i.astype(np.float64), 1.0, 1.0)
    if not np.isfinite(c):
        raise UndefinedCovarianceError("a count arm is constant; covariance undefined")
    return float(c)


def default_grid(am, n_points=100):
    """Signal-axis grid ``(min, max, step)`` spanning the plausible gains."""
    if am.mean_s <= 0:
        raise OptimizationFailedError("mean signal voltage must be positive to build a grid")
    lo = 0.05 * am.mean_s
    hi = 2.0 * max(am.mean_s, am.var_s / am.mean_s)
    return lo, hi, (hi - lo) / (n_points - 1)


def _axis(lo, hi, step):
    n = int(np.floor((hi - lo) / step * (1 + 1e-12))) + 1
    return lo + step * np.arange(n)


def _refined_axis(center, step, n_points):
    half = n_points // 2
    pts = center + step * np.arange(-half, half + 1)
    return pts[pts > 0]


def _pick(dv_s, dv_i, c):
    """Index of the best point; near-ties go to the widest windows.

    Integer fractions of the true width reproduce a scaled copy of the same
    counts and hence the same covariance, so the widest window is the one
    with physical meaning.
    """
    ok = np.isfinite(c)
    if not ok.any():
        return -1
    best = np.max(c[ok])
    tol = TIE_RTOL * max(abs(best), 1e-300)
    cand = np.nonzero(ok & (c >= best - tol))[0]
    order = np.lexsort((-dv_i[cand], -dv_s[cand]))
    return int(cand[order[0]])


def optimize_windows(ensemble, config=None):
    """Window widths maximizing the normalized count covariance.

    Returns ``(WindowWidths, CovarianceScan)``.  Ratio mode ties the idler
    width to ``r * dv_s`` with ``r`` the mean voltage ratio; 2-D mode scans
    both widths.  Each refinement pass re-centres on the incumbent with a ten
    times finer step over a ten times narrower span.
    """
    config = config or WindowSearchConfig()
    am = analog_moments(ensemble)
    if am.ratio_r is None or am.ratio_r <= 0:
        raise OptimizationFailedError("mean voltages must be positive for the window scan")
    r = am.ratio_r
    lo, hi, step = config.dv_grid or default_grid(am, config.n_points)
    if config.mode == "2d":
        lo_i, hi_i, step_i = config.dv_grid_i or (lo * r, hi * r, step * r)
    vs, vi = ensemble.v_s, ensemble.v_i
    trace_s: List[np.ndarray] = []
    trace_i: List[np.ndarray] = []
    trace_c: List[np.ndarray] = []

    def evaluate(ds, di):
        c = kernels.covariance_grid(vs, vi, np.ascontiguousarray(ds), np.ascontiguousarray(di))
        trace_s.append(ds)
        trace_i.append(di)
        trace_c.append(c)

    def incumbent():
        S, I, C = (np.concatenate(t) for t in (trace_s, trace_i, trace_c))
        return _pick(S, I, C), S, I, C

    if config.mode == "ratio":
        ax = _axis(lo, hi, step)
        n_coarse = len(ax)
        evaluate(ax, r * ax)
        for _ in range(config.refine_passes):
            k, S, I, C = incumbent()
            if k < 0:
                break
            step /= 10.0
            ax = _refined_axis(S[k], step, n_coarse)
            evaluate(ax, r * ax)
    else:
        ax_s = _axis(lo, hi, step)
        ax_i = _axis(lo_i, hi_i, step_i)
        gs, gi = np.meshgrid(ax_s, ax_i, indexing="ij")
        evaluate(gs.ravel(), gi.ravel())
        ns, ni = len(ax_s), len(ax_i)
        for _ in range(config.refine_passes):
            k, S, I, C = incumbent()
            if k < 0:
                break
            step /= 10.0
            step_i /= 10.0
            gs, gi = np.meshgrid(_refined_axis(S[k], step, ns),
                                 _refined_axis(I[k], step_i, ni), indexing="ij")
            evaluate(gs.ravel(), gi.ravel())

    k, S, I, C = incumbent()
    if k < 0:
        raise OptimizationFailedError("every scanned window pair gave a constant count arm")
    scan = CovarianceScan(S, I, C, k, config.mode)
    return WindowWidths(float(S[k]), float(I[k])), scan

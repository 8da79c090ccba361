"""Detector efficiencies and twin-beam parameters from photoelectron data.

Two estimators are provided:

* :func:`fit_full` -- for each trial pair of efficiencies and mean pair number
  the photoelectron moments are inverted to photon moments, turned into a
  three-component thermal twin beam, pushed through Bernoulli detection and
  compared with the measured histogram.  The point of least declination wins.
* :func:`fit_simple` -- neglects noise photons; every trial signal efficiency
  then fixes all remaining parameters in closed form from the analog moments
  alone.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import least_squares

from . import kernels
from .errors import CalibrationFailedError, InfeasibleError, ParameterDomainError
from .frontend import (
    AnalogMoments,
    CovarianceScan,
    VoltageEnsemble,
    WindowWidths,
    analog_moments,
    discretize,
    histogram,
)
from .photostats import (
    DEFAULT_EPSILON,
    FieldDiagnostics,
    ModeParams,
    PhotonMoments,
    TwinBeamParams,
    field_diagnostics,
    moments_to_mode_params,
)

log = logging.getLogger(__name__)

VACUUM_TOL = 1e-9
TIE_RTOL = 1e-12

V_NEG_PAIR = "negative pair mean"
V_SUB_PAIR = "sub-Poissonian paired component"
V_NEG_S = "negative signal noise mean"
V_SUB_S = "sub-Poissonian signal noise"
V_NEG_I = "negative idler noise mean"
V_SUB_I = "sub-Poissonian idler noise"
V_ETA = "efficiency out of range"
V_WIDTH = "non-positive window width"


@dataclass(frozen=True)
class DetectorParams:
    """Efficiencies and window widths; widths may be ``None`` when unknown."""

    eta_s: float
    eta_i: float
    dv_s: Optional[float] = None
    dv_i: Optional[float] = None

    def __post_init__(self):
        for name in ("eta_s", "eta_i"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ParameterDomainError(f"{name} must lie in (0, 1], got {v}")
        for name in ("dv_s", "dv_i"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ParameterDomainError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class PhotoelectronMoments:
    m_s_mean: float
    m_i_mean: float
    m_s_var: float
    m_i_var: float
    m_cov: float


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    violations: Tuple[str, ...] = ()


@dataclass
class CalibrationResult:
    method: str
    detector: DetectorParams
    twin_beam: TwinBeamParams
    n_p_mean: float
    diagnostics: FieldDiagnostics
    d_min: float
    boundary_minimum: bool
    search_trace: Optional[np.ndarray] = None
    window_scan: Optional[CovarianceScan] = None
    underflow_count: int = 0
    extras: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class FullFitConfig:
    """Search settings for :func:`fit_full`.

    ``eta_grid`` is ``(min, max, points)`` shared by both efficiency axes.
    """

    eta_grid: Tuple[float, float, int] = (0.01, 0.6, 60)
    n_p_points: int = 60
    refine_passes: int = 3
    epsilon: float = DEFAULT_EPSILON
    max_grid: int = 512
    polish: bool = True
    keep_trace: bool = True


@dataclass(frozen=True)
class SimpleFitConfig:
    eta_grid: Tuple[float, float, int] = (0.01, 0.6, 60)
    refine_passes: int = 3
    epsilon: float = DEFAULT_EPSILON
    max_grid: int = 512
    keep_trace: bool = True


@dataclass(frozen=True)
class SimpleSolution:
    eta_s: float
    dv_s: float
    eta_i: float
    dv_i: float
    n_p_mean: float
    n_p_var: float


def photoelectron_moments(record):
    """First and second moments of a count record (1/N normalization)."""
    ms = record.m_s.astype(np.float64)
    mi = record.m_i.astype(np.float64)
    a, b = ms.mean(), mi.mean()
    da, db = ms - a, mi - b
    n = record.N
    return PhotoelectronMoments(float(a), float(b), float(da @ da / n),
                                float(db @ db / n), float(da @ db / n))


def histogram_moments(freq):
    """Photoelectron moments of a distribution on a grid."""
    freq = np.asarray(getattr(freq, "freq", freq), dtype=np.float64)
    ps, pi = freq.sum(axis=1), freq.sum(axis=0)
    ks = np.arange(freq.shape[0], dtype=np.float64)
    ki = np.arange(freq.shape[1], dtype=np.float64)
    a, b = ks @ ps, ki @ pi
    return PhotoelectronMoments(float(a), float(b), float((ks - a) ** 2 @ ps),
                                float((ki - b) ** 2 @ pi), float((ks - a) @ freq @ (ki - b)))


def forward_moments(ph, eta_s, eta_i):
    """Photoelectron moments produced by Bernoulli detection of photon moments."""
    ms = eta_s * (ph.n_p_mean + ph.n_s_mean)
    mi = eta_i * (ph.n_p_mean + ph.n_i_mean)
    vs = eta_s ** 2 * (ph.n_p_var + ph.n_s_var
                       + (1 - eta_s) / eta_s * (ph.n_p_mean + ph.n_s_mean))
    vi = eta_i ** 2 * (ph.n_p_var + ph.n_i_var
                       + (1 - eta_i) / eta_i * (ph.n_p_mean + ph.n_i_mean))
    return PhotoelectronMoments(ms, mi, vs, vi, eta_s * eta_i * ph.n_p_var)


def twin_beam_moments(tb):
    p, s, i = tb.paired, tb.signal_noise, tb.idler_noise
    return PhotonMoments(p.mean, p.variance, s.mean, s.variance, i.mean, i.variance)


def invert_moments(pm, eta_s, eta_i, n_p_mean):
    """Photon moments implied by photoelectron moments at given efficiencies.

    The mean pair number is a free parameter: the five moment relations do not
    determine it together with both efficiencies.
    """
    for name, eta in (("eta_s", eta_s), ("eta_i", eta_i)):
        if not (0.0 < eta <= 1.0):
            raise ParameterDomainError(f"{name} must lie in (0, 1], got {eta}")
    if n_p_mean < 0:
        raise ParameterDomainError(f"mean pair number must be >= 0, got {n_p_mean}")
    pair_var = pm.m_cov / (eta_s * eta_i)
    return PhotonMoments(
        n_p_mean=n_p_mean,
        n_p_var=pair_var,
        n_s_mean=pm.m_s_mean / eta_s - n_p_mean,
        n_s_var=pm.m_s_var / eta_s ** 2 - pair_var - (1 - eta_s) / eta_s ** 2 * pm.m_s_mean,
        n_i_mean=pm.m_i_mean / eta_i - n_p_mean,
        n_i_var=pm.m_i_var / eta_i ** 2 - pair_var - (1 - eta_i) / eta_i ** 2 * pm.m_i_mean,
    )


def check_feasibility(ph):
    violations = []
    if ph.n_p_mean < 0:
        violations.append(V_NEG_PAIR)
    elif ph.n_p_mean > 0 and not ph.n_p_var > ph.n_p_mean:
        violations.append(V_SUB_PAIR)
    for mean, var, neg, sub in ((ph.n_s_mean, ph.n_s_var, V_NEG_S, V_SUB_S),
                                (ph.n_i_mean, ph.n_i_var, V_NEG_I, V_SUB_I)):
        if abs(mean) <= VACUUM_TOL:
            continue
        if mean < 0:
            violations.append(neg)
        elif not var > mean:
            violations.append(sub)
    return FeasibilityReport(not violations, tuple(violations))


def _component(mean, var):
    if mean <= VACUUM_TOL:
        return ModeParams.vacuum()
    return moments_to_mode_params(mean, var)


def twin_beam_from_moments(ph):
    """Three-component thermal twin beam matching the photon moments.

    Components whose mean is within ``VACUUM_TOL`` of zero become vacuum.
    """
    report = check_feasibility(ph)
    if not report.feasible:
        raise InfeasibleError("photon moments infeasible: " + ", ".join(report.violations))
    return TwinBeamParams(
        _component(ph.n_p_mean, ph.n_p_var),
        _component(ph.n_s_mean, ph.n_s_var),
        _component(ph.n_i_mean, ph.n_i_var),
    )


def _mode_arrays(mean, var):
    """Vectorized version of :func:`_component`; returns (M, b)."""
    vac = mean <= VACUUM_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        excess = var - mean
        M = np.where(vac, 1.0, mean * mean / excess)
        b = np.where(vac, 0.0, excess / mean)
    return M, b


def _candidates(pm, es, ei, npm):
    """Feasibility mask, parameter rows and violation tallies for trial points.

    Mirrors :func:`invert_moments` + :func:`check_feasibility` on arrays.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        pvar = pm.m_cov / (es * ei)
        ns = pm.m_s_mean / es - npm
        ni = pm.m_i_mean / ei - npm
        vs = pm.m_s_var / es ** 2 - pvar - (1 - es) / es ** 2 * pm.m_s_mean
        vi = pm.m_i_var / ei ** 2 - pvar - (1 - ei) / ei ** 2 * pm.m_i_mean
    bad = {
        V_ETA: ~((es > 0) & (es <= 1) & (ei > 0) & (ei <= 1)),
        V_NEG_PAIR: npm < 0,
        V_SUB_PAIR: (npm > 0) & ~(pvar > npm),
        V_NEG_S: (ns < -VACUUM_TOL),
        V_SUB_S: (ns > VACUUM_TOL) & ~(vs > ns),
        V_NEG_I: (ni < -VACUUM_TOL),
        V_SUB_I: (ni > VACUUM_TOL) & ~(vi > ni),
    }
    ok = np.ones(es.shape, dtype=bool)
    for v in bad.values():
        ok &= ~v
    tallies = {k: int(v.sum()) for k, v in bad.items()}
    Mp, bp = _mode_arrays(np.where(ok, npm, 1.0), np.where(ok, pvar, 2.0))
    Ms, bs = _mode_arrays(np.where(ok, ns, 1.0), np.where(ok, vs, 2.0))
    Mi, bi = _mode_arrays(np.where(ok, ni, 1.0), np.where(ok, vi, 2.0))
    rows = np.column_stack([es, ei, Mp, bp, Ms, bs, Mi, bi])
    return ok, rows, tallies


def _best(points, d):
    """Index of the minimum; near-ties go to lowest eta_s, eta_i, then n_p."""
    dmin = np.min(d)
    cand = np.nonzero(d <= dmin + TIE_RTOL * max(dmin, 1e-300))[0]
    order = np.lexsort(tuple(points[cand, j] for j in reversed(range(points.shape[1]))))
    return int(cand[order[0]])


def _np_upper(pm, es, ei):
    return np.minimum(pm.m_s_mean / es, pm.m_i_mean / ei)


def _np_interval(pm, es, ei):
    """Closure of the feasible mean-pair-number interval at each efficiency pair.

    Noise means must stay non-negative (upper end) and each non-vacuum noise
    arm super-Poissonian, i.e. ``<n_p> > <m_c>/eta_c - var_c`` (lower end).
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        pvar = pm.m_cov / (es * ei)
        ms, mi = pm.m_s_mean / es, pm.m_i_mean / ei
        vs = pm.m_s_var / es ** 2 - pvar - (1 - es) / es ** 2 * pm.m_s_mean
        vi = pm.m_i_var / ei ** 2 - pvar - (1 - ei) / ei ** 2 * pm.m_i_mean
    upper = np.minimum(np.minimum(ms, mi), pvar)
    lower = np.maximum(0.0, np.maximum(ms - vs, mi - vi))
    return lower, upper


class _FullSearch:
    """Evaluates trial points, profiles the pair number and keeps the best point."""

    def __init__(self, f, pm, config):
        self.f = np.ascontiguousarray(f, dtype=np.float64)
        self.pm = pm
        self.config = config
        self.best_point = None
        self.best_d = np.inf
        self.evaluated = 0
        self.tallies = {}
        self.surface: List[np.ndarray] = []

    def evaluate(self, es, ei, npm):
        ok, rows, tallies = _candidates(self.pm, es, ei, npm)
        for k, v in tallies.items():
            self.tallies[k] = self.tallies.get(k, 0) + v
        d = np.full(es.shape, np.nan)
        if ok.any():
            d[ok] = kernels.declination_batch(self.f, np.ascontiguousarray(rows[ok]),
                                              self.config.epsilon, self.config.max_grid)
            self.evaluated += int(ok.sum())
            pts = np.column_stack([es[ok], ei[ok], npm[ok]])
            k = _best(pts, d[ok])
            cand = np.vstack([pts[k], self.best_point]) if self.best_point is not None else pts[k:k + 1]
            dd = np.array([d[ok][k], self.best_d]) if self.best_point is not None else d[ok][k:k + 1]
            j = _best(cand, dd)
            self.best_point, self.best_d = cand[j].copy(), float(dd[j])
        return ok, d

    def profile(self, es, ei):
        """Least declination over the pair number for each efficiency pair.

        A grid of ``n_p_points`` over the feasible interval brackets the
        minimum, then a vectorized golden-section search narrows it down.  The
        declination is sharply V-shaped in the pair number when the noise
        means are small, so a grid alone cannot resolve it.
        """
        n_t = self.config.n_p_points
        lower, upper = _np_interval(self.pm, es, ei)
        has = np.isfinite(lower) & np.isfinite(upper) & (upper >= lower)
        es, ei, lower, upper = es[has], ei[has], lower[has], upper[has]
        if es.size == 0:
            return
        t = np.linspace(0.0, 1.0, n_t)
        grid = lower[:, None] + (upper - lower)[:, None] * t[None, :]
        ES, EI = np.repeat(es, n_t), np.repeat(ei, n_t)
        _, d = self.evaluate(ES, EI, grid.ravel())
        D = np.where(np.isfinite(d), d, np.inf).reshape(-1, n_t)
        k = np.argmin(D, axis=1)
        idx = np.arange(es.size)
        best_n, best_d = grid[idx, k], D[idx, k]
        a = grid[idx, np.maximum(k - 1, 0)]
        b = grid[idx, np.minimum(k + 1, n_t - 1)]
        live = np.isfinite(best_d) & (b > a)
        if live.any():
            n2, d2 = self._golden(es[live], ei[live], a[live], b[live])
            better = d2 < best_d[live]
            best_n[live] = np.where(better, n2, best_n[live])
            best_d[live] = np.where(better, d2, best_d[live])
        keep = np.isfinite(best_d)
        self.surface.append(np.column_stack([es, ei, best_n, best_d])[keep])

    def _golden(self, es, ei, a, b, iterations=45):
        g = (np.sqrt(5.0) - 1.0) / 2.0

        def f(x):
            _, d = self.evaluate(es, ei, x)
            return np.where(np.isfinite(d), d, np.inf)

        c = b - g * (b - a)
        e = a + g * (b - a)
        fc, fe = f(c), f(e)
        for _ in range(iterations):
            left = fc <= fe
            a = np.where(left, a, c)
            b = np.where(left, e, b)
            # the surviving interior point is reused; one new point per pair
            c_new = np.where(left, b - g * (b - a), e)
            e_new = np.where(left, c, a + g * (b - a))
            x = np.where(left, c_new, e_new)
            fx = f(x)
            fc, fe, c, e = (np.where(left, fx, fe), np.where(left, fc, fx),
                            c_new, e_new)
        take_c = fc <= fe
        return np.where(take_c, c, e), np.where(take_c, fc, fe)

    def trace(self):
        if not self.surface:
            return np.empty((0, 4))
        return np.vstack(self.surface)


def _coarse_tallies(pm, es, ei, config):
    """Violation counts over the coarse grid with ``n_p`` spanning ``[0, max <m_c>/eta_c]``."""
    top = max(float(np.max(pm.m_s_mean / es)), float(np.max(pm.m_i_mean / ei)))
    t = np.linspace(0.0, top, config.n_p_points)
    n = t.size
    _, _, tallies = _candidates(pm, np.repeat(es, n), np.repeat(ei, n), np.tile(t, es.size))
    return tallies


def fit_full(hist, pm, config=None, windows=None):
    """Fit efficiencies and twin-beam parameters by declination minimization.

    The efficiency grid is searched coarse-to-fine; at every efficiency pair
    the mean pair number is profiled over its feasible interval.  A
    least-squares polish from the best grid point finishes the fit.

    Parameters
    ----------
    hist : JointHistogram
        Measured (or model) photoelectron histogram.
    pm : PhotoelectronMoments
        Moments of the same count record.
    config : FullFitConfig, optional
    windows : WindowWidths, optional
        Widths the histogram was built with; copied into the result.

    Raises
    ------
    CalibrationFailedError
        If no trial point on the coarse grid is feasible.
    """
    config = config or FullFitConfig()
    f = hist.freq
    lo, hi, n_eta = config.eta_grid
    axis = np.linspace(lo, hi, int(n_eta))
    step_eta = axis[1] - axis[0] if len(axis) > 1 else hi
    search = _FullSearch(f, pm, config)

    es, ei = np.meshgrid(axis, axis, indexing="ij")
    search.profile(es.ravel(), ei.ravel())
    if search.best_point is None:
        raise CalibrationFailedError("no feasible point on the coarse grid",
                                     _coarse_tallies(pm, es.ravel(), ei.ravel(), config))

    half = int(n_eta) // 2
    step = step_eta
    for _ in range(config.refine_passes):
        step /= 10.0
        b = search.best_point
        ax_s = b[0] + step * np.arange(-half, half + 1)
        ax_i = b[1] + step * np.arange(-half, half + 1)
        ax_s = ax_s[(ax_s >= lo - 1e-12) & (ax_s <= hi + 1e-12)]
        ax_i = ax_i[(ax_i >= lo - 1e-12) & (ax_i <= hi + 1e-12)]
        es, ei = np.meshgrid(ax_s, ax_i, indexing="ij")
        search.profile(es.ravel(), ei.ravel())
    log.debug("fit_full: %d feasible evaluations", search.evaluated)

    point = search.best_point
    n_lo, n_hi = _np_interval(pm, point[0], point[1])
    step_np = max(float(n_hi - n_lo), 0.0) / max(config.n_p_points - 1, 1) / 10.0 ** config.refine_passes
    steps = np.array([step, step, max(step_np, 1e-12)])
    if config.polish:
        point = _polish(search, point, steps, (lo, hi))
    eta_s, eta_i, n_p = (float(x) for x in point)
    boundary = _on_boundary(pm, point, steps, (lo, hi))
    ph = invert_moments(pm, eta_s, eta_i, n_p)
    tb = twin_beam_from_moments(ph)
    d_min = _declination_at(f, tb, eta_s, eta_i, config)
    dv_s, dv_i = (windows.dv_s, windows.dv_i) if windows is not None else (None, None)
    return CalibrationResult(
        method="full",
        detector=DetectorParams(eta_s, eta_i, dv_s, dv_i),
        twin_beam=tb,
        n_p_mean=n_p,
        diagnostics=field_diagnostics(tb),
        d_min=d_min,
        boundary_minimum=boundary,
        search_trace=search.trace() if config.keep_trace else None,
        extras={"evaluations": float(search.evaluated)},
    )


def _row(tb, eta_s, eta_i):
    return np.array([[eta_s, eta_i, tb.paired.M, tb.paired.b, tb.signal_noise.M,
                      tb.signal_noise.b, tb.idler_noise.M, tb.idler_noise.b]])


def _declination_at(f, tb, eta_s, eta_i, config):
    f = np.ascontiguousarray(f, dtype=np.float64)
    return float(kernels.declination_batch(f, _row(tb, eta_s, eta_i),
                                           config.epsilon, config.max_grid)[0])


def _polish(search, point, steps, eta_bounds):
    """Least-squares descent from the grid incumbent.

    The declination valley is narrow and tilted in (eta_s, eta_i, n_p), so the
    polish may travel anywhere inside the efficiency bounds.  The result is
    only accepted when it stays feasible and lowers the declination.
    """
    f, pm, cfg = search.f, search.pm, search.config
    lo, hi = eta_bounds
    shape = [f.shape[0], f.shape[1]]
    pad = np.zeros(shape)
    pad[: f.shape[0], : f.shape[1]] = f

    def residual(x):
        nonlocal pad
        ok, rows, _ = _candidates(pm, *(np.array([v]) for v in x))
        if not ok[0]:
            return np.full(pad.size, 1.0)
        rs, cs = kernels.model_shape(*rows[0], f.shape[0], f.shape[1], cfg.epsilon, cfg.max_grid)
        if rs > pad.shape[0] or cs > pad.shape[1]:
            # a fixed residual length keeps the solver happy; grow once and restart
            raise _GrowGrid((max(rs, pad.shape[0]), max(cs, pad.shape[1])))
        return (kernels.model_grid(*rows[0], pad.shape[0], pad.shape[1], cfg.epsilon) - pad).ravel()

    x0 = np.asarray(point, dtype=np.float64)
    upper_np = float(_np_upper(pm, lo, lo))
    bounds = ([lo, lo, 0.0], [hi, hi, max(upper_np, x0[2] + steps[2])])
    for _ in range(4):
        try:
            sol = least_squares(residual, x0, bounds=bounds, method="trf", x_scale=steps,
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400)
            break
        except _GrowGrid as g:
            grown = np.zeros(g.shape)
            grown[: f.shape[0], : f.shape[1]] = f
            pad = grown
    else:  # pragma: no cover
        return point
    ok, d = search.evaluate(*(np.array([v]) for v in sol.x))
    if ok[0] and d[0] <= search.best_d:
        return sol.x
    return point


class _GrowGrid(Exception):
    def __init__(self, shape):
        super().__init__(shape)
        self.shape = shape


def _on_boundary(pm, point, steps, eta_bounds):
    """Whether any neighbour one final step away leaves the feasible region."""
    lo, hi = eta_bounds
    offs = np.array(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1], indexing="ij")).reshape(3, -1).T
    offs = offs[np.any(offs != 0, axis=1)]
    nb = point[None, :] + offs * steps[None, :]
    outside = ((nb[:, 0] < lo - 1e-12) | (nb[:, 0] > hi + 1e-12)
               | (nb[:, 1] < lo - 1e-12) | (nb[:, 1] > hi + 1e-12))
    ok, _, _ = _candidates(pm, nb[:, 0], nb[:, 1], nb[:, 2])
    return bool(np.any(outside | ~ok))


def simple_closed_forms(am, eta_s):
    """All parameters of a noise-free twin beam from the analog moments and eta_s.

    Raises
    ------
    InfeasibleError
        If the implied idler efficiency leaves (0, 1] or the signal width is
        not positive.
    """
    if not (0.0 < eta_s <= 1.0):
        raise ParameterDomainError(f"eta_s must lie in (0, 1], got {eta_s}")
    if eta_s == 1.0:
        raise InfeasibleError("signal window width diverges at eta_s = 1")
    if not am.mean_s > 0 or not am.mean_i > 0:
        raise InfeasibleError("mean voltages must be positive")
    r = am.mean_i / am.mean_s
    cov_r = am.cov / r
    var_i_r = am.var_i / r ** 2
    excess = am.var_s - cov_r
    dv_s = excess / ((1.0 - eta_s) * am.mean_s)
    if not dv_s > 0:
        raise InfeasibleError(f"signal window width {dv_s} is not positive")
    denom = var_i_r - cov_r + eta_s * (am.var_s - var_i_r)
    if denom == 0:
        raise InfeasibleError("idler efficiency undefined (zero denominator)")
    eta_i = excess * eta_s / denom
    if not (0.0 < eta_i <= 1.0):
        raise InfeasibleError(f"idler efficiency {eta_i} outside (0, 1]")
    dv_i = r * dv_s * eta_s / eta_i
    n_p = am.mean_s / (eta_s * dv_s)
    n_p_var = am.cov / (eta_s * dv_s * eta_i * dv_i)
    return SimpleSolution(eta_s, dv_s, eta_i, dv_i, n_p, n_p_var)


class _SimpleSearch:
    def __init__(self, ensemble, am, config):
        self.ensemble = ensemble
        self.am = am
        self.config = config
        self._cache = {}
        self.points: List[Tuple[float, float, float, float, float, float]] = []
        self.tallies = {}

    def _hist(self, dv_s, dv_i):
        key = (float(f"{dv_s:.12g}"), float(f"{dv_i:.12g}"))
        if key not in self._cache:
            rec = discretize(self.ensemble, WindowWidths(dv_s, dv_i))
            self._cache[key] = (histogram(rec), rec.underflow_count)
        return self._cache[key]

    def evaluate(self, eta_s):
        try:
            sol = simple_closed_forms(self.am, eta_s)
            M_p = moments_to_mode_params(sol.n_p_mean, sol.n_p_var)
        except (InfeasibleError, ParameterDomainError) as exc:
            key = type(exc).__name__ + ": " + str(exc).split(" ")[0]
            self.tallies[key] = self.tallies.get(key, 0) + 1
            return None
        hist, _ = self._hist(sol.dv_s, sol.dv_i)
        tb = TwinBeamParams(M_p, ModeParams.vacuum(), ModeParams.vacuum())
        d = _declination_at(hist.freq, tb, sol.eta_s, sol.eta_i, self.config)
        self.points.append((sol.eta_s, sol.eta_i, sol.n_p_mean, d))
        return d


def fit_simple(ensemble, config=None):
    """Noise-free calibration straight from the voltage ensemble.

    Every trial ``eta_s`` yields widths, ``eta_i`` and the paired-field moments
    in closed form; the ensemble is re-binned with those widths and compared
    with the pairs-only model.
    """
    config = config or SimpleFitConfig()
    am = analog_moments(ensemble)
    search = _SimpleSearch(ensemble, am, config)
    lo, hi, n = config.eta_grid
    axis = np.linspace(lo, hi, int(n))
    step = axis[1] - axis[0] if len(axis) > 1 else hi

    def sweep(etas):
        best = None
        for e in etas:
            d = search.evaluate(float(e))
            if d is not None and (best is None or d < best[1] * (1 - TIE_RTOL)):
                best = (float(e), d)
        return best

    best = sweep(axis)
    if best is None:
        raise CalibrationFailedError("closed forms infeasible for every trial eta_s",
                                     search.tallies)
    half = int(n) // 2
    for _ in range(config.refine_passes):
        step /= 10.0
        ax = best[0] + step * np.arange(-half, half + 1)
        ax = ax[(ax >= lo - 1e-12) & (ax <= hi + 1e-12) & (ax > 0) & (ax < 1)]
        cand = sweep(ax)
        if cand is not None and (cand[1] < best[1] * (1 - TIE_RTOL)
                                 or (abs(cand[1] - best[1]) <= TIE_RTOL * best[1]
                                     and cand[0] < best[0])):
            best = cand

    eta_s = best[0]
    sol = simple_closed_forms(am, eta_s)
    mode = moments_to_mode_params(sol.n_p_mean, sol.n_p_var)
    tb = TwinBeamParams(mode, ModeParams.vacuum(), ModeParams.vacuum())
    hist, underflow = search._hist(sol.dv_s, sol.dv_i)
    d_min = _declination_at(hist.freq, tb, sol.eta_s, sol.eta_i, config)

    boundary = False
    for e in (eta_s - step, eta_s + step):
        if e < lo - 1e-12 or e > hi + 1e-12 or not _simple_feasible(am, e):
            boundary = True
    trace = np.array(search.points) if config.keep_trace else None
    return CalibrationResult(
        method="simple",
        detector=DetectorParams(sol.eta_s, sol.eta_i, sol.dv_s, sol.dv_i),
        twin_beam=tb,
        n_p_mean=sol.n_p_mean,
        diagnostics=field_diagnostics(tb),
        d_min=d_min,
        boundary_minimum=boundary,
        search_trace=trace,
        underflow_count=underflow,
        extras={"n_p_var": sol.n_p_var},
    )


def _simple_feasible(am, eta_s):
    try:
        sol = simple_closed_forms(am, eta_s)
        moments_to_mode_params(sol.n_p_mean, sol.n_p_var)
    except (InfeasibleError, ParameterDomainError):
        return False
    return True


def reported_declination(result, hist=None, ensemble=None, config=None):
    """Recompute the declination from a result's own parameters.

    ``hist`` is used for full fits; simple fits re-bin ``ensemble`` with the
    reported widths.
    """
    config = config or FullFitConfig()
    if result.method == "simple":
        if ensemble is None:
            raise ValueError("simple results need the voltage ensemble")
        d = result.detector
        hist = histogram(discretize(ensemble, WindowWidths(d.dv_s, d.dv_i)))
    return _declination_at(hist.freq, result.twin_beam, result.detector.eta_s,
                           result.detector.eta_i, config)


def calibrate_full(ensemble, windows=None, window_config=None, fit_config=None):
    """Window scan (unless widths are given), binning, then :func:`fit_full`."""
    from .frontend import optimize_windows

    scan = None
    if windows is None:
        windows, scan = optimize_windows(ensemble, window_config)
    record = discretize(ensemble, windows)
    hist = histogram(record)
    pm = photoelectron_moments(record)
    result = fit_full(hist, pm, fit_config, windows=windows)
    result.window_scan = scan
    result.underflow_count = record.underflow_count
    return result

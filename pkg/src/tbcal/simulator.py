"""Seeded Monte Carlo generator of analog voltage-pair records.

Each event draws a pair count and two noise counts from Mandel-Rice laws
(Gamma-Poisson compound, exact for any ``M > 0``), thins the arm totals
binomially and maps photoelectrons to voltages ``v = m * dv + baseline +
jitter``.

Draws are taken block-wise from a single ``numpy.random.Generator`` stream in a
fixed order: pairs, signal noise, idler noise, signal thinning, idler
thinning, signal jitter, idler jitter.  The jitter draws are made even when
the jitter is zero so that the photoelectron counts of a seed do not depend on
the electronics settings.
"""

from dataclasses import dataclass

import numpy as np

from .calibrator import DetectorParams
from .errors import ParameterDomainError
from .frontend import VoltageEnsemble
from .photostats import ModeParams, TwinBeamParams

BLOCK = 1 << 18


@dataclass(frozen=True)
class SimulationConfig:
    twin_beam: TwinBeamParams
    detector: DetectorParams
    jitter_s: float = 0.0
    jitter_i: float = 0.0
    baseline_s: float = 0.0
    baseline_i: float = 0.0
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        d = self.detector
        if d.dv_s is None or d.dv_i is None:
            raise ParameterDomainError("detector window widths are required for simulation (dv_s, dv_i)")
        for key in ("jitter_s", "jitter_i"):
            v = getattr(self, key)
            if not (np.isfinite(v) and v >= 0):
                raise ParameterDomainError(f"{key} must be a non-negative number, got {v}")
        for key in ("baseline_s", "baseline_i"):
            if not np.isfinite(getattr(self, key)):
                raise ParameterDomainError(f"{key} must be finite")
        if int(self.samples) != self.samples or self.samples < 1:
            raise ParameterDomainError(f"samples must be a positive integer, got {self.samples}")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2 ** 64):
            raise ParameterDomainError(f"seed must be an integer in [0, 2**64), got {self.seed}")


def sample_mode_count(mode: ModeParams, rng: np.random.Generator, size=None):
    """Mandel-Rice draw(s): Poisson counts with Gamma(M, b) distributed intensity."""
    if mode.b == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    lam = rng.gamma(mode.M, mode.b, size)
    return rng.poisson(lam)


def binomial_thin(n, eta, rng: np.random.Generator):
    """Number of successes among ``n`` Bernoulli(eta) trials."""
    if not (0.0 <= eta <= 1.0):
        raise ParameterDomainError(f"eta must lie in [0, 1], got {eta}")
    return rng.binomial(n, eta)


def simulate_counts(config: SimulationConfig):
    """Photoelectron counts and voltages of every event.

    Returns ``(m_s, m_i, v_s, v_i)``.
    """
    rng = np.random.default_rng(int(config.seed))
    tb, det = config.twin_beam, config.detector
    N = int(config.samples)
    m_s = np.empty(N, dtype=np.int64)
    m_i = np.empty(N, dtype=np.int64)
    v_s = np.empty(N)
    v_i = np.empty(N)
    for start in range(0, N, BLOCK):
        n = min(BLOCK, N - start)
        sl = slice(start, start + n)
        pairs = sample_mode_count(tb.paired, rng, n)
        noise_s = sample_mode_count(tb.signal_noise, rng, n)
        noise_i = sample_mode_count(tb.idler_noise, rng, n)
        m_s[sl] = binomial_thin(pairs + noise_s, det.eta_s, rng)
        m_i[sl] = binomial_thin(pairs + noise_i, det.eta_i, rng)
        z_s = rng.standard_normal(n)
        z_i = rng.standard_normal(n)
        v_s[sl] = m_s[sl] * det.dv_s + config.baseline_s + config.jitter_s * z_s
        v_i[sl] = m_i[sl] * det.dv_i + config.baseline_i + config.jitter_i * z_i
    return m_s, m_i, v_s, v_i


def synthesize(config: SimulationConfig) -> VoltageEnsemble:
    """Synthetic analog record; identical configs give identical records."""
    _, _, v_s, v_i = simulate_counts(config)
    return VoltageEnsemble(v_s, v_i)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import binom, nbinom

from tbcal.errors import InfeasibleError, ParameterDomainError, ResourceError
from tbcal.photostats import (
    JointPND,
    ModeParams,
    TwinBeamParams,
    bernoulli_kernel,
    bernoulli_matrix,
    declination,
    detect_joint,
    field_diagnostics,
    joint_pnd,
    mandel_rice_pmf,
    mandel_rice_vector,
    mode_params_to_moments,
    moments_to_mode_params,
    photoelectron_model,
    pnd_statistics,
)

modes = st.builds(ModeParams, st.floats(1e-3, 60.0), st.floats(1e-3, 3.0))
small_modes = st.builds(ModeParams, st.floats(1e-3, 8.0), st.floats(0.0, 1.0))


# -- Mandel-Rice law ---------------------------------------------------------

def test_pmf_at_zero_matches_high_precision_value():
    # (1.16)**-38 evaluated with 40-digit arithmetic
    assert mandel_rice_pmf(0, ModeParams(38, 0.16)) == pytest.approx(
        3.553009832759414e-3, rel=1e-13)


def test_pmf_single_mode_is_geometric():
    assert mandel_rice_pmf(2, ModeParams(1, 1)) == pytest.approx(1 / 8, rel=1e-14)


def test_pmf_vacuum():
    vac = ModeParams(3, 0)
    assert mandel_rice_pmf(5, vac) == 0.0
    assert mandel_rice_pmf(0, vac) == 1.0


def test_pmf_large_arguments_stay_finite():
    p = mandel_rice_pmf(np.arange(0, 20000, 500), ModeParams(1800, 3.3))
    assert np.all(np.isfinite(p)) and p.max() < 1


@given(modes, st.integers(0, 400))
def test_pmf_agrees_with_negative_binomial(mode, n):
    # scipy's nbinom counts failures with success probability 1/(1+b)
    ref = nbinom.pmf(n, mode.M, 1.0 / (1.0 + mode.b))
    assert mandel_rice_pmf(n, mode) == pytest.approx(ref, rel=1e-9, abs=1e-300)


def test_invalid_mode_rejected():
    with pytest.raises(ParameterDomainError):
        ModeParams(0.0, 1.0)
    with pytest.raises(ParameterDomainError):
        ModeParams(1.0, -0.1)


def test_vector_geometric_cutoff():
    pmf, cutoff, tail = mandel_rice_vector(ModeParams(1, 1), 1e-3)
    assert cutoff == 9
    assert tail == pytest.approx(2.0 ** -10, rel=1e-12)
    assert len(pmf) == 10


def test_vector_vacuum():
    pmf, cutoff, tail = mandel_rice_vector(ModeParams(7, 0), 0.3)
    assert list(pmf) == [1.0] and cutoff == 0 and tail == 0.0


def test_vector_cutoff_matches_cumulative_sum_oracle():
    # smallest k with 1 - sum_{n<=k} p(n) <= 1e-12, found by 40-digit summation
    _, cutoff, _ = mandel_rice_vector(ModeParams(38, 0.16), 1e-12)
    assert cutoff == 35


def test_vector_rejects_bad_epsilon():
    with pytest.raises(ParameterDomainError):
        mandel_rice_vector(ModeParams(1, 1), 1.0)


@given(modes, st.sampled_from([1e-4, 1e-8, 1e-12]))
def test_vector_normalization_and_minimality(mode, eps):
    pmf, cutoff, tail = mandel_rice_vector(mode, eps)
    assert tail <= eps
    assert abs(1.0 - pmf.sum() - tail) < 1e-12
    assert np.allclose(pmf, mandel_rice_pmf(np.arange(cutoff + 1), mode), rtol=1e-13, atol=0)
    if cutoff > 0:
        assert tail + pmf[cutoff] > eps


# -- moment conversions ------------------------------------------------------

def test_moments_to_mode_params_weak_beam_pairs():
    m = moments_to_mode_params(6.08, 7.0528)
    assert m.M == pytest.approx(38, rel=1e-12) and m.b == pytest.approx(0.16, rel=1e-12)


def test_moments_to_mode_params_single_mode():
    m = moments_to_mode_params(1.0, 2.0)
    assert (m.M, m.b) == (1.0, 1.0)


@pytest.mark.parametrize("mean,var", [(1.0, 1.0), (1.0, 0.5), (0.0, 1.0), (-1.0, 2.0)])
def test_moments_to_mode_params_infeasible(mean, var):
    with pytest.raises(InfeasibleError):
        moments_to_mode_params(mean, var)


def test_mode_params_to_moments_examples():
    assert mode_params_to_moments(ModeParams(38, 0.16)) == pytest.approx((6.08, 7.0528), rel=1e-14)
    mean, var = mode_params_to_moments(ModeParams(1800, 3.3e-3))
    assert mean == pytest.approx(5.94, rel=1e-12)
    assert var == pytest.approx(5.959602, rel=1e-12)
    assert mode_params_to_moments(ModeParams(4, 0)) == (0, 0)


@given(st.floats(1e-6, 1e4), st.floats(1e-6, 1e3))
def test_moment_round_trip(mean, excess):
    var = mean + excess * mean
    m = moments_to_mode_params(mean, var)
    back = mode_params_to_moments(m)
    assert back[0] == pytest.approx(mean, rel=1e-12)
    assert back[1] == pytest.approx(var, rel=1e-12)


# -- joint PND ---------------------------------------------------------------

def test_joint_pure_pairs_is_diagonal():
    tb = TwinBeamParams.from_values(2.0, 0.7, 1.0, 0.0, 1.0, 0.0)
    pnd = joint_pnd(tb)
    diag = np.diag(pnd.values)
    assert np.count_nonzero(pnd.values - np.diag(diag)) == 0
    assert np.allclose(diag, mandel_rice_pmf(np.arange(pnd.cutoff + 1), tb.paired), rtol=1e-14)


def test_joint_without_pairs_factorizes():
    tb = TwinBeamParams.from_values(5.0, 0.0, 2.0, 0.4, 0.5, 1.5)
    pnd = joint_pnd(tb)
    ps, ks, _ = mandel_rice_vector(tb.signal_noise, 1e-10 / 3)
    pi, ki, _ = mandel_rice_vector(tb.idler_noise, 1e-10 / 3)
    ref = np.zeros_like(pnd.values)
    ref[: ks + 1, : ki + 1] = np.outer(ps, pi)
    assert np.allclose(pnd.values, ref, rtol=1e-13, atol=0)


def test_joint_weak_beam_marginal_means(weak_beam):
    s = pnd_statistics(joint_pnd(weak_beam))
    assert s.mean_s == pytest.approx(6.08 + 0.0546, abs=1e-6)
    assert s.mean_i == pytest.approx(6.08 + 0.12, abs=1e-6)


def test_joint_resource_cap(weak_beam):
    with pytest.raises(ResourceError) as exc:
        joint_pnd(weak_beam, max_cells=100)
    assert exc.value.required_cutoff > 9


tb_strategy = st.builds(TwinBeamParams, small_modes, small_modes, small_modes)


@given(tb_strategy)
def test_joint_moment_identities(tb):
    pnd = joint_pnd(tb, epsilon=1e-13)
    assert pnd.tail_bound <= 1e-13
    assert 1 - pnd.tail_bound - 1e-12 <= pnd.total <= 1 + 1e-12
    s = pnd_statistics(pnd)
    p, a, b = tb.paired, tb.signal_noise, tb.idler_noise
    scale = 1.0 + p.variance + a.variance + b.variance
    assert s.mean_s == pytest.approx(p.mean + a.mean, rel=1e-9, abs=1e-9 * scale)
    assert s.var_s == pytest.approx(p.variance + a.variance, rel=1e-9, abs=1e-9 * scale)
    assert s.var_i == pytest.approx(p.variance + b.variance, rel=1e-9, abs=1e-9 * scale)
    assert s.cov == pytest.approx(p.variance, rel=1e-9, abs=1e-9 * scale)


@given(tb_strategy)
def test_joint_swap_symmetry(tb):
    a = joint_pnd(tb).values
    b = joint_pnd(tb.swapped()).values
    assert np.array_equal(a.T, b)


# -- detection ---------------------------------------------------------------

def test_bernoulli_identity_and_half():
    assert bernoulli_kernel(3, 3, 1.0) == 1.0 and bernoulli_kernel(2, 3, 1.0) == 0.0
    assert [bernoulli_kernel(m, 2, 0.5) for m in range(3)] == pytest.approx([0.25, 0.5, 0.25])
    assert bernoulli_kernel(3, 2, 0.5) == 0.0


def test_bernoulli_against_binomial_oracle():
    # 10 * 0.085 * 0.915**9 in 40-digit arithmetic
    assert bernoulli_kernel(1, 10, 0.085) == pytest.approx(0.38212792170598875, rel=1e-13)
    assert bernoulli_kernel(1, 10, 0.085) == pytest.approx(binom.pmf(1, 10, 0.085), rel=1e-12)


def test_bernoulli_rejects_bad_eta():
    with pytest.raises(ParameterDomainError):
        bernoulli_kernel(0, 1, 1.5)


@given(st.floats(0.0, 1.0))
def test_bernoulli_columns_are_stochastic(eta):
    T = bernoulli_matrix(eta, 201)
    assert np.allclose(T.sum(axis=0), 1.0, atol=1e-12, rtol=0)
    assert np.all(np.triu(T, 0) >= 0) and np.count_nonzero(np.tril(T, -1).T) == 0


def test_detect_identity_and_blind(weak_beam):
    pnd = joint_pnd(weak_beam)
    assert np.allclose(detect_joint(pnd, 1.0, 1.0).values, pnd.values, rtol=0, atol=1e-15)
    blind = detect_joint(pnd, 0.0, 0.0).values
    assert blind[0, 0] == pytest.approx(pnd.total, rel=1e-14)
    assert blind.sum() == pytest.approx(blind[0, 0], rel=1e-14)
    assert blind.shape == pnd.values.shape


def test_detect_pure_pair_zero_cell_against_double_sum(pure_pairs):
    pnd = joint_pnd(pure_pairs)
    out = detect_joint(pnd, 0.5, 0.5).values[0, 0]
    ref = sum(pnd.values[a, b] * 0.5 ** a * 0.5 ** b
              for a in range(pnd.cutoff + 1) for b in range(pnd.cutoff + 1))
    assert out == pytest.approx(ref, rel=1e-12)
    assert out == pytest.approx(4 / 7, abs=1e-9)  # untruncated geometric series


@given(tb_strategy, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_thinning_moment_law(tb, es, ei):
    pnd = joint_pnd(tb, epsilon=1e-13)
    n = pnd_statistics(pnd)
    det = detect_joint(pnd, es, ei)
    assert det.total <= pnd.total + 1e-12
    m = pnd_statistics(det)
    tol = 1e-9 * (1.0 + n.var_s + n.var_i)
    assert m.mean_s == pytest.approx(es * n.mean_s, abs=tol)
    assert m.mean_i == pytest.approx(ei * n.mean_i, abs=tol)
    assert m.var_s == pytest.approx(es ** 2 * n.var_s + es * (1 - es) * n.mean_s, abs=tol)
    assert m.var_i == pytest.approx(ei ** 2 * n.var_i + ei * (1 - ei) * n.mean_i, abs=tol)
    assert m.cov == pytest.approx(es * ei * n.cov, abs=tol)


def test_photoelectron_model_matches_photon_route(weak_beam):
    direct = detect_joint(joint_pnd(weak_beam), 0.085, 0.086).values
    fast = photoelectron_model(weak_beam, 0.085, 0.086)
    k0, k1 = min(direct.shape[0], fast.shape[0]), min(direct.shape[1], fast.shape[1])
    assert np.allclose(fast[:k0, :k1], direct[:k0, :k1], rtol=0, atol=1e-11)
    assert fast.sum() == pytest.approx(1.0, abs=1e-10)


# -- declination and diagnostics --------------------------------------------

def test_declination_examples():
    f = np.array([[0.5, 0.2], [0.1, 0.2]])
    assert declination(f, f) == 0.0
    g = f.copy()
    g[1, 0] += 0.1
    assert declination(g, f) == pytest.approx(0.1, rel=1e-14)


def test_declination_pads_smaller_grid():
    a = np.array([[0.5, 0.5]])
    b = np.array([[0.5], [0.5]])
    assert declination(a, b) == pytest.approx(math.sqrt(0.5), rel=1e-14)


def test_pure_pair_statistics(pure_pairs):
    s = pnd_statistics(joint_pnd(pure_pairs))
    assert s.diagnostics.photon_covariance == 1.0
    assert s.diagnostics.noise_reduction_factor == 0.0


def test_product_pnd_has_no_covariance():
    s = pnd_statistics(joint_pnd(TwinBeamParams.from_values(1, 0, 2, 0.3, 1, 0.8)))
    assert abs(s.cov) < 1e-15


def test_weak_beam_covariance(weak_beam):
    d = pnd_statistics(joint_pnd(weak_beam)).diagnostics
    assert d.photon_covariance == pytest.approx(0.76, abs=0.03)


@pytest.mark.xfail(strict=True, reason="R of these rounded parameters is 0.420, not 0.37")
def test_weak_beam_noise_reduction(weak_beam):
    d = pnd_statistics(joint_pnd(weak_beam)).diagnostics
    assert d.noise_reduction_factor == pytest.approx(0.37, abs=0.03)


def test_diagnostics_analytic_equals_grid(weak_beam):
    # long noise tails carry n**2 weight, so the grid needs a tight cutoff
    a = field_diagnostics(weak_beam)
    g = pnd_statistics(joint_pnd(weak_beam, epsilon=1e-15)).diagnostics
    assert a.photon_covariance == pytest.approx(g.photon_covariance, rel=1e-9)
    assert a.noise_reduction_factor == pytest.approx(g.noise_reduction_factor, rel=1e-9)


def test_zero_variance_gives_nan_sentinel():
    pnd = JointPND(np.array([[1.0]]), 0, 0.0)
    assert math.isnan(pnd_statistics(pnd).diagnostics.photon_covariance)


def test_low_confidence_flag():
    pnd = JointPND(np.array([[0.9]]), 0, 0.1)
    assert pnd_statistics(pnd).low_confidence

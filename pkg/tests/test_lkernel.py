import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from smcnuts.hamiltonian import MassMatrix, momentum_log_density
from smcnuts.lkernel import (
    JointGaussianFit,
    LKernelError,
    NearOptimalLKernel,
    SymmetricLKernel,
    conditional_log_density,
    conditional_params,
    fit_joint,
    gaussian_log_density,
    make_lkernel,
    symmetric_log_density,
)


def _random_fit(rng, D):
    A = rng.standard_normal((2 * D, 2 * D))
    cov = A @ A.T + 0.1 * np.eye(2 * D)
    return JointGaussianFit(rng.standard_normal(2 * D), cov, 0.0)


def test_symmetric_examples():
    assert symmetric_log_density(np.zeros(1), MassMatrix.identity(1)) == pytest.approx(-0.5 * math.log(2 * math.pi))
    p = np.array([1.0, 0, 0, 0, 0])
    assert symmetric_log_density(p, MassMatrix.identity(5)) == pytest.approx(-2.5 * math.log(2 * math.pi) - 0.5)


def test_symmetric_is_momentum_density_of_negation(rng):
    M = MassMatrix([0.5, 2.0, 1.0])
    for _ in range(10):
        p = rng.standard_normal(3)
        assert symmetric_log_density(p, M) == momentum_log_density(-p, M)


def test_identical_pairs_give_jitter_covariance():
    fit = fit_joint(np.tile([1.0, -2.0], (5, 1)), np.tile([3.0, 0.5], (5, 1)))
    np.testing.assert_allclose(fit.mean, [1.0, -2.0, 3.0, 0.5])
    np.testing.assert_allclose(fit.cov, fit.jitter * np.eye(4))
    assert fit.jitter == 1e-12


def test_two_point_fit_by_hand():
    fit = fit_joint(np.array([[1.0], [3.0]]), np.array([[0.0], [4.0]]))
    np.testing.assert_allclose(fit.mean, [2.0, 2.0])
    # 1/N second moments: var(-p) = 1, var(x) = 4, cov = 2
    raw = np.array([[1.0, 2.0], [2.0, 4.0]])
    jitter = 1e-6 * 2.5
    assert fit.jitter == pytest.approx(jitter)
    np.testing.assert_allclose(fit.cov, raw + jitter * np.eye(2), rtol=1e-14)


def test_fit_recovers_known_gaussian():
    rng = np.random.default_rng(0)
    mean = np.array([0.5, -1.0])
    cov = np.array([[2.0, 0.8], [0.8, 1.0]])
    n = 100_000
    z = rng.multivariate_normal(mean, cov, size=n)
    fit = fit_joint(z[:, :1], z[:, 1:])
    se_mean = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(fit.mean - mean) < 3 * se_mean)
    se_cov = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(fit.cov - cov) < 3 * se_cov + fit.jitter)


def test_block_views_are_consistent(rng):
    fit = fit_joint(rng.standard_normal((20, 2)), rng.standard_normal((20, 2)))
    np.testing.assert_array_equal(fit.cov_xp, fit.cov_px.T)
    np.testing.assert_array_equal(fit.cov, fit.cov.T)


def test_fit_input_errors():
    with pytest.raises(LKernelError):
        fit_joint(np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(LKernelError):
        fit_joint(np.array([[0.0], [np.nan]]), np.zeros((2, 1)))


def test_rank_deficient_position_block_raises():
    fit = fit_joint(np.array([[0.0], [1.0]]), np.zeros((2, 1)), rel_jitter=0.0, min_jitter=0.0)
    with pytest.raises(LKernelError, match="jitter"):
        conditional_params(fit)


def test_hand_conditioning_example():
    fit = JointGaussianFit(np.zeros(2), np.array([[2.0, 1.0], [1.0, 2.0]]), 0.0)
    gain, cond_cov = conditional_params(fit)
    assert fit.mu_p[0] + gain[0, 0] * 1.0 == pytest.approx(0.5)
    assert cond_cov[0, 0] == pytest.approx(1.5)
    # evaluated at -p_k = 0.5 + t
    for t in (-1.0, 0.0, 0.7):
        expected = stats.norm.logpdf(0.5 + t, 0.5, math.sqrt(1.5))
        assert conditional_log_density(fit, np.array([-(0.5 + t)]), np.array([1.0])) == pytest.approx(expected, rel=1e-12)


def test_independent_blocks_reduce_to_marginal(rng):
    cov = np.diag([2.0, 0.5, 1.0, 3.0])
    fit = JointGaussianFit(np.array([1.0, -1.0, 0.0, 2.0]), cov, 0.0)
    p, x = rng.standard_normal(2), rng.standard_normal(2)
    expected = gaussian_log_density(-p, fit.mu_p, fit.cov_pp)
    assert conditional_log_density(fit, p, x) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), D=st.integers(1, 3))
def test_conditional_equals_joint_minus_marginal(seed, D):
    rng = np.random.default_rng(seed)
    fit = _random_fit(rng, D)
    p, x = rng.standard_normal(D), rng.standard_normal(D)
    joint = gaussian_log_density(np.concatenate([-p, x]), fit.mean, fit.cov)
    marginal = gaussian_log_density(x, fit.mu_x, fit.cov_xx)
    assert abs(conditional_log_density(fit, p, x) - (joint - marginal)) < 1e-10


def test_conditional_normalises_in_one_dimension(rng):
    fit = _random_fit(rng, 1)
    for x in (-1.0, 0.3, 2.0):
        total, _ = integrate.quad(lambda q: math.exp(conditional_log_density(fit, np.array([-q]), np.array([x]))), -np.inf, np.inf, epsabs=1e-12)
        assert abs(total - 1.0) < 1e-6


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), D=st.integers(1, 3))
def test_conditional_covariance_is_spd(seed, D):
    rng = np.random.default_rng(seed)
    neg_p, x = rng.standard_normal((40, D)), rng.standard_normal((40, D))
    k = NearOptimalLKernel().prepare(neg_p, x)
    np.testing.assert_allclose(k.cond_cov, k.cond_cov.T)
    assert np.all(np.linalg.eigvalsh(k.cond_cov) > 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), D=st.integers(1, 3))
def test_translation_shifts_only_position_mean(seed, D):
    rng = np.random.default_rng(seed)
    neg_p, x = rng.standard_normal((30, D)), rng.standard_normal((30, D))
    shift = rng.uniform(-5, 5, D)
    a, b = fit_joint(neg_p, x), fit_joint(neg_p, x + shift)
    np.testing.assert_allclose(b.mu_x, a.mu_x + shift, atol=1e-12)
    np.testing.assert_allclose(b.mu_p, a.mu_p, atol=1e-12)
    np.testing.assert_allclose(b.cov, a.cov, atol=1e-12)


def test_kernel_log_density_vectorised(rng):
    neg_p, x = rng.standard_normal((25, 2)), rng.standard_normal((25, 2))
    k = NearOptimalLKernel().prepare(neg_p, x)
    vec = k.log_density(neg_p, x)
    single = [conditional_log_density(k.fit, -neg_p[i], x[i]) for i in range(25)]
    np.testing.assert_allclose(vec, single, rtol=1e-12)


def test_weighted_fit_uses_weights(rng):
    neg_p, x = rng.standard_normal((10, 1)), rng.standard_normal((10, 1))
    w = np.zeros(10)
    w[[2, 7]] = 0.5
    k = NearOptimalLKernel(weighted=True).prepare(neg_p, x, weights=w)
    assert k.fit.mu_x[0] == pytest.approx(0.5 * (x[2, 0] + x[7, 0]))
    unweighted = NearOptimalLKernel().prepare(neg_p, x, weights=w)
    assert unweighted.fit.mu_x[0] == pytest.approx(x[:, 0].mean())


def test_unprepared_kernel_errors():
    with pytest.raises(RuntimeError):
        NearOptimalLKernel().log_density(np.zeros((2, 1)), np.zeros((2, 1)))


def test_factory():
    M = MassMatrix.identity(2)
    assert isinstance(make_lkernel("symmetric", M), SymmetricLKernel)
    assert isinstance(make_lkernel("near-optimal", M), NearOptimalLKernel)
    with pytest.raises(ValueError):
        make_lkernel("optimal", M)

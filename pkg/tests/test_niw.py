import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from ladselect.data import LossMatrix, LossSummary, empty_summary, summarize
from ladselect.errors import LadNumericalError, LadValidationError
from ladselect.niw import (
    NiwState,
    cholesky_jittered,
    default_prior,
    nig_from_niw,
    nig_match_update_sample,
    nig_update,
    niw_update,
    sample_posterior,
    sample_wishart,
)


def test_default_prior():
    p = default_prior(3)
    assert p.nu == 5 and p.lam == 0.01
    np.testing.assert_array_equal(p.psi, np.eye(3))
    np.testing.assert_array_equal(p.mu, np.zeros(3))
    p1 = default_prior(1)
    assert p1.nu == 3 and p1.psi.tolist() == [[1.0]]
    with pytest.raises(LadValidationError):
        default_prior(0)


def test_state_validation():
    with pytest.raises(LadValidationError):
        NiwState(np.zeros(2), 1.0, np.array([[1.0, 0.5], [0.0, 1.0]]), 4.0)
    with pytest.raises(LadValidationError):
        NiwState(np.zeros(2), 0.0, np.eye(2), 4.0)
    with pytest.raises(LadValidationError):
        NiwState(np.zeros(2), 1.0, np.eye(2), 1.0)


def test_update_hand_example():
    prior = NiwState(np.zeros(1), 1.0, np.eye(1), 3.0)
    post = niw_update(prior, LossSummary(np.array([2.0]), np.zeros((1, 1)), 1))
    assert post.mu[0] == 1.0 and post.lam == 2.0 and post.psi[0, 0] == 3.0 and post.nu == 4.0


def test_empty_update_returns_prior():
    prior = default_prior(2)
    assert niw_update(prior, empty_summary(2)) is prior


def test_batch_update_equals_sequential_updates():
    # conjugacy: absorbing rows one at a time must give the batch posterior
    z = np.random.default_rng(1).normal(size=(30, 3)) @ np.array([[1, 0.3, 0], [0, 1, 0.2], [0, 0, 1.0]])
    seq = NiwState(np.array([0.5, -1.0, 2.0]), 0.7, np.diag([1.0, 2.0, 3.0]), 6.0)
    for row in z:
        seq = niw_update(seq, LossSummary(row, np.zeros((3, 3)), 1))
    batch = niw_update(NiwState(np.array([0.5, -1.0, 2.0]), 0.7, np.diag([1.0, 2.0, 3.0]), 6.0), summarize(LossMatrix(z)))
    np.testing.assert_allclose(batch.mu, seq.mu, rtol=1e-12)
    np.testing.assert_allclose(batch.psi, seq.psi, rtol=1e-10)
    assert batch.lam == pytest.approx(seq.lam) and batch.nu == seq.nu
    np.testing.assert_array_equal(batch.psi, batch.psi.T)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-50, 50)), arrays(np.float64, 2, elements=st.floats(-50, 50)))
def test_posterior_mean_is_between_prior_and_data(z, mu0):
    prior = NiwState(mu0, 0.5, np.eye(2), 4.0)
    s = summarize(LossMatrix(z))
    mu_n = niw_update(prior, s).mu
    lo, hi = np.minimum(mu0, s.mean), np.maximum(mu0, s.mean)
    assert np.all(mu_n >= lo - 1e-12) and np.all(mu_n <= hi + 1e-12)


@pytest.fixture(scope="module")
def posterior3():
    z = np.random.default_rng(5).multivariate_normal([1.0, 2.0, 0.5], [[1, 0.5, 0.2], [0.5, 2, 0.3], [0.2, 0.3, 1.5]], 20)
    return niw_update(default_prior(3), summarize(LossMatrix(z)))


def test_inverse_wishart_mean(posterior3):
    draws = sample_posterior(posterior3, 200000, seed=2)
    expect = posterior3.psi / (posterior3.nu - 3 - 1)
    mean = draws.sigmas.mean(axis=0)
    se = draws.sigmas.std(axis=0, ddof=1) / np.sqrt(draws.T)
    assert np.all(np.abs(mean - expect) < 3 * se)
    # marginal of mu is a t with this scale; its covariance is Psi_n / (lambda_n (nu_n - K - 1))
    np.testing.assert_allclose(draws.mus.mean(axis=0), posterior3.mu, atol=4 * np.sqrt(np.diag(expect) / posterior3.lam / draws.T).max())


def test_draws_are_spd_and_deterministic(posterior3):
    a = sample_posterior(posterior3, 500, seed=9)
    b = sample_posterior(posterior3, 500, seed=9)
    assert a.mus.tobytes() == b.mus.tobytes() and a.sigmas.tobytes() == b.sigmas.tobytes()
    np.testing.assert_array_equal(a.sigmas, np.swapaxes(a.sigmas, 1, 2))
    assert np.all(np.linalg.eigvalsh(a.sigmas) > 0)
    c = sample_posterior(posterior3, 500, seed=9, compact=True)
    assert c.sigmas is None and np.array_equal(c.mus, a.mus)
    assert not np.array_equal(sample_posterior(posterior3, 5, seed=10).mus, a.mus[:5])


def test_wishart_against_definition():
    scale = np.array([[2.0, 0.6], [0.6, 1.0]])
    nu = 3.5
    W = sample_wishart(scale, nu, 100000, seed=4)
    se = W.std(axis=0, ddof=1) / np.sqrt(W.shape[0])
    assert np.all(np.abs(W.mean(axis=0) - nu * scale) < 3 * se)
    # the (1,1) entry divided by its scale is chi-square with nu degrees of freedom
    ks = stats.kstest(W[:20000, 0, 0] / scale[0, 0], stats.chi2(nu).cdf)
    assert ks.statistic < 0.015


def test_diagonal_variant():
    prior = default_prior(3)
    nig0 = nig_from_niw(prior)
    np.testing.assert_array_equal(nig0.a, [1.5, 1.5, 1.5])
    np.testing.assert_array_equal(nig0.b, [0.5, 0.5, 0.5])

    z = np.random.default_rng(8).normal(size=(25, 3)) * [1.0, 2.0, 0.5]
    s = summarize(LossMatrix(z))
    post = nig_update(nig0, s)
    np.testing.assert_array_equal(post.mu, niw_update(prior, s).mu)

    draws = nig_match_update_sample(prior, s, 200000, seed=3)
    off = ~np.eye(3, dtype=bool)
    assert np.all(draws.sigmas[:, off] == 0.0)
    var = draws.sigmas[:, np.arange(3), np.arange(3)]
    se = var.std(axis=0, ddof=1) / np.sqrt(draws.T)
    assert np.all(np.abs(var.mean(axis=0) - post.b / (post.a - 1)) < 3 * se)


def test_cholesky_jitter():
    L = cholesky_jittered(np.ones((2, 2)))
    np.testing.assert_allclose(L @ L.T, np.ones((2, 2)), atol=1e-8)
    with pytest.raises(LadNumericalError, match="condition number"):
        cholesky_jittered(-np.eye(2))

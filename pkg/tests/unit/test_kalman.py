import numpy as np
import pytest
from scipy.stats import multivariate_normal

from lsem.discretize import c2d_shift
from lsem.errors import TraceError
from lsem.kalman import kalman_smoother, kalman_smoother_moments, smoothing_moments
from lsem.model import ContinuousModel, ShiftModel, StatePrior
from lsem.sampler import simulate_sde

SCALAR = ShiftModel(Ad=[[0.9]], Bd=[[0.1]], C=[[1.0]], D=0.0, Qd=[[0.2]], delta=0.1)


def _joint_gaussian(model: ShiftModel, u, y, r, prior: StatePrior):
    """Posterior of x_1..x_{N+1} by conditioning the dense joint Gaussian"""
    a, b, q = model.Ad[0, 0], model.Bd[0, 0], model.Qd[0, 0]
    N = len(y)
    T = N + 1

    mean = np.empty(T)
    mean[0] = prior.mean[0]
    for k in range(N):
        mean[k + 1] = a * mean[k] + b * u[k]

    # x = L e + mean with e = (x_1 - mu1, w_1, ..., w_N)
    L = np.zeros((T, T))
    for i in range(T):
        for j in range(i + 1):
            L[i, j] = a ** (i - j)
    cov = L @ np.diag([prior.cov[0, 0]] + [q] * N) @ L.T

    H = np.eye(N, T)
    S = H @ cov @ H.T + r * np.eye(N)
    gain = cov @ H.T @ np.linalg.inv(S)
    post_mean = mean + gain @ (y - H @ mean)
    post_cov = cov - gain @ H @ cov
    loglik = multivariate_normal(H @ mean, S).logpdf(y)
    return post_mean, post_cov, loglik


def test_smoother_matches_joint_gaussian():
    rng = np.random.default_rng(0)
    N, r = 5, 0.3
    u = rng.normal(size=N)
    y = rng.normal(size=N)
    prior = StatePrior([0.5], [[1.0]])

    smoothed = kalman_smoother(SCALAR, u, y, r, prior)
    mean, cov, loglik = _joint_gaussian(SCALAR, u, y, r, prior)

    np.testing.assert_allclose(smoothed.means[:, 0], mean, atol=1e-8)
    np.testing.assert_allclose(smoothed.covs[:, 0, 0], np.diag(cov), atol=1e-8)
    np.testing.assert_allclose(smoothed.lag_covs[:, 0, 0], np.diag(cov, k=1), atol=1e-8)
    assert smoothed.log_likelihood == pytest.approx(loglik, abs=1e-8)


def test_moments_match_joint_gaussian():
    rng = np.random.default_rng(1)
    N, r = 5, 0.2
    u = rng.normal(size=N)
    y = rng.normal(size=N)
    prior = StatePrior([0.0], [[0.5]])

    mom = kalman_smoother_moments(SCALAR, u, y, r, prior)
    mean, cov, _ = _joint_gaussian(SCALAR, u, y, r, prior)
    second = cov + np.outer(mean, mean)

    assert mom.Gxx[0, 0] == pytest.approx(np.trace(second[:N, :N]), abs=1e-8)
    assert mom.Gqq[0, 0] == pytest.approx(np.trace(second[1:, 1:]), abs=1e-8)
    assert mom.Gxq[0, 0] == pytest.approx(np.trace(second[:N, 1:]), abs=1e-8)
    assert mom.Gux[0, 0] == pytest.approx(u @ mean[:N], abs=1e-8)
    assert mom.Guq[0, 0] == pytest.approx(u @ mean[1:], abs=1e-8)
    assert mom.Gxz[0, 0] == pytest.approx(y @ mean[:N], abs=1e-8)
    assert mom.Guz == pytest.approx(u @ y)


def test_cross_moment_is_lag_covariance_plus_means():
    rng = np.random.default_rng(2)
    u = rng.normal(size=20)
    y = rng.normal(size=20)
    prior = StatePrior([0.0], [[1.0]])
    smoothed = kalman_smoother(SCALAR, u, y, 0.5, prior)
    mom = smoothing_moments(smoothed, u, y, SCALAR.delta)

    means = smoothed.means[:, 0]
    expected = smoothed.lag_covs[:, 0, 0].sum() + means[:-1] @ means[1:]
    assert mom.Gxq[0, 0] == pytest.approx(expected)


def test_exact_observations_recover_the_states():
    model = ContinuousModel(
        A=[[-1.0]], B=[[0.7]], C=[[1.0]], D=0.0, Q=[[0.5]], mu1=[0.0], P1=[[0.0]]
    )
    u = np.random.default_rng(3).normal(0.0, 10.0, 200)
    states, z = simulate_sde(model, u, 0.01, seed=4)
    smoothed = kalman_smoother(c2d_shift(model, 0.01), u, z, 1e-12, model.prior)
    np.testing.assert_allclose(smoothed.means[:-1, 0], states[:, 0], atol=1e-6)


def test_two_state_covariances_stay_psd(second_order):
    u = np.random.default_rng(5).normal(size=300)
    _, z = simulate_sde(second_order, u, 0.01, seed=6)
    smoothed = kalman_smoother(
        c2d_shift(second_order, 0.01), u, z, 0.01, second_order.prior
    )
    for cov in smoothed.covs:
        np.testing.assert_array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() >= -1e-12


def test_kalman_input_checks():
    prior = StatePrior([0.0], [[1.0]])
    with pytest.raises(ValueError):
        kalman_smoother(SCALAR, np.zeros(3), np.zeros(3), 0.0, prior)
    with pytest.raises(TraceError):
        kalman_smoother(SCALAR, np.zeros(4), np.zeros(3), 1.0, prior)

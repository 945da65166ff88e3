"""kalman.py

By: Liam Strand
On: Summer 2023

Kalman filter and Rauch-Tung-Striebel smoother for the shift-operator model
with a direct Gaussian measurement y_k = C x_k + D u_k + v_k, v_k ~ N(0, r).
This is the E-step of the KS-EM baseline, which treats the held Lebesgue
output as if it were an ordinary noisy measurement.

Like the particle filter, the smoother covers x_1..x_{N+1}; the last state is
a pure prediction.
"""
from dataclasses import dataclass

import numpy as np

from lsem.errors import TraceError
from lsem.model import ShiftModel, StatePrior, nearest_psd
from lsem.moments import MomentSet


@dataclass(frozen=True)
class KalmanSmoothing:
    """Smoothed means (N+1 x n), covariances (N+1 x n x n), lag-one
    covariances Cov(x_k, x_{k+1} | y_1:N) (N x n x n) and the exact
    log-likelihood log p(y_1:N)"""

    means: np.ndarray
    covs: np.ndarray
    lag_covs: np.ndarray
    log_likelihood: float


def kalman_smoother(
    model: ShiftModel, u: np.ndarray, y: np.ndarray, r: float, prior: StatePrior
) -> KalmanSmoothing:
    """Runs the Kalman filter forward and the RTS smoother backward
    Parameters: The shift model, the input, the measurements, the measurement
                variance r, and the initial-state prior
       Returns: The smoothed moments and the log-likelihood of the data
       Effects: None
    """
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    N = y.size
    if u.size != N:
        raise TraceError(f"input has {u.size} samples, measurements {N}")
    if not r > 0.0:
        raise ValueError(f"measurement variance must be positive, got {r}")

    n = model.n
    Ad, Qd = model.Ad, model.Qd
    Bd = model.Bd[:, 0]
    C = model.C[0]
    eye = np.eye(n)

    pred_means = np.empty((N + 1, n))
    pred_covs = np.empty((N + 1, n, n))
    filt_means = np.empty((N + 1, n))
    filt_covs = np.empty((N + 1, n, n))

    m = prior.mean.copy()
    P = nearest_psd(prior.cov)
    loglik = 0.0
    for k in range(N):
        pred_means[k], pred_covs[k] = m, P

        S = float(C @ P @ C) + r
        K = P @ C / S
        innovation = y[k] - C @ m - model.D * u[k]
        loglik -= 0.5 * (np.log(2.0 * np.pi * S) + innovation**2 / S)

        # Joseph form keeps the update PSD
        IKC = eye - np.outer(K, C)
        m = m + K * innovation
        P = nearest_psd(IKC @ P @ IKC.T + r * np.outer(K, K))
        filt_means[k], filt_covs[k] = m, P

        m = Ad @ m + Bd * u[k]
        P = nearest_psd(Ad @ P @ Ad.T + Qd)

    pred_means[N], pred_covs[N] = m, P
    filt_means[N], filt_covs[N] = m, P

    means = np.empty((N + 1, n))
    covs = np.empty((N + 1, n, n))
    lag_covs = np.empty((N, n, n))
    means[N], covs[N] = filt_means[N], filt_covs[N]
    for k in range(N - 1, -1, -1):
        J = filt_covs[k] @ Ad.T @ np.linalg.pinv(pred_covs[k + 1], hermitian=True)
        means[k] = filt_means[k] + J @ (means[k + 1] - pred_means[k + 1])
        covs[k] = nearest_psd(
            filt_covs[k] + J @ (covs[k + 1] - pred_covs[k + 1]) @ J.T
        )
        lag_covs[k] = J @ covs[k + 1]

    return KalmanSmoothing(
        means=means, covs=covs, lag_covs=lag_covs, log_likelihood=float(loglik)
    )


def smoothing_moments(
    smoothed: KalmanSmoothing, u: np.ndarray, y: np.ndarray, delta: float
) -> MomentSet:
    """Moment sums of a Kalman smoothing, with z_k taken to equal y_k"""
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    N = y.size
    means = smoothed.means
    second = smoothed.covs + np.einsum("ki,kj->kij", means, means)
    cross = smoothed.lag_covs + np.einsum("ki,kj->kij", means[:N], means[1:])

    return MomentSet.from_sums(
        Gxx=second[:N].sum(axis=0),
        Gqq=second[1:].sum(axis=0),
        Gxq=cross.sum(axis=0),
        Gux=u @ means[:N],
        Guq=u @ means[1:],
        Gxz=y @ means[:N],
        Guz=float(u @ y),
        Guu=float(u @ u),
        N=N,
        delta=delta,
    )


def kalman_smoother_moments(
    model: ShiftModel, u: np.ndarray, y: np.ndarray, r: float, prior: StatePrior
) -> MomentSet:
    """Exact linear-Gaussian moment sums for the KS-EM baseline"""
    smoothed = kalman_smoother(model, u, y, r, prior)
    return smoothing_moments(smoothed, u, y, model.delta)

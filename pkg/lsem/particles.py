"""particles.py

By: Liam Strand
On: Summer 2023

A bootstrap particle filter and a forward-filtering backward-smoothing (FFBSm)
particle smoother for the shift-operator model. The observation model is
pluggable (see observations.py), so the same code runs on interval-censored
Lebesgue data and on plain Gaussian measurements.

Weights are kept as normalized log-weights. The smoother costs O(M^2) per step;
only one M x M weight matrix is alive at a time unless the caller asks to keep
them all.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from lsem.errors import SingularTransitionError, TraceError, WeightCollapseError
from lsem.model import ShiftModel, StatePrior, psd_sqrt
from lsem.observations import Observation
from lsem.truncated import LOG_PROB_FLOOR

_LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParticleSet:
    """Weighted particles approximating p(x_k | y_1:k)"""

    particles: np.ndarray
    log_weights: np.ndarray
    resampled: bool = False

    @property
    def weights(self) -> np.ndarray:
        """Normalized weights"""
        return np.exp(self.log_weights)

    @property
    def M(self) -> int:
        """Number of particles"""
        return self.particles.shape[0]

    @property
    def ess(self) -> float:
        """Effective sample size of the weights"""
        return effective_sample_size(self.weights)

    def mean(self) -> np.ndarray:
        """Weighted particle mean"""
        return self.weights @ self.particles


@dataclass
class SmoothedEnsemble:
    """Filter particles reweighted to approximate p(x_k | y_1:N)

    cross_moments[k] holds sum_ij W_k(i, j) x_k(i) x_{k+1}(j)^T. pairwise[k]
    holds W_k itself, and is only filled when the smoother is asked to keep it.
    """

    particles: List[np.ndarray]
    weights: np.ndarray
    cross_moments: np.ndarray
    pairwise: Optional[List[np.ndarray]] = field(default=None)

    def __len__(self) -> int:
        return len(self.particles)

    def means(self) -> np.ndarray:
        """Smoothed means, one row per step"""
        return np.array([w @ x for w, x in zip(self.weights, self.particles)])

    def variances(self) -> np.ndarray:
        """Smoothed marginal variances, one row per step"""
        out = []
        for w, x in zip(self.weights, self.particles):
            centered = x - w @ x
            out.append(w @ (centered * centered))
        return np.array(out)


def effective_sample_size(weights: np.ndarray) -> float:
    """1 / sum(w^2) for normalized weights"""
    return float(1.0 / np.sum(np.square(weights)))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draws M ancestor indices with one uniform offset shared by all strata
    Parameters: Normalized weights, a random generator
       Returns: An integer index array of length M
       Effects: Advances the generator by one draw
    """
    M = weights.size
    positions = (rng.random() + np.arange(M)) / M
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), M - 1)


def _normalize(log_weights: np.ndarray) -> np.ndarray:
    return log_weights - logsumexp(log_weights)


def particle_filter(
    model: ShiftModel,
    u: np.ndarray,
    observation: Observation,
    prior: StatePrior,
    particles: int = 1000,
    seed=0,
    ess_threshold: float = 0.5,
) -> List[ParticleSet]:
    """Bootstrap particle filter
    Parameters: The transition model, the input, the data as an observation
                model, the initial-state prior, the particle count, a seed (or
                anything numpy.random.default_rng accepts), and the resampling
                threshold as a fraction of the particle count
       Returns: N + 1 particle sets. Sets 0..N-1 are filtered on the data; the
                last one is the prediction of x_{N+1}, weighted like set N-1.
       Effects: None
         Notes: Raises WeightCollapseError when every particle sits at the
                likelihood floor at some step.
    """
    u = np.asarray(u, dtype=float).ravel()
    N = len(observation)
    if u.size != N:
        raise TraceError(f"input has {u.size} samples, data has {N}")
    if particles < 2:
        raise ValueError("the particle filter needs at least two particles")

    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    M = particles
    n = model.n
    noise_factor = psd_sqrt(model.Qd)
    Bd = model.Bd[:, 0]
    C = model.C[0]

    x = prior.mean + rng.standard_normal((M, n)) @ psd_sqrt(prior.cov).T
    log_weights = np.full(M, -np.log(M))
    resamples = 0

    filtered = []
    for k in range(N):
        resampled = False
        if k > 0:
            weights = np.exp(log_weights)
            if effective_sample_size(weights) < ess_threshold * M:
                x = x[systematic_resample(weights, rng)]
                log_weights = np.full(M, -np.log(M))
                resampled = True
                resamples += 1
            noise = rng.standard_normal((M, n)) @ noise_factor.T
            x = x @ model.Ad.T + Bd * u[k - 1] + noise

        loglik = observation.log_likelihood(k, x @ C + model.D * u[k])
        if np.all(loglik <= LOG_PROB_FLOOR):
            raise WeightCollapseError(f"all particle weights collapsed at step {k}")
        log_weights = _normalize(log_weights + loglik)
        filtered.append(ParticleSet(x, log_weights, resampled))

    noise = rng.standard_normal((M, n)) @ noise_factor.T
    predicted = x @ model.Ad.T + Bd * u[N - 1] + noise
    filtered.append(ParticleSet(predicted, log_weights))

    _LOG.debug(
        "particle filter: %d steps, %d particles, %d resamples, %.2f s",
        N,
        M,
        resamples,
        time.perf_counter() - started,
    )
    return filtered


def _transition_factor(model: ShiftModel) -> np.ndarray:
    try:
        return cholesky(model.Qd, lower=True)
    except LinAlgError as err:
        raise SingularTransitionError(
            "transition covariance Qd is singular; floor its eigenvalues first"
        ) from err


def particle_smoother(
    filtered: Sequence[ParticleSet],
    model: ShiftModel,
    u: np.ndarray,
    keep_pairwise: bool = False,
) -> SmoothedEnsemble:
    """Forward-filtering backward-smoothing reweighting of filter particles
    Parameters: The particle sets from particle_filter, the transition model,
                the input, and whether to keep every pairwise weight matrix
       Returns: The smoothed ensemble, with per-step smoothing weights and
                the cross moments needed for E{x_k x_{k+1}^T}
       Effects: None
         Notes: Raises SingularTransitionError when Qd has no Cholesky factor.
    """
    u = np.asarray(u, dtype=float).ravel()
    T = len(filtered)
    n = model.n
    L = _transition_factor(model)
    Bd = model.Bd[:, 0]

    weights = np.empty((T, filtered[0].M))
    weights[-1] = filtered[-1].weights
    cross = np.zeros((max(T - 1, 0), n, n))
    pairwise: Optional[List[np.ndarray]] = [] if keep_pairwise else None

    for k in range(T - 2, -1, -1):
        current = filtered[k]
        successors = filtered[k + 1].particles

        mean = current.particles @ model.Ad.T + Bd * u[k]
        white_mean = solve_triangular(L, mean.T, lower=True).T
        white_next = solve_triangular(L, successors.T, lower=True).T

        # log p(x_{k+1}(j) | x_k(i)) up to a constant shared by every pair
        log_joint = current.log_weights[:, None] - 0.5 * cdist(
            white_mean, white_next, "sqeuclidean"
        )
        log_norm = logsumexp(log_joint, axis=0)
        W = np.exp(log_joint - log_norm[None, :]) * weights[k + 1][None, :]

        marginal = W.sum(axis=1)
        weights[k] = marginal / marginal.sum()
        cross[k] = current.particles.T @ W @ successors
        if pairwise is not None:
            pairwise.append(W)

    if pairwise is not None:
        pairwise.reverse()

    return SmoothedEnsemble(
        particles=[s.particles for s in filtered],
        weights=weights,
        cross_moments=cross,
        pairwise=pairwise,
    )

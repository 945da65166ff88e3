"""truncated.py

By: Andrew Powers and Liam Strand
On: Summer 2023

Gaussian kernels for interval-censored outputs. The noiseless output z is known
to lie in [a, b]; the filter sees it through a Gaussian of standard deviation
eps around the predicted output m. These functions give the probability of the
interval and the mean of the Gaussian truncated to it.

Everything is evaluated with log_ndtr and, for intervals in the right tail,
by reflecting the interval about m, so displacements of tens of eps neither
underflow nor cancel.
"""
import numpy as np
from scipy.special import log_ndtr, ndtr

# Probabilities are clamped at this value before taking logarithms
PROB_FLOOR = 1e-300
LOG_PROB_FLOOR = np.log(PROB_FLOOR)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _standardize(m, eps, a, b):
    m = np.asarray(m, dtype=float)
    alpha = (np.asarray(a, dtype=float) - m) / eps
    beta = (np.asarray(b, dtype=float) - m) / eps
    return alpha, beta


def _log_mass(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """log(Phi(beta) - Phi(alpha)) for alpha <= 0 (left or straddling intervals)"""
    with np.errstate(divide="ignore", invalid="ignore"):
        lb = log_ndtr(beta)
        gap = log_ndtr(alpha) - lb
        return lb + np.log(-np.expm1(gap))


def _log_interval_mass(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    # Reflect right-tail intervals: Phi(b) - Phi(a) = Phi(-a) - Phi(-b)
    right = alpha > 0.0
    lo = np.where(right, -beta, alpha)
    hi = np.where(right, -alpha, beta)
    return _log_mass(lo, hi)


def interval_likelihood(m, eps: float, a, b):
    """Probability that N(m, eps^2) falls in [a, b]
    Parameters: The predicted output mean(s), the noise standard deviation eps,
                and the interval bounds (may be infinite)
       Returns: Phi((b - m)/eps) - Phi((a - m)/eps)
       Effects: None
    """
    alpha, beta = _standardize(m, eps, a, b)
    return np.clip(ndtr(beta) - ndtr(alpha), 0.0, 1.0)


def log_interval_likelihood(m, eps: float, a, b):
    """log interval_likelihood, clamped below at log(1e-300)"""
    alpha, beta = _standardize(m, eps, a, b)
    logp = _log_interval_mass(alpha, beta)
    return np.maximum(np.nan_to_num(logp, nan=LOG_PROB_FLOOR), LOG_PROB_FLOOR)


def _log_phi(x: np.ndarray) -> np.ndarray:
    return -0.5 * x * x - _LOG_SQRT_2PI


def truncated_gaussian_mean(m, eps: float, a, b):
    """Mean of N(m, eps^2) truncated to [a, b]
    Parameters: The untruncated mean(s), the standard deviation eps, and the
                interval bounds (may be infinite)
       Returns: m + eps (phi(alpha) - phi(beta)) / (Phi(beta) - Phi(alpha)),
                alpha = (a - m)/eps, beta = (b - m)/eps, clipped into [a, b]
       Effects: None
    """
    m = np.asarray(m, dtype=float)
    alpha, beta = _standardize(m, eps, a, b)

    right = alpha > 0.0
    lo = np.where(right, -beta, alpha)
    hi = np.where(right, -alpha, beta)

    with np.errstate(over="ignore", invalid="ignore"):
        log_z = _log_mass(lo, hi)
        ratio = np.exp(_log_phi(lo) - log_z) - np.exp(_log_phi(hi) - log_z)
    ratio = np.where(right, -ratio, ratio)
    ratio = np.nan_to_num(ratio, nan=0.0)

    return np.clip(m + eps * ratio, a, b)

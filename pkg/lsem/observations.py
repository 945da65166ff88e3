"""observations.py

By: Liam Strand
On: Summer 2023

How a step's data constrains the predicted output. The particle filter and the
moment assembly only ever ask two questions of the data at step k: how likely
is it given the predicted output, and what is the conditional mean of z_k.
Both observation models below answer them, so the same particle machinery
handles the Lebesgue-sampled data and the plain Gaussian baseline.
"""
from typing import Protocol

import numpy as np

from lsem.sampler import QuantizedTrace
from lsem.truncated import log_interval_likelihood, truncated_gaussian_mean


class Observation(Protocol):
    """The data seen at each grid step"""

    def __len__(self) -> int:
        ...

    def log_likelihood(self, k: int, predicted: np.ndarray) -> np.ndarray:
        """log p(data_k | predicted output) for each predicted output"""

    def output_mean(self, k: int, predicted: np.ndarray) -> np.ndarray:
        """E{z_k | data_k, predicted output} for each predicted output"""


class IntervalObservation:
    """z_k is known to lie in [a_k, b_k] and is seen through N(0, eps^2) noise"""

    def __init__(self, a: np.ndarray, b: np.ndarray, eps: float):
        if not eps > 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.eps = float(eps)

    @classmethod
    def from_trace(cls, trace: QuantizedTrace, eps: float) -> "IntervalObservation":
        """The crossing-consistent bands of a quantized trace"""
        lower, upper = trace.crossing_bands()
        return cls(lower, upper, eps)

    @classmethod
    def uninformative(cls, N: int, eps: float) -> "IntervalObservation":
        """Bands (-inf, inf): the data says nothing"""
        return cls(np.full(N, -np.inf), np.full(N, np.inf), eps)

    def __len__(self) -> int:
        return self.a.size

    def log_likelihood(self, k: int, predicted: np.ndarray) -> np.ndarray:
        return log_interval_likelihood(predicted, self.eps, self.a[k], self.b[k])

    def output_mean(self, k: int, predicted: np.ndarray) -> np.ndarray:
        return truncated_gaussian_mean(predicted, self.eps, self.a[k], self.b[k])


class GaussianObservation:
    """y_k = z_k + v_k with v_k ~ N(0, r), and z_k taken to equal y_k"""

    def __init__(self, y: np.ndarray, r: float):
        if not r > 0.0:
            raise ValueError(f"measurement variance must be positive, got {r}")
        self.y = np.asarray(y, dtype=float)
        self.r = float(r)

    def __len__(self) -> int:
        return self.y.size

    def log_likelihood(self, k: int, predicted: np.ndarray) -> np.ndarray:
        resid = self.y[k] - np.asarray(predicted, dtype=float)
        return -0.5 * (resid * resid / self.r + np.log(2.0 * np.pi * self.r))

    def output_mean(self, k: int, predicted: np.ndarray) -> np.ndarray:
        return np.full(np.shape(predicted), self.y[k])

"""moments.py

By: Liam Strand
On: Summer 2023

The smoothed moment sums that fully determine the EM surrogate. With
E_bar{.} = sum_{k=1..N} E{. | y_1:N}:

    Gxx = E_bar{x_k x_k^T}      Gqq = E_bar{x_{k+1} x_{k+1}^T}
    Gxq = E_bar{x_k x_{k+1}^T}  Gux = E_bar{u_k x_k^T}
    Guq = E_bar{u_k x_{k+1}^T}  Gxz = E_bar{x_k z_k}
    Guz = E_bar{u_k z_k}        Guu = E_bar{u_k^2}

and the incremental-form moments Gxd, Gud, Gdd, which are fixed linear
combinations of the above.
"""
from dataclasses import dataclass

import numpy as np

from lsem.errors import TraceError
from lsem.model import ShiftModel, symmetrize
from lsem.observations import Observation
from lsem.particles import SmoothedEnsemble


@dataclass(frozen=True)
class MomentSet:
    """Smoothed moment sums over N steps on a grid of step delta"""

    Gxx: np.ndarray
    Gqq: np.ndarray
    Gxq: np.ndarray
    Gux: np.ndarray
    Guq: np.ndarray
    Gxz: np.ndarray
    Guz: float
    Guu: float
    Gxd: np.ndarray
    Gud: np.ndarray
    Gdd: np.ndarray
    N: int
    delta: float

    @classmethod
    def from_sums(
        cls,
        Gxx: np.ndarray,
        Gqq: np.ndarray,
        Gxq: np.ndarray,
        Gux: np.ndarray,
        Guq: np.ndarray,
        Gxz: np.ndarray,
        Guz: float,
        Guu: float,
        N: int,
        delta: float,
    ) -> "MomentSet":
        """Builds a moment set, deriving the incremental-form moments
        Parameters: The eight shift-form sums, the step count, the grid step
           Returns: The full moment set, with
                    Gxd = (Gxq - Gxx)/delta, Gud = (Guq - Gux)/delta and
                    Gdd = (Gqq - Gxq - Gxq^T + Gxx)/delta^2
           Effects: None
        """
        n = np.atleast_2d(Gxx).shape[0]
        Gxx = symmetrize(np.atleast_2d(np.asarray(Gxx, dtype=float)))
        Gqq = symmetrize(np.atleast_2d(np.asarray(Gqq, dtype=float)))
        Gxq = np.atleast_2d(np.asarray(Gxq, dtype=float))
        Gux = np.asarray(Gux, dtype=float).reshape(1, n)
        Guq = np.asarray(Guq, dtype=float).reshape(1, n)
        Gxz = np.asarray(Gxz, dtype=float).reshape(n, 1)
        return cls(
            Gxx=Gxx,
            Gqq=Gqq,
            Gxq=Gxq,
            Gux=Gux,
            Guq=Guq,
            Gxz=Gxz,
            Guz=float(Guz),
            Guu=float(Guu),
            Gxd=(Gxq - Gxx) / delta,
            Gud=(Guq - Gux) / delta,
            Gdd=symmetrize(Gqq - Gxq - Gxq.T + Gxx) / delta**2,
            N=int(N),
            delta=float(delta),
        )

    @property
    def n(self) -> int:
        """State dimension"""
        return self.Gxx.shape[0]

    def gram(self) -> np.ndarray:
        """[[Gxx, Gux^T], [Gux, Guu]]"""
        return np.block([[self.Gxx, self.Gux.T], [self.Gux, np.array([[self.Guu]])]])


def estep_moments(
    ensemble: SmoothedEnsemble,
    u: np.ndarray,
    observation: Observation,
    model: ShiftModel,
) -> MomentSet:
    """Assembles the moment sums from a smoothed particle ensemble
    Parameters: The smoothed ensemble over x_1..x_{N+1}, the input, the data
                as an observation model, and the model the ensemble was
                computed under (for C, D and delta)
       Returns: The moment set; z_k enters through the conditional mean of
                z_k given each particle and the step-k data
       Effects: None
    """
    u = np.asarray(u, dtype=float).ravel()
    N = len(observation)
    if len(ensemble) != N + 1 or u.size != N:
        raise TraceError(
            f"ensemble has {len(ensemble)} steps, input {u.size}, data {N}; "
            "expected N + 1, N and N"
        )

    n = model.n
    C = model.C[0]
    means = ensemble.means()
    second = np.array(
        [(x * w[:, None]).T @ x for w, x in zip(ensemble.weights, ensemble.particles)]
    )

    Gxz = np.zeros(n)
    Guz = 0.0
    for k in range(N):
        x = ensemble.particles[k]
        w = ensemble.weights[k]
        zhat = observation.output_mean(k, x @ C + model.D * u[k])
        Gxz += (w * zhat) @ x
        Guz += u[k] * float(w @ zhat)

    return MomentSet.from_sums(
        Gxx=second[:N].sum(axis=0),
        Gqq=second[1:].sum(axis=0),
        Gxq=ensemble.cross_moments.sum(axis=0),
        Gux=u @ means[:N],
        Guq=u @ means[1:],
        Gxz=Gxz,
        Guz=Guz,
        Guu=float(u @ u),
        N=N,
        delta=model.delta,
    )


def moments_from_trajectory(
    x: np.ndarray, u: np.ndarray, z: np.ndarray, delta: float
) -> MomentSet:
    """Moment sums of a fully known trajectory
    Parameters: States x_1..x_{N+1} (N + 1 rows), input and output (N each),
                the grid step
       Returns: The moment set with every expectation replaced by its value
       Effects: None
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and x.shape[1] > 1:
        x = x.T
    u = np.asarray(u, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    N = u.size
    if x.shape[0] != N + 1 or z.size != N:
        raise TraceError("a trajectory needs N + 1 states for N inputs and outputs")

    head, tail = x[:N], x[1:]
    return MomentSet.from_sums(
        Gxx=head.T @ head,
        Gqq=tail.T @ tail,
        Gxq=head.T @ tail,
        Gux=u @ head,
        Guq=u @ tail,
        Gxz=head.T @ z,
        Guz=float(u @ z),
        Guu=float(u @ u),
        N=N,
        delta=delta,
    )

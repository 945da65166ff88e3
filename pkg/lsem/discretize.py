"""discretize.py

By: Liam Strand
On: Summer 2023

Exact zero-order-hold discretization of a continuous-time model onto the fast
grid, in shift-operator and incremental form, and the algebraic maps between
the two.

Bd and Qd come from exponentials of augmented block matrices, so A may be
singular and no quadrature is involved:

    expm([[A, B], [0, 0]] delta)   = [[Ad, Bd], [0, 1]]
    expm([[-A, Q], [0, A^T]] delta) = [[., Ad^-1 Qd], [0, Ad^T]]
"""
import numpy as np
from scipy.linalg import expm

from lsem.errors import ModelError
from lsem.model import (
    ContinuousModel,
    IncrementalModel,
    ShiftModel,
    StatePrior,
    nearest_psd,
    symmetrize,
)


def matrix_exponential(M: np.ndarray) -> np.ndarray:
    """Computes exp(M) by scaling and squaring with a Pade approximant
    Parameters: A square matrix with finite entries
       Returns: exp(M)
       Effects: None
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ModelError("matrix exponential of a matrix with non-finite entries")
    return expm(M)


def _discrete_ab(A: np.ndarray, B: np.ndarray, delta: float):
    n = A.shape[0]
    # M = [A  B]
    #     [0  0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n:] = B
    phi = matrix_exponential(M * delta)
    return phi[:n, :n], phi[:n, n:]


def _discrete_q(A: np.ndarray, Q: np.ndarray, delta: float) -> np.ndarray:
    n = A.shape[0]
    # M = [-A  Q ]
    #     [ 0  A^T]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = symmetrize(Q)
    M[n:, n:] = A.T
    phi = matrix_exponential(M * delta)

    # phi12 = Ad^-1 Qd, phi22 = Ad^T
    Ad = phi[n:, n:].T
    return nearest_psd(Ad @ phi[:n, n:])


def c2d_shift(model: ContinuousModel, delta: float) -> ShiftModel:
    """Discretizes a continuous model under a zero-order-hold input
    Parameters: A valid continuous model, the grid step delta
       Returns: The shift-operator model with the same second-order output
                properties at the grid instants
       Effects: None
    """
    if not delta > 0.0:
        raise ModelError(f"step delta must be positive, got {delta}")

    Ad, Bd = _discrete_ab(model.A, model.B, delta)
    Qd = _discrete_q(model.A, model.Q, delta)
    return ShiftModel(Ad=Ad, Bd=Bd, C=model.C, D=model.D, Qd=Qd, delta=delta)


def shift_to_incremental(m: ShiftModel) -> IncrementalModel:
    """Ain = (Ad - I)/delta, Bin = Bd/delta, Qin = Qd/delta"""
    return IncrementalModel(
        Ain=(m.Ad - np.eye(m.n)) / m.delta,
        Bin=m.Bd / m.delta,
        C=m.C,
        D=m.D,
        Qin=m.Qd / m.delta,
        delta=m.delta,
    )


def incremental_to_shift(m: IncrementalModel) -> ShiftModel:
    """Ad = I + delta Ain, Bd = delta Bin, Qd = delta Qin"""
    return ShiftModel(
        Ad=np.eye(m.n) + m.delta * m.Ain,
        Bd=m.delta * m.Bin,
        C=m.C,
        D=m.D,
        Qd=m.delta * m.Qin,
        delta=m.delta,
    )


def incremental_to_continuous(
    m: IncrementalModel, prior: StatePrior
) -> ContinuousModel:
    """Reads an incremental model as the continuous model it tends to when the
    step goes to zero.
    Parameters: An incremental model, the initial-state prior to attach
       Returns: ContinuousModel(Ain, Bin, C, D, Qin, mu1, P1)
       Effects: None
    """
    return ContinuousModel(
        A=m.Ain,
        B=m.Bin,
        C=m.C,
        D=m.D,
        Q=symmetrize(m.Qin),
        mu1=prior.mean,
        P1=prior.cov,
    )


def discrete_noise_quadrature(
    A: np.ndarray, Q: np.ndarray, delta: float, panels: int = 8, nodes: int = 20
) -> np.ndarray:
    """Evaluates Qd = int_0^delta e^{As} Q e^{A^T s} ds by composite
    Gauss-Legendre quadrature. Slow; kept as a check on _discrete_q.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0.0, delta, panels + 1)
    total = np.zeros_like(np.atleast_2d(Q), dtype=float)
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        for node, weight in zip(x, w):
            E = matrix_exponential(A * (lo + half * (node + 1.0)))
            total += half * weight * (E @ Q @ E.T)
    return symmetrize(total)

"""model.py

By: Liam Strand
On: Summer 2023

The single-input, single-output state-space models lsem works with: the
continuous-time model the user cares about, and its two discrete-time
equivalents on the fast grid (shift-operator and incremental form). Also the
covariance helpers everything else leans on, and the similarity-invariant
parameters used to compare estimates whose state basis is arbitrary.

All models are frozen dataclasses over read-only float arrays, so they can be
shared between threads and worker processes without copying.
"""
from dataclasses import dataclass
from typing import List, Union

import numpy as np

from lsem.errors import FactorizationError, ModelError

# Relative asymmetry that is silently symmetrized away
SYMMETRY_TOL = 1e-12

# Smallest eigenvalue allowed, relative to the Frobenius norm
PSD_TOL = 1e-10

# Significant digits kept when ordering eigenvalues by real part
_SORT_DIGITS = 10


def _readonly(values, ndmin: int = 2) -> np.ndarray:
    arr = np.array(values, dtype=float, ndmin=ndmin)
    arr.setflags(write=False)
    return arr


def _column(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim < 2:
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


def _row(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim < 2:
        arr = arr.reshape(1, -1)
    arr.setflags(write=False)
    return arr


def _vector(values) -> np.ndarray:
    arr = np.array(values, dtype=float).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StatePrior:
    """Gaussian distribution of the initial state x_1"""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _vector(self.mean))
        object.__setattr__(self, "cov", _readonly(self.cov))

    @classmethod
    def zero(cls, n: int) -> "StatePrior":
        """A state known to start at the origin"""
        return cls(np.zeros(n), np.zeros((n, n)))


@dataclass(frozen=True)
class ContinuousModel:
    """dx = (A x + B u) dt + dw,  z = C x + D u,  E{dw dw^T} = Q dt,
    x_1 ~ N(mu1, P1)"""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float
    Q: np.ndarray
    mu1: np.ndarray
    P1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _readonly(self.A))
        object.__setattr__(self, "B", _column(self.B))
        object.__setattr__(self, "C", _row(self.C))
        object.__setattr__(self, "D", float(self.D))
        object.__setattr__(self, "Q", _readonly(self.Q))
        object.__setattr__(self, "mu1", _vector(self.mu1))
        object.__setattr__(self, "P1", _readonly(self.P1))

    @property
    def n(self) -> int:
        """State dimension"""
        return self.A.shape[0]

    @property
    def prior(self) -> StatePrior:
        """The initial-state distribution"""
        return StatePrior(self.mu1, self.P1)


@dataclass(frozen=True)
class ShiftModel:
    """x_{k+1} = Ad x_k + Bd u_k + w_k,  z_k = C x_k + D u_k,  w_k ~ N(0, Qd)"""

    Ad: np.ndarray
    Bd: np.ndarray
    C: np.ndarray
    D: float
    Qd: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "Ad", _readonly(self.Ad))
        object.__setattr__(self, "Bd", _column(self.Bd))
        object.__setattr__(self, "C", _row(self.C))
        object.__setattr__(self, "D", float(self.D))
        object.__setattr__(self, "Qd", _readonly(self.Qd))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n(self) -> int:
        """State dimension"""
        return self.Ad.shape[0]


@dataclass(frozen=True)
class IncrementalModel:
    """x_{k+1} - x_k = delta (Ain x_k + Bin u_k) + dw_k,  dw_k ~ N(0, delta Qin)"""

    Ain: np.ndarray
    Bin: np.ndarray
    C: np.ndarray
    D: float
    Qin: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "Ain", _readonly(self.Ain))
        object.__setattr__(self, "Bin", _column(self.Bin))
        object.__setattr__(self, "C", _row(self.C))
        object.__setattr__(self, "D", float(self.D))
        object.__setattr__(self, "Qin", _readonly(self.Qin))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n(self) -> int:
        """State dimension"""
        return self.Ain.shape[0]


AnyModel = Union[ContinuousModel, ShiftModel, IncrementalModel]


@dataclass(frozen=True)
class InvariantParameters:
    """Quantities that do not change under a change of state basis"""

    eigenvalues: np.ndarray
    cb: float
    d: float
    cqc: float

    def to_vector(self) -> np.ndarray:
        """Flatten to [Re eig..., Im eig..., CB, D, CQC^T]"""
        return np.concatenate(
            [
                self.eigenvalues.real,
                self.eigenvalues.imag,
                [self.cb, self.d, self.cqc],
            ]
        )

    @staticmethod
    def labels(n: int) -> List[str]:
        """Column names matching to_vector() for a model of order n"""
        return (
            [f"eig{i + 1}_re" for i in range(n)]
            + [f"eig{i + 1}_im" for i in range(n)]
            + ["cb", "d", "cqc"]
        )


#### #### #### COVARIANCE HELPERS #### #### ####


def symmetrize(M: np.ndarray) -> np.ndarray:
    """The symmetric part of a square matrix"""
    return 0.5 * (M + M.T)


def nearest_psd(M: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Symmetrize M and clip its eigenvalues from below at floor
    Parameters: A square matrix, the smallest eigenvalue to allow
       Returns: A symmetric matrix with eigenvalues >= floor
       Effects: None
    """
    vals, vecs = np.linalg.eigh(symmetrize(M))
    clipped = np.maximum(vals, floor)
    if np.array_equal(clipped, vals):
        return symmetrize(M)
    return symmetrize((vecs * clipped) @ vecs.T)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root S with S S^T = M, valid for singular M
    Parameters: A symmetric positive semidefinite matrix
       Returns: Its symmetric square root
       Effects: None
         Notes: Raises FactorizationError when M has an eigenvalue below
                -PSD_TOL relative to its norm.
    """
    M = np.atleast_2d(M)
    vals, vecs = np.linalg.eigh(symmetrize(M))
    scale = max(np.linalg.norm(M), np.finfo(float).tiny)
    if vals.size and vals.min() < -PSD_TOL * scale:
        raise FactorizationError(
            "matrix is not positive semidefinite "
            f"(smallest eigenvalue {vals.min():.3e})"
        )
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def _checked_covariance(M: np.ndarray, name: str, n: int) -> np.ndarray:
    if M.shape != (n, n):
        raise ModelError(f"{name} has shape {M.shape}, expected {(n, n)}")
    norm = np.linalg.norm(M)
    if norm == 0.0:
        return M
    if np.linalg.norm(M - M.T) > SYMMETRY_TOL * norm:
        raise ModelError(f"{name} is not symmetric")
    sym = symmetrize(M)
    smallest = np.linalg.eigvalsh(sym).min()
    if smallest < -PSD_TOL * norm:
        raise ModelError(
            f"{name} is not positive semidefinite (smallest eigenvalue {smallest:.3e})"
        )
    return sym


def _check_system(F: np.ndarray, G: np.ndarray, C: np.ndarray, names: str) -> int:
    state, inputs, output = names.split(",")
    if F.ndim != 2 or F.shape[0] != F.shape[1] or F.shape[0] < 1:
        raise ModelError(f"{state} must be a non-empty square matrix, got {F.shape}")
    n = F.shape[0]
    if G.shape != (n, 1):
        raise ModelError(f"{inputs} has shape {G.shape}, expected {(n, 1)}")
    if C.shape != (1, n):
        raise ModelError(f"{output} has shape {C.shape}, expected {(1, n)}")
    return n


def _check_finite(model: AnyModel) -> None:
    for name, value in vars(model).items():
        if not np.all(np.isfinite(value)):
            raise ModelError(f"{name} has non-finite entries")


#### #### #### OPERATIONS #### #### ####


def validate(model: AnyModel) -> AnyModel:
    """Checks the invariants of a model
    Parameters: A continuous, shift or incremental model
       Returns: The same model with its covariances symmetrized
       Effects: None
         Notes: Raises ModelError on dimension mismatch, asymmetric or
                indefinite covariances, a non-positive step or non-finite
                entries. Applying validate twice gives the same result.
    """
    _check_finite(model)
    if isinstance(model, ContinuousModel):
        n = _check_system(model.A, model.B, model.C, "A,B,C")
        if model.mu1.shape != (n,):
            raise ModelError(f"mu1 has shape {model.mu1.shape}, expected {(n,)}")
        return ContinuousModel(
            A=model.A,
            B=model.B,
            C=model.C,
            D=model.D,
            Q=_checked_covariance(model.Q, "Q", n),
            mu1=model.mu1,
            P1=_checked_covariance(model.P1, "P1", n),
        )

    if model.delta <= 0.0:
        raise ModelError(f"step delta must be positive, got {model.delta}")

    if isinstance(model, ShiftModel):
        n = _check_system(model.Ad, model.Bd, model.C, "Ad,Bd,C")
        return ShiftModel(
            Ad=model.Ad,
            Bd=model.Bd,
            C=model.C,
            D=model.D,
            Qd=_checked_covariance(model.Qd, "Qd", n),
            delta=model.delta,
        )

    n = _check_system(model.Ain, model.Bin, model.C, "Ain,Bin,C")
    return IncrementalModel(
        Ain=model.Ain,
        Bin=model.Bin,
        C=model.C,
        D=model.D,
        Qin=_checked_covariance(model.Qin, "Qin", n),
        delta=model.delta,
    )


def sorted_eigenvalues(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of A ordered by real part, then imaginary part"""
    eig = np.linalg.eigvals(A).astype(complex)
    scale = max(np.abs(eig).max(initial=0.0), 1.0)
    real_key = np.round(eig.real / scale, _SORT_DIGITS)
    order = np.lexsort((eig.imag, real_key))
    return eig[order]


def invariant_parameters(model: ContinuousModel) -> InvariantParameters:
    """Extracts the parameters that a change of state basis leaves alone
    Parameters: A valid continuous-time model
       Returns: eig(A) (sorted), C B, D and C Q C^T
       Effects: None
    """
    return InvariantParameters(
        eigenvalues=sorted_eigenvalues(model.A),
        cb=float((model.C @ model.B)[0, 0]),
        d=float(model.D),
        cqc=float((model.C @ model.Q @ model.C.T)[0, 0]),
    )


def similarity_transform(model: ContinuousModel, T: np.ndarray) -> ContinuousModel:
    """Expresses a model in the state basis x' = T x"""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    T_inv = np.linalg.inv(T)
    return ContinuousModel(
        A=T @ model.A @ T_inv,
        B=T @ model.B,
        C=model.C @ T_inv,
        D=model.D,
        Q=symmetrize(T @ model.Q @ T.T),
        mu1=T @ model.mu1,
        P1=symmetrize(T @ model.P1 @ T.T),
    )

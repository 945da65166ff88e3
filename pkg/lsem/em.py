"""em.py

By: Liam Strand
On: Summer 2023

Closed-form M-steps for the shift-operator and incremental models, the EM
surrogate they maximize, and the two identification loops: PS-EM (particle
smoother over the censored Lebesgue data) and KS-EM (Kalman smoother that
takes the held output at face value).

The filter always propagates with the exact shift-form transition. The
incremental form only changes how the M-step parameterizes its output, and the
two are algebraically the same update.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import LinAlgError, solve

from lsem.discretize import (
    c2d_shift,
    incremental_to_continuous,
    incremental_to_shift,
    shift_to_incremental,
)
from lsem.errors import IdentificationError, InsufficientExcitationError, NumericalError
from lsem.kalman import kalman_smoother, smoothing_moments
from lsem.model import (
    ContinuousModel,
    IncrementalModel,
    ShiftModel,
    invariant_parameters,
    nearest_psd,
    symmetrize,
    validate,
)
from lsem.moments import MomentSet, estep_moments
from lsem.observations import IntervalObservation, Observation
from lsem.particles import particle_filter, particle_smoother
from lsem.sampler import QuantizedTrace

_LOG = logging.getLogger(__name__)

# Gram matrices worse conditioned than this are treated as singular
MAX_GRAM_CONDITION = 1e14

# Absolute lower bound on the eigenvalues of the transition covariance
_MIN_QD_EIGENVALUE = 1e-24

SystemMatrices = Tuple[np.ndarray, np.ndarray, np.ndarray, float, np.ndarray]


class EMConfig(BaseModel):
    """Settings of an EM identification run"""

    model_config = ConfigDict(extra="forbid")

    eps: Optional[float] = Field(default=None, gt=0.0)
    max_iters: int = Field(default=50, ge=1)
    rel_tol: float = Field(default=1e-3, gt=0.0)
    particles: int = Field(default=1000, ge=2)
    ess_threshold: float = Field(default=0.5, gt=0.0, le=1.0)
    form: Literal["shift", "incremental"] = "incremental"
    seed: int = Field(default=0, ge=0)
    baseline_r: Optional[float] = Field(default=None, gt=0.0)
    estimate_output: bool = False
    qd_floor: float = Field(default=1e-12, ge=0.0)

    def resolved(self, tau: float) -> "EMConfig":
        """Fills the tau-dependent defaults: eps = tau/100, r = tau^2/3"""
        return self.model_copy(
            update={
                "eps": self.eps if self.eps is not None else 1e-2 * tau,
                "baseline_r": (
                    self.baseline_r if self.baseline_r is not None else tau**2 / 3.0
                ),
            }
        )


@dataclass(frozen=True)
class EMIteration:
    """One EM iteration: the new estimate and what it cost"""

    index: int
    model: Union[ShiftModel, IncrementalModel]
    invariants: np.ndarray
    objective: float
    log_likelihood: Optional[float]
    seconds: float
    change: float


@dataclass
class EMTrace:
    """The history of an identification run"""

    method: str
    form: str
    iterations: List[EMIteration] = field(default_factory=list)
    converged: bool = False

    @property
    def iteration_count(self) -> int:
        """Number of completed iterations"""
        return len(self.iterations)

    @property
    def objectives(self) -> np.ndarray:
        """Surrogate objective -2Q - L0 after every iteration"""
        return np.array([it.objective for it in self.iterations])

    @property
    def log_likelihoods(self) -> np.ndarray:
        """Exact log-likelihood before every M-step (KS-EM only, else NaN)"""
        return np.array(
            [
                np.nan if it.log_likelihood is None else it.log_likelihood
                for it in self.iterations
            ]
        )

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready representation"""
        return {
            "method": self.method,
            "form": self.form,
            "converged": self.converged,
            "iterations": self.iteration_count,
            "history": [
                {
                    "iteration": it.index,
                    "invariants": it.invariants.tolist(),
                    "objective": it.objective,
                    "log_likelihood": it.log_likelihood,
                    "change": it.change,
                    "seconds": it.seconds,
                }
                for it in self.iterations
            ],
        }


#### #### #### M-STEPS #### #### ####


def _solve_gram(mom: MomentSet, rhs: np.ndarray) -> np.ndarray:
    gram = mom.gram()
    condition = np.linalg.cond(gram)
    _LOG.debug("M-step Gram condition number %.3e", condition)
    if not np.isfinite(condition) or condition > MAX_GRAM_CONDITION:
        raise InsufficientExcitationError(
            f"Gram matrix is singular (condition number {condition:.3e}); "
            "the input is not exciting enough"
        )
    try:
        return solve(gram, rhs, assume_a="sym")
    except LinAlgError as err:
        raise InsufficientExcitationError(str(err)) from err


def _regression(
    mom: MomentSet, state_moment: np.ndarray, input_moment: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    # [F G; C D] = [[Sx, Gxz], [Su, Guz]]^T Gram^-1
    rhs = np.block(
        [
            [state_moment, mom.Gxz],
            [input_moment, np.array([[mom.Guz]])],
        ]
    )
    theta = _solve_gram(mom, rhs).T
    regressors = np.vstack([state_moment, input_moment])
    explained = regressors.T @ _solve_gram(mom, regressors)
    return theta, explained


def mstep_shift(mom: MomentSet) -> SystemMatrices:
    """Maximizes the EM surrogate of the shift-operator model
    Parameters: The smoothed moment sums
       Returns: (Ad, Bd, C, D, Qd) with
                [Ad Bd; C D] = [[Gxq, Gxz], [Guq, Guz]]^T Gram^-1 and
                Qd = (Gqq - [Gxq; Guq]^T Gram^-1 [Gxq; Guq]) / N
       Effects: None
         Notes: Raises InsufficientExcitationError for a singular Gram matrix
    """
    n = mom.n
    theta, explained = _regression(mom, mom.Gxq, mom.Guq)
    Qd = nearest_psd((mom.Gqq - explained) / mom.N)
    return theta[:n, :n], theta[:n, n:], theta[n:, :n], float(theta[n, n]), Qd


def mstep_delta(mom: MomentSet) -> SystemMatrices:
    """Maximizes the EM surrogate of the incremental model
    Parameters: The smoothed moment sums
       Returns: (Ain, Bin, C, D, Qin) with
                [Ain Bin; C D] = [[Gxd, Gxz], [Gud, Guz]]^T Gram^-1 and
                Qin = delta (Gdd - [Gxd; Gud]^T Gram^-1 [Gxd; Gud]) / N
       Effects: None
    """
    n = mom.n
    theta, explained = _regression(mom, mom.Gxd, mom.Gud)
    Qin = nearest_psd(mom.delta * (mom.Gdd - explained) / mom.N)
    return theta[:n, :n], theta[:n, n:], theta[n:, :n], float(theta[n, n]), Qin


def surrogate_objective(mom: MomentSet, model: ShiftModel, output_var: float) -> float:
    """-2 Q(theta) up to the theta-independent constant L0
    Parameters: The moment sums, the shift model theta, and the variance of
                the output perturbation (eps^2 for PS-EM, r for KS-EM)
       Returns: N log det Qd + (output terms)/output_var + tr(Qd^-1 S)
       Effects: None
    """
    Ad, Bd, C, D, Qd = model.Ad, model.Bd, model.C, model.D, model.Qd
    sign, logdet = np.linalg.slogdet(Qd)
    if sign <= 0:
        return float("inf")

    output = (
        D * D * mom.Guu
        - 2.0 * (C @ mom.Gxz).item()
        - 2.0 * D * mom.Guz
        + 2.0 * D * (mom.Gux @ C.T).item()
        + (C @ mom.Gxx @ C.T).item()
    )
    S = (
        mom.Gqq
        + Ad @ mom.Gxx @ Ad.T
        + mom.Guu * (Bd @ Bd.T)
        - Ad @ mom.Gxq
        - mom.Gxq.T @ Ad.T
        - Bd @ mom.Guq
        - mom.Guq.T @ Bd.T
        + Ad @ mom.Gux.T @ Bd.T
        + Bd @ mom.Gux @ Ad.T
    )
    return float(
        mom.N * logdet + output / output_var + np.trace(solve(Qd, symmetrize(S)))
    )


#### #### #### EM LOOPS #### #### ####


def _floored(model: ShiftModel, qd_floor: float) -> ShiftModel:
    n = model.n
    floor = max(qd_floor * float(np.trace(model.Qd)) / n, _MIN_QD_EIGENVALUE)
    return ShiftModel(
        Ad=model.Ad,
        Bd=model.Bd,
        C=model.C,
        D=model.D,
        Qd=nearest_psd(model.Qd, floor),
        delta=model.delta,
    )


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(old)), np.finfo(float).eps)
    return float(np.linalg.norm(new - old)) / scale


EStep = Callable[[ShiftModel, int], Tuple[MomentSet, Optional[float]]]


def _run_em(
    method: str,
    estep: EStep,
    init: ContinuousModel,
    cfg: EMConfig,
    delta: float,
    output_var: float,
) -> Tuple[ContinuousModel, EMTrace]:
    init = validate(init)
    shift = c2d_shift(init, delta)
    estimate = incremental_to_continuous(shift_to_incremental(shift), init.prior)
    previous = invariant_parameters(estimate).to_vector()
    history = EMTrace(method=method, form=cfg.form)

    for index in range(1, cfg.max_iters + 1):
        started = time.perf_counter()
        try:
            transition = _floored(shift, cfg.qd_floor)
            mom, loglik = estep(transition, index)

            if cfg.form == "shift":
                Ad, Bd, C, D, Qd = mstep_shift(mom)
                if not cfg.estimate_output:
                    C, D = init.C, init.D
                shift = ShiftModel(Ad=Ad, Bd=Bd, C=C, D=D, Qd=Qd, delta=delta)
                incremental = shift_to_incremental(shift)
                snapshot: Union[ShiftModel, IncrementalModel] = shift
            else:
                Ain, Bin, C, D, Qin = mstep_delta(mom)
                if not cfg.estimate_output:
                    C, D = init.C, init.D
                incremental = IncrementalModel(
                    Ain=Ain, Bin=Bin, C=C, D=D, Qin=Qin, delta=delta
                )
                shift = incremental_to_shift(incremental)
                snapshot = incremental

            objective = surrogate_objective(
                mom, _floored(shift, cfg.qd_floor), output_var
            )
        except (NumericalError, LinAlgError) as err:
            raise IdentificationError(str(err), index, method) from err

        estimate = incremental_to_continuous(incremental, init.prior)
        current = invariant_parameters(estimate).to_vector()
        change = _relative_change(current, previous)
        previous = current

        seconds = time.perf_counter() - started
        history.iterations.append(
            EMIteration(
                index=index,
                model=snapshot,
                invariants=current,
                objective=objective,
                log_likelihood=loglik,
                seconds=seconds,
                change=change,
            )
        )
        _LOG.info(
            "%s iteration %d: invariants %s, objective %.6g, change %.3e, %.2f s",
            method,
            index,
            np.array2string(current, precision=4),
            objective,
            change,
            seconds,
        )

        if change <= cfg.rel_tol:
            history.converged = True
            break

    return estimate, history


def particle_em_identify(
    u: np.ndarray,
    observation: Observation,
    init: ContinuousModel,
    cfg: EMConfig,
    delta: float,
    output_var: float,
) -> Tuple[ContinuousModel, EMTrace]:
    """EM with the particle E-step over any observation model
    Parameters: The input, the data as an observation model, the initial
                model, the EM settings, the grid step, and the output
                variance the surrogate objective is evaluated with
       Returns: The continuous-time estimate and the iteration history
       Effects: Logs one line per iteration
         Notes: Raises IdentificationError naming the failed iteration
    """
    u = np.asarray(u, dtype=float).ravel()
    prior = validate(init).prior

    def estep(model: ShiftModel, index: int) -> Tuple[MomentSet, Optional[float]]:
        filtered = particle_filter(
            model,
            u,
            observation,
            prior,
            particles=cfg.particles,
            seed=(cfg.seed, index),
            ess_threshold=cfg.ess_threshold,
        )
        ensemble = particle_smoother(filtered, model, u)
        return estep_moments(ensemble, u, observation, model), None

    return _run_em("PS-EM", estep, init, cfg, delta, output_var)


def em_identify(
    u: np.ndarray,
    trace: QuantizedTrace,
    init: ContinuousModel,
    cfg: EMConfig,
) -> Tuple[ContinuousModel, EMTrace]:
    """PS-EM: identification from Lebesgue-sampled data
    Parameters: The input, the quantized trace, the initial model, and the
                EM settings
       Returns: The continuous-time estimate (the incremental-form matrices)
                and the iteration history
       Effects: Logs one line per iteration
         Notes: The filter conditions on the crossing-consistent bands of the
                trace. Raises IdentificationError naming the failed iteration.
    """
    cfg = cfg.resolved(trace.tau)
    eps = float(cfg.eps)  # type: ignore[arg-type]
    observation = IntervalObservation.from_trace(trace, eps)
    return particle_em_identify(u, observation, init, cfg, trace.delta, eps * eps)


def ks_em_identify(
    u: np.ndarray,
    y: np.ndarray,
    init: ContinuousModel,
    cfg: EMConfig,
    delta: float,
) -> Tuple[ContinuousModel, EMTrace]:
    """KS-EM: identification that treats the held output as a Gaussian
    measurement of variance cfg.baseline_r
    Parameters: The input, the held output, the initial model, the EM
                settings (baseline_r must be set), and the grid step
       Returns: The continuous-time estimate and the iteration history, which
                records the exact log-likelihood of every iterate
       Effects: Logs one line per iteration
    """
    if cfg.baseline_r is None:
        raise ValueError("KS-EM needs baseline_r; resolve the config against tau")
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    r = float(cfg.baseline_r)
    prior = validate(init).prior

    def estep(model: ShiftModel, _index: int) -> Tuple[MomentSet, Optional[float]]:
        smoothed = kalman_smoother(model, u, y, r, prior)
        return smoothing_moments(smoothed, u, y, delta), smoothed.log_likelihood

    return _run_em("KS-EM", estep, init, cfg, delta, r)

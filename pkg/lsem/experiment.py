"""experiment.py

By: Liam Strand
On: Summer 2023

Experiment configuration and the pieces of a Monte Carlo study: generating
data from a true model, perturbing it into an initial guess, running PS-EM and
KS-EM on the same data, and summarizing the invariant parameters they find.

Configuration is a single TOML or JSON file whose keys are the field names of
ExperimentConfig, with the EM settings under "em". Validation is done by
pydantic; callers get a pydantic ValidationError for a bad file.
"""
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from lsem.em import EMConfig, em_identify, ks_em_identify
from lsem.errors import LsemError, TraceError
from lsem.files import model_to_dict, read_model, read_table
from lsem.frequency import frequency_response, log_frequency_grid, magnitude_db
from lsem.model import ContinuousModel, InvariantParameters, invariant_parameters
from lsem.sampler import (
    EventRecord,
    QuantizedTrace,
    build_trace,
    lebesgue_sample,
    simulate_sde,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_LOG = logging.getLogger(__name__)

METHODS = ("PS-EM", "KS-EM")

# What a single Monte Carlo run may fail with without stopping the study
RUN_ERRORS = (LsemError, ValueError, ArithmeticError, OSError)


class ExperimentConfig(BaseModel):
    """Everything needed to reproduce a simulation or identification study"""

    model_config = ConfigDict(extra="forbid")

    model: Path
    init_model: Optional[Path] = None
    tau: float = Field(default=0.3, gt=0.0)
    delta: float = Field(default=0.01, gt=0.0)
    N: int = Field(default=2000, ge=2)
    sigma: float = Field(default=10.0, ge=0.0)
    input_csv: Optional[Path] = None
    em: EMConfig = Field(default_factory=EMConfig)
    runs: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    out: Path = Path("out")
    jobs: Optional[int] = Field(default=None, ge=1)
    init_spread: float = Field(default=0.5, ge=0.0, lt=1.0)
    omega_min: float = Field(default=1e-2, gt=0.0)
    omega_max: float = Field(default=1e2, gt=0.0)
    omega_points: int = Field(default=200, ge=2)
    compare_omega_min: float = Field(default=0.1, gt=0.0)
    compare_omega_max: float = Field(default=10.0, gt=0.0)
    band_db: float = Field(default=3.0, gt=0.0)

    @model_validator(mode="after")
    def _check_grids(self) -> "ExperimentConfig":
        if self.omega_min >= self.omega_max:
            raise ValueError("omega_min must be smaller than omega_max")
        if self.compare_omega_min >= self.compare_omega_max:
            raise ValueError("compare_omega_min must be smaller than compare_omega_max")
        return self

    def em_config(self, seed: Optional[int] = None) -> EMConfig:
        """EM settings with the tau-dependent defaults filled in"""
        em = self.em if seed is None else self.em.model_copy(update={"seed": seed})
        return em.resolved(self.tau)

    def omegas(self) -> np.ndarray:
        """The Bode frequency grid"""
        return log_frequency_grid(self.omega_min, self.omega_max, self.omega_points)

    def compare_omegas(self) -> np.ndarray:
        """The grid over which estimates are compared with the truth"""
        return log_frequency_grid(
            self.compare_omega_min, self.compare_omega_max, self.omega_points
        )


def read_config_file(path: Path) -> Dict[str, Any]:
    """Parses a TOML (.toml) or JSON file into a dict; paths inside it are
    taken relative to the file"""
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    else:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)

    for key in ("model", "init_model", "input_csv"):
        if key in data and not Path(data[key]).is_absolute():
            data[key] = str(path.parent / data[key])
    return data


def build_config(
    file_data: Optional[Mapping[str, Any]], overrides: Mapping[str, Any]
) -> ExperimentConfig:
    """Merges command line overrides (None means "not given") into the file
    values and validates the result"""
    data: Dict[str, Any] = dict(file_data or {})
    em = dict(data.get("em", {}))
    for key, value in overrides.items():
        if value is None:
            continue
        if key.startswith("em."):
            em[key[3:]] = value
        else:
            data[key] = value
    data["em"] = em
    return ExperimentConfig.model_validate(data)


#### #### #### DATA #### #### ####


def gaussian_input(N: int, sigma: float, seed) -> np.ndarray:
    """iid N(0, sigma^2) samples, held over each grid step"""
    return np.random.default_rng(seed).normal(0.0, sigma, N)


def read_input_csv(path: Path, N: int) -> np.ndarray:
    """The first column of a CSV file with a header row, truncated to N"""
    _, rows = read_table(path)
    u = np.array([float(row[0]) for row in rows])
    if u.size < N:
        raise TraceError(f"{path} has {u.size} input samples, {N} needed")
    return u[:N]


@dataclass(frozen=True)
class SimulatedData:
    """A simulated experiment"""

    u: np.ndarray
    states: np.ndarray
    z: np.ndarray
    events: EventRecord
    trace: QuantizedTrace


def simulate_data(
    cfg: ExperimentConfig, model: ContinuousModel, seed: int
) -> SimulatedData:
    """Draws an input (unless one is configured), simulates the model and
    passes the output through the Lebesgue sampler"""
    if cfg.input_csv is not None:
        u = read_input_csv(cfg.input_csv, cfg.N)
    else:
        u = gaussian_input(cfg.N, cfg.sigma, (seed, 1))
    states, z = simulate_sde(model, u, cfg.delta, (seed, 2))
    events = lebesgue_sample(z, cfg.tau, cfg.delta)
    trace = build_trace(events, cfg.N, cfg.delta)
    return SimulatedData(u=u, states=states, z=z, events=events, trace=trace)


def perturb_model(
    model: ContinuousModel, rng: np.random.Generator, spread: float
) -> ContinuousModel:
    """Scales A, B and Q by independent factors drawn uniformly from
    [1 - spread, 1 + spread], which moves the eigenvalues, C B and C Q C^T by
    those factors"""
    fa, fb, fq = 1.0 + spread * rng.uniform(-1.0, 1.0, 3)
    return ContinuousModel(
        A=model.A * fa,
        B=model.B * fb,
        C=model.C,
        D=model.D,
        Q=model.Q * fq,
        mu1=model.mu1,
        P1=model.P1,
    )


def max_db_error(truth: ContinuousModel, estimate: ContinuousModel, omegas) -> float:
    """Largest |20 log10 |G_est| - 20 log10 |G_true|| over the grid"""
    w_true, g_true = frequency_response(truth, omegas)
    w_est, g_est = frequency_response(estimate, omegas)
    common, i_true, i_est = np.intersect1d(w_true, w_est, return_indices=True)
    if common.size == 0:
        return float("inf")
    return float(
        np.max(np.abs(magnitude_db(g_est[i_est]) - magnitude_db(g_true[i_true])))
    )


#### #### #### MONTE CARLO #### #### ####


@dataclass
class RunResult:
    """One method's outcome on one Monte Carlo run"""

    run: int
    method: str
    seed: int
    status: str
    invariants: Optional[np.ndarray] = None
    iterations: int = 0
    converged: bool = False
    seconds: float = 0.0
    db_error: float = float("nan")
    estimate: Optional[Dict[str, Any]] = field(default=None)


def _identify(
    method: str,
    run: int,
    seed: int,
    data: SimulatedData,
    init: ContinuousModel,
    em_cfg: EMConfig,
    truth: ContinuousModel,
    omegas: np.ndarray,
) -> RunResult:
    """One method on one data set"""
    started = time.perf_counter()
    if method == "PS-EM":
        estimate, history = em_identify(data.u, data.trace, init, em_cfg)
    else:
        estimate, history = ks_em_identify(
            data.u, data.trace.y, init, em_cfg, data.trace.delta
        )
    return RunResult(
        run=run,
        method=method,
        seed=seed,
        status="ok",
        invariants=invariant_parameters(estimate).to_vector(),
        iterations=history.iteration_count,
        converged=history.converged,
        seconds=time.perf_counter() - started,
        db_error=max_db_error(truth, estimate, omegas),
        estimate=model_to_dict(estimate),
    )


def run_single(cfg: ExperimentConfig, run: int) -> List[RunResult]:
    """Monte Carlo run number `run`: both methods on the same data
    Parameters: The experiment configuration and the run index
       Returns: One result per method; failures, including failures to
                generate the data, are recorded as a status, not raised
       Effects: Logs progress and failures
    """
    seed = cfg.seed + run
    try:
        truth = read_model(cfg.model)
        data = simulate_data(cfg, truth, seed)
        if cfg.init_model is not None:
            init = read_model(cfg.init_model)
        else:
            rng = np.random.default_rng((seed, 3))
            init = perturb_model(truth, rng, cfg.init_spread)
        em_cfg = cfg.em_config(seed)
        omegas = cfg.compare_omegas()
    except RUN_ERRORS as err:
        _LOG.warning("run %d: could not prepare the data: %s", run, err)
        return [
            RunResult(run=run, method=method, seed=seed, status=f"failed: {err}")
            for method in METHODS
        ]

    results = []
    for method in METHODS:
        try:
            result = _identify(method, run, seed, data, init, em_cfg, truth, omegas)
        except RUN_ERRORS as err:
            _LOG.warning("run %d, %s failed: %s", run, method, err)
            results.append(
                RunResult(run=run, method=method, seed=seed, status=f"failed: {err}")
            )
            continue
        results.append(result)
        _LOG.info(
            "run %d, %s: %d iterations in %.1f s",
            run,
            method,
            result.iterations,
            result.seconds,
        )
    return results


def summarize(results: List[RunResult], n: int) -> List[List[Any]]:
    """Median and quartiles of every invariant parameter, per method
    Parameters: The run results, the model order
       Returns: Rows of (method, parameter, runs, median, q1, q3). Quartiles
                use linear interpolation between order statistics; the
                median of an even count is the mean of the middle two.
       Effects: None
    """
    labels = InvariantParameters.labels(n)
    rows = []
    for method in METHODS:
        ok = [r.invariants for r in results if r.method == method and r.status == "ok"]
        if not ok:
            continue
        values = np.array(ok)
        q1, median, q3 = np.percentile(
            values, [25.0, 50.0, 75.0], axis=0, method="linear"
        )
        for i, label in enumerate(labels):
            rows.append([method, label, len(ok), median[i], q1[i], q3[i]])
    return rows

"""commands.py

By: Liam Strand
On: Summer 2023

The handlers behind the lsem subcommands. Each takes a validated
ExperimentConfig, does its work, and writes its results under cfg.out.
Library errors are left to propagate; the driver in __main__ maps them to
exit codes.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from lsem.discretize import c2d_shift
from lsem.em import EMConfig, EMTrace, em_identify, ks_em_identify
from lsem.errors import NumericalError
from lsem.experiment import (
    METHODS,
    ExperimentConfig,
    RunResult,
    max_db_error,
    perturb_model,
    run_single,
    simulate_data,
    summarize,
)
from lsem.files import (
    read_model,
    read_trace_csv,
    write_em_trace,
    write_events_csv,
    write_json,
    write_model,
    write_smoothed_csv,
    write_table,
    write_trace_csv,
)
from lsem.frequency import bode_table
from lsem.kalman import kalman_smoother
from lsem.model import ContinuousModel, InvariantParameters
from lsem.observations import IntervalObservation
from lsem.particles import particle_filter, particle_smoother
from lsem.sampler import QuantizedTrace, containment_violations

_LOG = logging.getLogger(__name__)

RUNS_COLUMNS = [
    "run",
    "method",
    "seed",
    "status",
    "iterations",
    "converged",
    "seconds",
    "max_db_error",
]
SUMMARY_COLUMNS = ["method", "parameter", "runs", "median", "q1", "q3"]
BODE_COLUMNS = ["omega", "mag_db", "phase_deg"]
COMPARE_COLUMNS = ["estimate", "max_db_error", "within_band"]


def cmd_simulate(cfg: ExperimentConfig) -> List[Path]:
    """Simulates cfg.model and Lebesgue-samples its output
    Parameters: The experiment configuration
       Returns: The files written
       Effects: Writes trace.csv and events.csv under cfg.out; logs the event
                count and the number of containment violations
    """
    truth = read_model(cfg.model)
    data = simulate_data(cfg, truth, cfg.seed)

    violations = containment_violations(data.z, data.trace)
    _LOG.info("simulated %d steps, %d events", cfg.N, len(data.events))
    if violations:
        _LOG.warning("%d samples fall outside their censoring interval", violations)

    trace_path = cfg.out / "trace.csv"
    events_path = cfg.out / "events.csv"
    write_trace_csv(trace_path, data.u, data.z, data.trace)
    write_events_csv(events_path, data.events)
    return [trace_path, events_path]


def _initial_model(cfg: ExperimentConfig, init_path: Optional[Path]) -> ContinuousModel:
    if init_path is not None:
        return read_model(init_path)
    if cfg.init_model is not None:
        return read_model(cfg.init_model)
    _LOG.info("no initial model given, perturbing %s by %g", cfg.model, cfg.init_spread)
    rng = np.random.default_rng((cfg.seed, 3))
    return perturb_model(read_model(cfg.model), rng, cfg.init_spread)


def _smoothed_states(
    estimate: ContinuousModel,
    u: np.ndarray,
    trace: QuantizedTrace,
    em_cfg: EMConfig,
    method: str,
) -> Tuple[np.ndarray, np.ndarray]:
    assert em_cfg.eps is not None and em_cfg.baseline_r is not None
    shift = c2d_shift(estimate, trace.delta)
    if method == "ks":
        smoothed = kalman_smoother(shift, u, trace.y, em_cfg.baseline_r, estimate.prior)
        return smoothed.means, np.diagonal(smoothed.covs, axis1=1, axis2=2)

    observation = IntervalObservation.from_trace(trace, em_cfg.eps)
    filtered = particle_filter(
        shift,
        u,
        observation,
        estimate.prior,
        particles=em_cfg.particles,
        seed=(em_cfg.seed, 0),
        ess_threshold=em_cfg.ess_threshold,
    )
    ensemble = particle_smoother(filtered, shift, u)
    return ensemble.means(), ensemble.variances()


def cmd_identify(
    cfg: ExperimentConfig,
    trace_path: Path,
    init_path: Optional[Path] = None,
    method: str = "ps",
    smoothed: bool = False,
) -> List[Path]:
    """Identifies a model from a trace file
    Parameters: The experiment configuration, a trace CSV, an optional
                initial model (falls back to cfg.init_model, then to a
                perturbed cfg.model), the method ("ps" or "ks"), and whether
                to also smooth the states under the estimate
       Returns: The files written
       Effects: Writes estimate.json, em_trace.json and, if asked,
                smoothed.csv under cfg.out, and nothing at all if reading or
                identification fails. A smoothing failure is logged and
                leaves the estimate in place.
    """
    if method not in ("ps", "ks"):
        raise ValueError(f"unknown method {method!r}, expected 'ps' or 'ks'")

    u, _, trace = read_trace_csv(trace_path)
    init = _initial_model(cfg, init_path)
    em_cfg = cfg.em.resolved(trace.tau)

    history: EMTrace
    if method == "ps":
        estimate, history = em_identify(u, trace, init, em_cfg)
    else:
        estimate, history = ks_em_identify(u, trace.y, init, em_cfg, trace.delta)

    if not history.converged:
        _LOG.warning(
            "%s stopped after %d iterations without converging",
            history.method,
            history.iteration_count,
        )

    estimate_path = cfg.out / "estimate.json"
    trace_out = cfg.out / "em_trace.json"
    write_model(estimate_path, estimate)
    write_em_trace(trace_out, history)
    written = [estimate_path, trace_out]
    if not smoothed:
        return written

    try:
        states = _smoothed_states(estimate, u, trace, em_cfg, method)
    except NumericalError as err:
        _LOG.error("estimate written, but smoothing under it failed: %s", err)
        return written
    smoothed_path = cfg.out / "smoothed.csv"
    write_smoothed_csv(smoothed_path, *states)
    written.append(smoothed_path)
    return written


def _runs_row(result: RunResult, n: int) -> list:
    invariants = (
        result.invariants
        if result.invariants is not None
        else np.full(len(InvariantParameters.labels(n)), np.nan)
    )
    return [
        result.run,
        result.method,
        result.seed,
        result.status,
        result.iterations,
        result.converged,
        result.seconds,
        result.db_error,
        *invariants,
    ]


def _write_run(cfg: ExperimentConfig, results: List[RunResult], n: int) -> None:
    """Writes the estimates of the newest run and rewrites runs.csv with every
    run finished so far"""
    for result in results[-len(METHODS) :]:
        if result.estimate is not None:
            name = f"run{result.run:03d}_{result.method.split('-')[0].lower()}.json"
            write_json(cfg.out / "estimates" / name, result.estimate)
    write_table(
        cfg.out / "runs.csv",
        RUNS_COLUMNS + InvariantParameters.labels(n),
        (_runs_row(result, n) for result in sorted(results, key=_run_order)),
    )


def _run_order(result: RunResult) -> Tuple[int, int]:
    return result.run, METHODS.index(result.method)


def cmd_montecarlo(cfg: ExperimentConfig) -> List[RunResult]:
    """Paired Monte Carlo study of PS-EM against KS-EM
    Parameters: The experiment configuration; run r uses seed cfg.seed + r
       Returns: Every run's results, in run order
       Effects: Writes estimates/run<r>_<method>.json and rewrites runs.csv
                as each run finishes, then writes summary.csv, all under
                cfg.out. Runs go to a pool of cfg.jobs processes (default:
                one per core).
    """
    n = read_model(cfg.model).n
    jobs = min(cfg.jobs or os.cpu_count() or 1, cfg.runs)

    results: List[RunResult] = []
    if jobs == 1:
        for run in range(cfg.runs):
            results.extend(run_single(cfg, run))
            _write_run(cfg, results, n)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            pending = [pool.submit(run_single, cfg, run) for run in range(cfg.runs)]
            for done in as_completed(pending):
                results.extend(done.result())
                _write_run(cfg, results, n)
    results.sort(key=_run_order)

    failed = sum(result.status != "ok" for result in results)
    if failed:
        _LOG.warning("%d of %d identifications failed", failed, len(results))

    write_table(cfg.out / "summary.csv", SUMMARY_COLUMNS, summarize(results, n))
    return results


def cmd_bode(cfg: ExperimentConfig, models: Sequence[Path] = ()) -> List[Path]:
    """Writes the frequency response of each model (cfg.model if none given)
    to bode_<model file stem>.csv"""
    written = []
    for path in models or [cfg.model]:
        path = Path(path)
        rows = bode_table(read_model(path), cfg.omegas())
        out = cfg.out / f"bode_{path.stem}.csv"
        write_table(out, BODE_COLUMNS, rows)
        written.append(out)
    return written


def cmd_compare(
    cfg: ExperimentConfig, truth_path: Path, estimates: Sequence[Path]
) -> int:
    """Compares estimated frequency responses with the true one
    Parameters: The experiment configuration, the true model file, and the
                estimated model files
       Returns: How many estimates stay within cfg.band_db of the truth over
                [compare_omega_min, compare_omega_max]
       Effects: Writes compare.csv under cfg.out
    """
    truth = read_model(truth_path)
    omegas = cfg.compare_omegas()
    rows = []
    for path in estimates:
        error = max_db_error(truth, read_model(path), omegas)
        rows.append([str(path), error, error <= cfg.band_db])

    within = sum(row[2] for row in rows)
    _LOG.info("%d of %d estimates within %g dB", within, len(rows), cfg.band_db)
    write_table(cfg.out / "compare.csv", COMPARE_COLUMNS, rows)
    return within

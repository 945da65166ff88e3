import numpy as np
import pytest
from mock import patch
from pydantic import ValidationError

from lsem.discretize import c2d_shift, incremental_to_continuous, shift_to_incremental
from lsem.em import (
    EMConfig,
    EMTrace,
    em_identify,
    ks_em_identify,
    mstep_delta,
    mstep_shift,
    particle_em_identify,
    surrogate_objective,
)
from lsem.errors import (
    IdentificationError,
    InsufficientExcitationError,
    WeightCollapseError,
)
from lsem.model import (
    ContinuousModel,
    ShiftModel,
    invariant_parameters,
    similarity_transform,
    validate,
)
from lsem.moments import moments_from_trajectory
from lsem.observations import GaussianObservation
from lsem.sampler import build_trace, lebesgue_sample, simulate_sde

DELTA = 0.01


def _trajectory(model: ContinuousModel, N=400, seed=0, sigma=10.0):
    """States x_1..x_{N+1}, input and noiseless output of a simulation"""
    u = np.random.default_rng(seed).normal(0.0, sigma, N + 1)
    states, z = simulate_sde(model, u, DELTA, seed=seed + 1)
    return states, u[:N], z[:N]


def test_config_defaults_and_resolution():
    cfg = EMConfig()
    assert cfg.eps is None and cfg.baseline_r is None
    assert cfg.form == "incremental"
    resolved = cfg.resolved(0.3)
    assert resolved.eps == pytest.approx(3e-3)
    assert resolved.baseline_r == pytest.approx(0.03)
    assert cfg.eps is None

    explicit = EMConfig(eps=0.1, baseline_r=2.0).resolved(0.3)
    assert explicit.eps == 0.1 and explicit.baseline_r == 2.0


@pytest.mark.parametrize(
    "bad",
    [
        {"max_iters": 0},
        {"eps": 0.0},
        {"rel_tol": -1.0},
        {"particles": 1},
        {"form": "delta"},
        {"unknown": 1},
    ],
)
def test_config_rejects_invalid_settings(bad):
    with pytest.raises(ValidationError):
        EMConfig(**bad)


def test_mstep_recovers_noise_free_dynamics(first_order):
    noiseless = ContinuousModel(
        A=[[-1.0]], B=[[0.7]], C=[[1.0]], D=0.0, Q=[[0.0]], mu1=[0.3], P1=[[0.0]]
    )
    states, u, z = _trajectory(noiseless)
    mom = moments_from_trajectory(states, u, z, DELTA)
    Ad, Bd, C, D, Qd = mstep_shift(mom)

    shift = c2d_shift(first_order, DELTA)
    np.testing.assert_allclose(Ad, shift.Ad, rtol=1e-8)
    np.testing.assert_allclose(Bd, shift.Bd, rtol=1e-6)
    np.testing.assert_allclose(C, [[1.0]], rtol=1e-8)
    assert abs(D) < 1e-8
    assert Qd[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_mstep_is_least_squares(second_order):
    states, u, z = _trajectory(second_order, seed=3)
    mom = moments_from_trajectory(states, u, z, DELTA)
    Ad, Bd, _, _, Qd = mstep_shift(mom)

    regressors = np.column_stack([states[:-1], u])
    theta, *_ = np.linalg.lstsq(regressors, states[1:], rcond=None)
    residuals = states[1:] - regressors @ theta
    np.testing.assert_allclose(np.hstack([Ad, Bd]), theta.T, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(
        Qd, residuals.T @ residuals / u.size, rtol=1e-6, atol=1e-12
    )


def test_incremental_mstep_agrees_with_shift(second_order):
    states, u, z = _trajectory(second_order, seed=4)
    mom = moments_from_trajectory(states, u, z, DELTA)
    Ad, Bd, C, D, Qd = mstep_shift(mom)
    Ain, Bin, C_in, D_in, Qin = mstep_delta(mom)

    np.testing.assert_allclose(Ain, (Ad - np.eye(2)) / DELTA, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(Bin, Bd / DELTA, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(Qin, Qd / DELTA, rtol=1e-5, atol=1e-10)
    np.testing.assert_allclose(C_in, C, atol=1e-10)
    assert D_in == pytest.approx(D, abs=1e-12)


def test_mstep_forms_agree_on_random_moments():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(1, 4))
        delta = float(rng.uniform(0.01, 0.5))
        mom = moments_from_trajectory(
            rng.normal(size=(41, n)), rng.normal(size=40), rng.normal(size=40), delta
        )
        Ad, Bd, C, D, Qd = mstep_shift(mom)
        Ain, Bin, C_in, D_in, Qin = mstep_delta(mom)

        shift = np.hstack([Ad, Bd])
        converted = np.hstack([np.eye(n) + delta * Ain, delta * Bin])
        assert np.linalg.norm(converted - shift) <= 1e-10 * np.linalg.norm(shift)
        assert np.linalg.norm(delta * Qin - Qd) <= 1e-10 * np.linalg.norm(Qd)
        np.testing.assert_allclose(C_in, C, rtol=1e-10, atol=1e-12)
        assert D_in == pytest.approx(D, rel=1e-10, abs=1e-12)


def test_mstep_without_excitation_fails(first_order):
    states, _, z = _trajectory(first_order)
    mom = moments_from_trajectory(states, np.zeros(z.size), z, DELTA)
    with pytest.raises(InsufficientExcitationError):
        mstep_shift(mom)


def test_mstep_optimum_minimizes_the_surrogate(first_order):
    states, u, z = _trajectory(first_order, seed=5)
    mom = moments_from_trajectory(states, u, z, DELTA)
    Ad, Bd, C, D, Qd = mstep_shift(mom)
    best = ShiftModel(Ad=Ad, Bd=Bd, C=C, D=D, Qd=Qd, delta=DELTA)
    optimum = surrogate_objective(mom, best, 1e-4)

    for change in (
        {"Ad": Ad + 1e-3},
        {"Bd": Bd * 1.05},
        {"Qd": Qd * 1.2},
        {"Qd": Qd * 0.8},
        {"C": C * 1.01},
    ):
        fields = dict(Ad=Ad, Bd=Bd, C=C, D=D, Qd=Qd, delta=DELTA)
        fields.update(change)
        assert surrogate_objective(mom, ShiftModel(**fields), 1e-4) > optimum


def test_surrogate_of_singular_covariance_is_infinite():
    mom = moments_from_trajectory(
        np.array([[0.0], [1.0], [2.0]]), [1.0, 1.0], [0.0, 1.0], 1.0
    )
    model = ShiftModel(Ad=[[1.0]], Bd=[[1.0]], C=[[1.0]], D=0.0, Qd=[[0.0]], delta=1.0)
    assert surrogate_objective(mom, model, 1.0) == float("inf")


def _linear_gaussian_problem(seed):
    rng = np.random.default_rng(seed)
    n = 1 + seed % 2
    if n == 1:
        A = [[-rng.uniform(0.5, 2.0)]]
        B = [[rng.uniform(0.3, 1.5)]]
        C = [[1.0]]
        Q = [[rng.uniform(0.1, 1.0)]]
    else:
        A = [[0.0, 1.0], [-rng.uniform(1.0, 4.0), -rng.uniform(0.5, 2.0)]]
        B = [[0.0], [rng.uniform(0.5, 1.5)]]
        C = [[1.0, 0.0]]
        Q = np.diag(rng.uniform(0.05, 0.5, 2))
    truth = ContinuousModel(
        A=A, B=B, C=C, D=0.0, Q=Q, mu1=np.zeros(n), P1=np.zeros((n, n))
    )
    init = ContinuousModel(
        A=np.asarray(A) * 1.4, B=np.asarray(B) * 0.7, C=C, D=0.0, Q=np.asarray(Q) * 2.0,
        mu1=np.zeros(n), P1=np.zeros((n, n)),
    )
    N = 300
    u = rng.normal(0.0, 3.0, N)
    _, z = simulate_sde(truth, u, 0.05, seed=seed + 100)
    r = 0.05
    y = z + np.sqrt(r) * rng.standard_normal(N)
    return u, y, init, r


@pytest.mark.parametrize("seed", range(10))
def test_ks_em_likelihood_never_decreases(seed):
    u, y, init, r = _linear_gaussian_problem(seed)
    cfg = EMConfig(max_iters=8, rel_tol=1e-12, baseline_r=r, form="shift")
    _, history = ks_em_identify(u, y, init, cfg, 0.05)

    loglik = history.log_likelihoods
    assert loglik.size == 8
    assert np.all(np.isfinite(history.objectives))
    steps = np.diff(loglik)
    assert np.all(steps >= -1e-8 * np.abs(loglik[1:])), steps


def test_ks_em_forms_agree():
    u, y, init, r = _linear_gaussian_problem(0)
    common = {"max_iters": 3, "rel_tol": 1e-12, "baseline_r": r}
    shift_estimate, _ = ks_em_identify(
        u, y, init, EMConfig(form="shift", **common), 0.05
    )
    incremental_estimate, _ = ks_em_identify(
        u, y, init, EMConfig(form="incremental", **common), 0.05
    )
    np.testing.assert_allclose(shift_estimate.A, incremental_estimate.A, rtol=1e-6)
    np.testing.assert_allclose(shift_estimate.Q, incremental_estimate.Q, rtol=1e-5)


def test_ks_em_needs_a_measurement_variance(first_order):
    with pytest.raises(ValueError, match="baseline_r"):
        ks_em_identify(np.zeros(10), np.zeros(10), first_order, EMConfig(), DELTA)


def _lebesgue_problem(model, N=150, seed=0):
    u = np.random.default_rng(seed).normal(0.0, 10.0, N)
    _, z = simulate_sde(model, u, DELTA, seed=seed + 1)
    trace = build_trace(lebesgue_sample(z, 0.3, DELTA), N, DELTA)
    return u, trace


def test_ps_em_runs_and_is_reproducible(first_order):
    u, trace = _lebesgue_problem(first_order)
    cfg = EMConfig(max_iters=3, rel_tol=1e-12, particles=60, seed=7)
    estimate, history = em_identify(u, trace, first_order, cfg)
    again, _ = em_identify(u, trace, first_order, cfg)

    assert isinstance(history, EMTrace)
    assert history.method == "PS-EM"
    assert history.iteration_count == 3
    assert not history.converged
    assert np.all(np.isfinite(history.objectives))
    assert np.all(np.isnan(history.log_likelihoods))
    validate(estimate)
    np.testing.assert_array_equal(estimate.A, again.A)
    np.testing.assert_array_equal(estimate.Q, again.Q)
    np.testing.assert_array_equal(estimate.C, first_order.C)


def test_loose_tolerance_converges_immediately(first_order):
    u, trace = _lebesgue_problem(first_order, N=100)
    cfg = EMConfig(max_iters=10, rel_tol=10.0, particles=30)
    _, history = em_identify(u, trace, first_order, cfg)
    assert history.converged
    assert history.iteration_count == 1


def test_estep_failure_names_the_iteration(first_order):
    u, trace = _lebesgue_problem(first_order, N=50)
    cfg = EMConfig(max_iters=5, particles=20)
    with patch("lsem.em.particle_filter", side_effect=WeightCollapseError("collapsed")):
        with pytest.raises(IdentificationError) as info:
            em_identify(u, trace, first_order, cfg)
    assert info.value.iteration == 1
    assert info.value.method == "PS-EM"
    assert "collapsed" in str(info.value)


def test_trace_serializes(first_order):
    u, trace = _lebesgue_problem(first_order, N=60)
    _, history = em_identify(
        u, trace, first_order, EMConfig(max_iters=2, rel_tol=1e-12, particles=20)
    )
    data = history.to_dict()
    assert data["method"] == "PS-EM"
    assert data["form"] == "incremental"
    assert data["iterations"] == 2
    assert [entry["iteration"] for entry in data["history"]] == [1, 2]
    assert len(data["history"][0]["invariants"]) == 5


@pytest.mark.parametrize("seed", range(3))
def test_mstep_beats_a_grid_around_it(seed):
    rng = np.random.default_rng(seed)
    mom = moments_from_trajectory(
        rng.normal(size=(41, 1)), rng.normal(size=40), rng.normal(size=40), 0.1
    )
    Ad, Bd, C, D, Qd = mstep_shift(mom)

    def objective(a, b):
        model = ShiftModel(Ad=[[a]], Bd=[[b]], C=C, D=D, Qd=Qd, delta=0.1)
        return surrogate_objective(mom, model, 1.0)

    offsets = np.linspace(-0.2, 0.2, 101)
    values = np.array(
        [[objective(Ad[0, 0] + da, Bd[0, 0] + db) for db in offsets] for da in offsets]
    )
    best = objective(Ad[0, 0], Bd[0, 0])
    assert best <= values.min() + 1e-12 * abs(best)
    assert np.unravel_index(np.argmin(values), values.shape) == (50, 50)


def test_noiseless_data_at_the_truth_is_a_fixed_point():
    truth = ContinuousModel(
        A=[[-1.0]], B=[[0.7]], C=[[1.0]], D=0.0, Q=[[0.0]], mu1=[0.0], P1=[[0.0]]
    )
    u = np.random.default_rng(2).normal(0.0, 10.0, 300)
    _, z = simulate_sde(truth, u, DELTA, seed=3)
    trace = build_trace(lebesgue_sample(z, 0.3, DELTA), u.size, DELTA)

    _, history = em_identify(
        u, trace, truth, EMConfig(max_iters=1, particles=50, seed=1)
    )

    read_back = incremental_to_continuous(
        shift_to_incremental(c2d_shift(truth, DELTA)), truth.prior
    )
    expected = invariant_parameters(read_back).to_vector()
    np.testing.assert_allclose(
        history.iterations[0].invariants, expected, rtol=1e-6, atol=1e-9
    )


def test_ks_em_reports_the_same_invariants_in_any_basis():
    u, y, init, r = _linear_gaussian_problem(1)
    T = np.array([[2.0, 0.5], [-0.3, 1.0]])
    cfg = EMConfig(max_iters=4, rel_tol=1e-12, baseline_r=r)
    _, history = ks_em_identify(u, y, init, cfg, 0.05)
    _, transformed = ks_em_identify(u, y, similarity_transform(init, T), cfg, 0.05)

    assert transformed.iteration_count == history.iteration_count == 4
    for ours, theirs in zip(history.iterations, transformed.iterations):
        np.testing.assert_allclose(
            theirs.invariants, ours.invariants, rtol=1e-6, atol=1e-9
        )
    np.testing.assert_allclose(
        transformed.log_likelihoods, history.log_likelihoods, rtol=1e-8
    )


def test_particle_em_agrees_with_kalman_em_on_uncensored_data():
    u, y, init, r = _linear_gaussian_problem(0)
    common = {"max_iters": 2, "rel_tol": 1e-12, "baseline_r": r, "form": "shift"}
    exact, _ = ks_em_identify(u, y, init, EMConfig(**common), 0.05)

    runs = []
    for seed in range(6):
        cfg = EMConfig(particles=300, seed=seed, **common)
        estimate, _ = particle_em_identify(
            u, GaussianObservation(y, r), init, cfg, 0.05, r
        )
        runs.append(invariant_parameters(estimate).to_vector())
    runs = np.array(runs)

    expected = invariant_parameters(exact).to_vector()
    standard_error = runs.std(axis=0, ddof=1)
    error = np.abs(runs.mean(axis=0) - expected)
    assert np.all(error <= 3.0 * standard_error + 1e-9), (error, standard_error)

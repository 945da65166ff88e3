import numpy as np
import pytest

from lsem.discretize import (
    c2d_shift,
    discrete_noise_quadrature,
    incremental_to_continuous,
    incremental_to_shift,
    matrix_exponential,
    shift_to_incremental,
)
from lsem.errors import ModelError
from lsem.model import ContinuousModel, ShiftModel, StatePrior


def test_matrix_exponential_examples():
    np.testing.assert_allclose(matrix_exponential(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(matrix_exponential([[-0.01]]), [[0.99004983]], rtol=1e-8)
    np.testing.assert_allclose(
        matrix_exponential([[0.0, 1.0], [0.0, 0.0]]),
        [[1.0, 1.0], [0.0, 1.0]],
        atol=1e-15,
    )


def test_matrix_exponential_rejects_nan():
    with pytest.raises(ModelError):
        matrix_exponential([[np.nan]])


def test_c2d_first_order(first_order):
    shift = c2d_shift(first_order, 0.01)
    a, b, q, delta = -1.0, 0.7, 0.5, 0.01
    assert shift.Ad[0, 0] == pytest.approx(np.exp(a * delta), rel=1e-13)
    assert shift.Bd[0, 0] == pytest.approx(b * (np.exp(a * delta) - 1.0) / a, rel=1e-12)
    assert shift.Qd[0, 0] == pytest.approx(
        q * (np.exp(2 * a * delta) - 1.0) / (2 * a), rel=1e-12
    )
    assert shift.Bd[0, 0] == pytest.approx(0.00696512, abs=1e-8)
    assert shift.Qd[0, 0] == pytest.approx(0.00495033, abs=1e-8)


def test_c2d_integrator():
    model = ContinuousModel(
        A=[[0.0]], B=[[1.0]], C=[[1.0]], D=0.0, Q=[[1.0]], mu1=[0.0], P1=[[0.0]]
    )
    shift = c2d_shift(model, 0.5)
    np.testing.assert_allclose(shift.Ad, [[1.0]])
    np.testing.assert_allclose(shift.Bd, [[0.5]])
    np.testing.assert_allclose(shift.Qd, [[0.5]])


def test_c2d_double_integrator():
    delta = 0.2
    model = ContinuousModel(
        A=[[0.0, 1.0], [0.0, 0.0]],
        B=[[0.0], [1.0]],
        C=[[1.0, 0.0]],
        D=0.0,
        Q=np.diag([0.0, 1.0]),
        mu1=[0.0, 0.0],
        P1=np.zeros((2, 2)),
    )
    shift = c2d_shift(model, delta)
    np.testing.assert_allclose(shift.Ad, [[1.0, delta], [0.0, 1.0]], atol=1e-15)
    np.testing.assert_allclose(shift.Bd, [[delta**2 / 2], [delta]], atol=1e-15)
    np.testing.assert_allclose(
        shift.Qd,
        [[delta**3 / 3, delta**2 / 2], [delta**2 / 2, delta]],
        rtol=1e-12,
        atol=1e-16,
    )


def _random_stable_model(rng, n):
    A = rng.normal(0.0, 1.0, (n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.1, 1.0)) * np.eye(n)
    L = rng.normal(0.0, 1.0, (n, n))
    return ContinuousModel(
        A=A,
        B=rng.normal(0.0, 1.0, (n, 1)),
        C=rng.normal(0.0, 1.0, (1, n)),
        D=0.0,
        Q=L @ L.T + 0.1 * np.eye(n),
        mu1=np.zeros(n),
        P1=np.zeros((n, n)),
    )


@pytest.mark.parametrize("seed", range(10))
def test_noise_covariance_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    model = _random_stable_model(rng, 1 + seed % 3)
    delta = rng.uniform(0.01, 0.5)
    shift = c2d_shift(model, delta)
    oracle = discrete_noise_quadrature(model.A, model.Q, delta)
    assert np.linalg.norm(shift.Qd - oracle) <= 1e-10 * np.linalg.norm(oracle)
    np.testing.assert_array_equal(shift.Qd, shift.Qd.T)
    assert np.linalg.eigvalsh(shift.Qd).min() >= 0.0


def test_c2d_rejects_non_positive_step(first_order):
    with pytest.raises(ModelError):
        c2d_shift(first_order, 0.0)
    with pytest.raises(ModelError):
        c2d_shift(first_order, -0.01)


def test_shift_to_incremental_examples(first_order):
    incremental = shift_to_incremental(c2d_shift(first_order, 0.01))
    assert incremental.Ain[0, 0] == pytest.approx(-0.995017, abs=1e-6)
    assert incremental.Qin[0, 0] == pytest.approx(0.495033, abs=1e-6)

    static = ShiftModel(
        Ad=np.eye(2),
        Bd=np.zeros((2, 1)),
        C=[[1.0, 0.0]],
        D=0.0,
        Qd=np.eye(2),
        delta=0.1,
    )
    incremental = shift_to_incremental(static)
    np.testing.assert_array_equal(incremental.Ain, np.zeros((2, 2)))
    np.testing.assert_array_equal(incremental.Bin, np.zeros((2, 1)))


def test_incremental_round_trip(second_order):
    shift = c2d_shift(second_order, 0.01)
    back = incremental_to_shift(shift_to_incremental(shift))
    np.testing.assert_allclose(back.Ad, shift.Ad, atol=1e-14)
    np.testing.assert_allclose(back.Bd, shift.Bd, atol=1e-14)
    np.testing.assert_allclose(back.Qd, shift.Qd, atol=1e-14)


@pytest.mark.parametrize("name", ["first_order", "second_order"])
def test_incremental_form_tends_to_continuous(name, request):
    model = request.getfixturevalue(name)
    errors = []
    for delta in (1e-1, 1e-2, 1e-3):
        estimate = incremental_to_continuous(
            shift_to_incremental(c2d_shift(model, delta)), model.prior
        )
        errors.append(
            (
                np.linalg.norm(estimate.A - model.A),
                np.linalg.norm(estimate.Q - model.Q),
            )
        )
    errors = np.array(errors)
    ratios = errors[:-1] / errors[1:]
    assert np.all(ratios >= 8.0) and np.all(ratios <= 12.0), ratios


def test_incremental_to_continuous_attaches_prior(first_order):
    incremental = shift_to_incremental(c2d_shift(first_order, 0.01))
    model = incremental_to_continuous(incremental, StatePrior([1.5], [[0.2]]))
    np.testing.assert_array_equal(model.mu1, [1.5])
    np.testing.assert_array_equal(model.P1, [[0.2]])
    np.testing.assert_array_equal(model.A, incremental.Ain)

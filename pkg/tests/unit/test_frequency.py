import logging

import numpy as np
import pytest

from lsem.frequency import (
    bode_table,
    frequency_response,
    log_frequency_grid,
    magnitude_db,
)
from lsem.model import ContinuousModel


def test_first_order_gain(first_order):
    kept, gains = frequency_response(first_order, [0.0, 1.0])
    np.testing.assert_array_equal(kept, [0.0, 1.0])
    assert gains[0] == pytest.approx(0.7)
    assert magnitude_db(gains[:1])[0] == pytest.approx(-3.098, abs=1e-3)
    assert abs(gains[1]) == pytest.approx(0.7 / np.sqrt(2.0))
    assert np.degrees(np.angle(gains[1])) == pytest.approx(-45.0)


def test_feedthrough_only_model_is_flat():
    model = ContinuousModel(
        A=[[-3.0]], B=[[0.0]], C=[[1.0]], D=2.0, Q=[[0.0]], mu1=[0.0], P1=[[0.0]]
    )
    _, gains = frequency_response(model, log_frequency_grid(0.01, 100.0, 20))
    np.testing.assert_allclose(gains, 2.0)


def test_singular_resolvent_is_skipped(caplog):
    integrator = ContinuousModel(
        A=[[0.0]], B=[[1.0]], C=[[1.0]], D=0.0, Q=[[0.0]], mu1=[0.0], P1=[[0.0]]
    )
    with caplog.at_level(logging.WARNING, logger="lsem.frequency"):
        kept, gains = frequency_response(integrator, [0.0, 2.0])
    np.testing.assert_array_equal(kept, [2.0])
    assert gains[0] == pytest.approx(-0.5j)
    assert "omega = 0" in caplog.text


def test_grid_endpoints():
    grid = log_frequency_grid(0.01, 100.0, 200)
    assert grid.size == 200
    assert grid[0] == pytest.approx(0.01)
    assert grid[-1] == pytest.approx(100.0)
    assert np.all(np.diff(np.log10(grid)) > 0.0)


def test_bode_table_columns(second_order):
    omegas = log_frequency_grid(0.1, 10.0, 50)
    table = bode_table(second_order, omegas)
    assert table.shape == (50, 3)
    np.testing.assert_allclose(table[:, 0], omegas)
    # 1 / (s^2 + 0.8 s + 2) starts at 1/2 and ends two poles down
    assert table[0, 1] == pytest.approx(20.0 * np.log10(0.5), abs=0.1)
    assert table[0, 2] == pytest.approx(0.0, abs=3.0)
    assert table[-1, 2] == pytest.approx(-180.0, abs=10.0)
    assert np.all(np.diff(table[:, 2]) <= 1e-9)

import json

import numpy as np
import pytest

from lsem.model import ContinuousModel

FIRST_ORDER = {
    "A": [[-1.0]],
    "B": [[0.7]],
    "C": [[1.0]],
    "D": 0.0,
    "Q": [[0.5]],
    "mu1": [0.0],
    "P1": [[0.0]],
}


@pytest.fixture
def first_order() -> ContinuousModel:
    """dx = (-x + 0.7u) dt + dw, E{dw^2} = 0.5 dt, z = x"""
    return ContinuousModel(**FIRST_ORDER)


@pytest.fixture
def second_order() -> ContinuousModel:
    """A lightly damped oscillator with a correlated noise input"""
    return ContinuousModel(
        A=[[0.0, 1.0], [-2.0, -0.8]],
        B=[[0.0], [1.0]],
        C=[[1.0, 0.0]],
        D=0.0,
        Q=[[0.05, 0.01], [0.01, 0.2]],
        mu1=[0.0, 0.0],
        P1=np.zeros((2, 2)),
    )


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "first_order.json"
    path.write_text(json.dumps(FIRST_ORDER), encoding="utf-8")
    return path

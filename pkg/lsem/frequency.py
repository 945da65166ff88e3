"""frequency.py

By: Andrew Powers and Liam Strand
On: Summer 2023

Frequency responses G(jw) = C (jwI - A)^-1 B + D of continuous-time models,
and the Bode table the command line writes out.
"""
import logging
from typing import List, Tuple

import numpy as np

from lsem.model import ContinuousModel

_LOG = logging.getLogger(__name__)

# Resolvents worse conditioned than this are treated as singular
_MAX_RESOLVENT_CONDITION = 1e12


def log_frequency_grid(omega_min: float, omega_max: float, points: int) -> np.ndarray:
    """points log-spaced frequencies between omega_min and omega_max (rad/s)"""
    return np.logspace(np.log10(omega_min), np.log10(omega_max), points)


def frequency_response(model: ContinuousModel, omegas) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluates the transfer function on the imaginary axis
    Parameters: A continuous model and a sequence of frequencies in rad/s
       Returns: The frequencies where the resolvent exists and the complex
                gains there
       Effects: Logs a warning for every frequency that had to be skipped
    """
    omegas = np.asarray(omegas, dtype=float).ravel()
    n = model.n
    B = model.B[:, 0].astype(complex)
    C = model.C[0]

    kept: List[float] = []
    gains: List[complex] = []
    for omega in omegas:
        resolvent = 1j * omega * np.eye(n) - model.A
        if np.linalg.cond(resolvent) > _MAX_RESOLVENT_CONDITION:
            _LOG.warning("resolvent is singular at omega = %g rad/s, skipping", omega)
            continue
        gains.append(complex(C @ np.linalg.solve(resolvent, B)) + model.D)
        kept.append(float(omega))

    return np.array(kept), np.array(gains, dtype=complex)


def magnitude_db(gains: np.ndarray) -> np.ndarray:
    """20 log10 |G|"""
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(np.abs(gains))


def bode_table(model: ContinuousModel, omegas) -> np.ndarray:
    """Rows of (omega, magnitude in dB, unwrapped phase in degrees)"""
    kept, gains = frequency_response(model, omegas)
    phase = np.degrees(np.unwrap(np.angle(gains))) if gains.size else gains.real
    return np.column_stack([kept, magnitude_db(gains), phase])

"""sampler.py

By: Liam Strand
On: Summer 2023

Simulates the continuous-time system on the fast grid and passes its output
through a send-on-delta sampler with hysteresis: a new sample is sent when the
output has moved more than tau away from the last sent value, and the value
sent is the threshold that was crossed.

Everything here works in "level space", the output divided by tau. A sent value
is always an integer level times tau, so consecutive sent values differ by
exactly one level no matter how the floating point products round.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from lsem.discretize import c2d_shift
from lsem.errors import TraceError
from lsem.model import ContinuousModel, psd_sqrt

# Slack for the inclusive crossing test, so that a held value level * tau
# counts as reaching its own level.
_LEVEL_SLACK = 1e-9

# Largest distance (in grid steps) an event time may sit from the grid
_GRID_TOL = 1e-6


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EventRecord:
    """The samples sent by the Lebesgue sampler"""

    times: np.ndarray
    levels: np.ndarray
    initial_level: int
    tau: float

    def __post_init__(self):
        times = _readonly(np.asarray(self.times, dtype=float).ravel())
        levels = _readonly(np.asarray(self.levels, dtype=np.int64).ravel())
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "initial_level", int(self.initial_level))
        object.__setattr__(self, "tau", float(self.tau))

        if times.size != levels.size:
            raise TraceError("event times and levels differ in length")
        if np.any(np.diff(times) <= 0.0):
            raise TraceError("event times must be strictly increasing")
        steps = np.diff(np.concatenate([[self.initial_level], levels]))
        if np.any(np.abs(steps) != 1):
            raise TraceError("consecutive events must be exactly one threshold apart")

    @property
    def values(self) -> np.ndarray:
        """The sent sample values y(t_l)"""
        return self.levels * self.tau

    @property
    def initial_value(self) -> float:
        """The floor-quantized output at the first grid instant"""
        return self.initial_level * self.tau

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class QuantizedTrace:
    """Held output and the band [a_k, b_k] the noiseless output is known to
    occupy at every grid step"""

    y: np.ndarray
    a: np.ndarray
    b: np.ndarray
    event_flag: np.ndarray
    delta: float
    tau: float

    def __post_init__(self):
        for name in ("y", "a", "b"):
            object.__setattr__(
                self, name, _readonly(np.asarray(getattr(self, name), dtype=float))
            )
        object.__setattr__(
            self, "event_flag", _readonly(np.asarray(self.event_flag, dtype=bool))
        )
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "tau", float(self.tau))

        sizes = {self.y.size, self.a.size, self.b.size, self.event_flag.size}
        if len(sizes) != 1:
            raise TraceError("trace columns differ in length")
        if np.any(self.a >= self.b):
            raise TraceError("every censoring interval needs a < b")

    @property
    def N(self) -> int:
        """Number of grid steps"""
        return self.y.size

    @property
    def times(self) -> np.ndarray:
        """Grid instants k * delta"""
        return np.arange(self.N) * self.delta

    def event_directions(self) -> np.ndarray:
        """+1 at upward events, -1 at downward events, 0 elsewhere"""
        directions = np.zeros(self.N, dtype=np.int64)
        flagged = np.flatnonzero(self.event_flag)
        flagged = flagged[flagged > 0]
        directions[flagged] = np.sign(self.y[flagged] - self.y[flagged - 1])
        return directions

    def crossing_bands(self) -> Tuple[np.ndarray, np.ndarray]:
        """The band the noiseless output occupies given the sampler's history
        Parameters: None
           Returns: Lower and upper bounds per grid step. Without an event the
                    output has not left [y - tau, y + tau], and that includes
                    the steps before the first event. An upward event puts it
                    in [y, y + tau] and a downward one in [y - tau, y].
           Effects: None
             Notes: a and b keep the floor band before the first event and the
                    full band at events; these bounds are what the particle
                    filter conditions on.
        """
        lower = self.y - self.tau
        upper = self.y + self.tau
        directions = self.event_directions()
        up = directions > 0
        down = directions < 0
        lower[up] = self.y[up]
        upper[down] = self.y[down]
        return lower, upper


def simulate_sde(
    model: ContinuousModel, u: np.ndarray, delta: float, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Simulates the continuous model exactly at the grid instants
    Parameters: A valid model, a zero-order-hold input sequence, the grid step,
                and a seed
       Returns: The N x n state sequence and the noiseless output z
       Effects: None
         Notes: Raises FactorizationError if the discretized noise covariance
                cannot be factored.
    """
    u = np.asarray(u, dtype=float).ravel()
    shift = c2d_shift(model, delta)
    rng = np.random.default_rng(seed)

    n = model.n
    N = u.size
    noise_factor = psd_sqrt(shift.Qd)
    initial_factor = psd_sqrt(model.P1)

    states = np.empty((N, n))
    x = model.mu1 + initial_factor @ rng.standard_normal(n)
    noise = rng.standard_normal((N, n)) @ noise_factor.T
    Bd = shift.Bd[:, 0]
    for k in range(N):
        states[k] = x
        x = shift.Ad @ x + Bd * u[k] + noise[k]

    z = states @ model.C[0] + model.D * u
    return states, z


def lebesgue_sample(
    z: np.ndarray, tau: float, delta: float, inclusive: bool = False
) -> EventRecord:
    """Runs the send-on-delta sampler over a grid signal
    Parameters: The grid signal, the threshold tau, the grid step, and whether
                landing exactly on a threshold counts as crossing it
       Returns: The sent events
       Effects: None
    """
    if not tau > 0.0:
        raise TraceError(f"threshold tau must be positive, got {tau}")
    s = np.asarray(z, dtype=float).ravel() / tau
    if s.size == 0:
        raise TraceError("cannot sample an empty signal")

    # the floor level is exact unless landing on a threshold counts
    last = int(np.floor(s[0] + (_LEVEL_SLACK if inclusive else 0.0)))
    initial = last

    times = []
    levels = []
    for k in range(1, s.size):
        if inclusive:
            up = s[k] >= last + 1 - _LEVEL_SLACK
            down = s[k] <= last - 1 + _LEVEL_SLACK
        else:
            up = s[k] > last + 1
            down = s[k] < last - 1

        if up:
            last += 1
        elif down:
            last -= 1
        else:
            continue
        times.append(k * delta)
        levels.append(last)

    return EventRecord(times=times, levels=levels, initial_level=initial, tau=tau)


def event_indices(events: EventRecord, delta: float) -> np.ndarray:
    """Grid indices of the event times. Raises TraceError for off-grid times."""
    position = events.times / delta
    indices = np.rint(position).astype(np.int64)
    if np.any(np.abs(position - indices) > _GRID_TOL):
        raise TraceError("event time does not lie on the sampling grid")
    return indices


def build_trace(events: EventRecord, N: int, delta: float) -> QuantizedTrace:
    """Turns the sent events into a held output and censoring bands
    Parameters: The events, the grid length, and the grid step
       Returns: The quantized trace: before the first event the floor band
                [y0, y0 + tau], afterwards the hysteresis band [y - tau, y + tau]
       Effects: None
    """
    tau = events.tau
    indices = event_indices(events, delta)
    if indices.size and (indices[0] < 0 or indices[-1] >= N):
        raise TraceError(f"event index outside the grid of length {N}")

    # position of the last event at or before each step, -1 before the first
    last_event = np.searchsorted(indices, np.arange(N), side="right") - 1
    held = np.concatenate([[events.initial_value], events.values])
    y = held[last_event + 1]

    before = last_event < 0
    a = np.where(before, events.initial_value, y - tau)
    b = np.where(before, events.initial_value + tau, y + tau)
    flags = np.zeros(N, dtype=bool)
    flags[indices] = True

    return QuantizedTrace(y=y, a=a, b=b, event_flag=flags, delta=delta, tau=tau)


def containment_violations(z: np.ndarray, trace: QuantizedTrace) -> int:
    """Number of grid steps where the noiseless output leaves the band the
    filter conditions on (see QuantizedTrace.crossing_bands)"""
    z = np.asarray(z, dtype=float).ravel()
    lower, upper = trace.crossing_bands()
    return int(np.count_nonzero((z < lower) | (z > upper)))

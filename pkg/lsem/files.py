"""files.py

By: Liam Strand
On: Summer 2023

Reading and writing the files lsem exchanges with its users: JSON model files,
CSV trace and event files, EM histories and result tables. Every file is
written to a temporary sibling first and renamed into place, so a failed run
never leaves a half-written output behind.

CSV conventions: comma separated, '.' decimal point, one header row, LF line
endings, floats in shortest round-trip form.
"""
import contextlib
import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from lsem.em import EMTrace
from lsem.errors import TraceError
from lsem.model import ContinuousModel
from lsem.sampler import EventRecord, QuantizedTrace

PathLike = Union[str, "os.PathLike[str]"]

TRACE_COLUMNS = ["k", "t", "u", "z", "y", "a", "b", "event"]
EVENT_COLUMNS = ["l", "t_l", "y_l"]
MODEL_KEYS = ("A", "B", "C", "D", "Q", "mu1", "P1")


@contextlib.contextmanager
def atomic_writer(path: PathLike) -> Iterator[TextIO]:
    """Opens a temporary file next to path and renames it onto path on success
    Parameters: The destination path
       Returns: A text handle (LF newlines) to write to
       Effects: Creates parent directories; replaces path only if the block
                completes without raising
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(
        dir=target.parent, prefix=f".{target.name}.", suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as handle:
            yield handle
        os.replace(tmp, target)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path: PathLike, header: Sequence[str], rows) -> None:
    """Writes a CSV table with a header row"""
    with atomic_writer(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])


def read_table(path: PathLike) -> Tuple[List[str], List[List[str]]]:
    """Reads a CSV table; returns the header and the rows as strings"""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        return header, [row for row in reader if row]


#### #### #### MODELS #### #### ####


def model_to_dict(model: ContinuousModel) -> Dict[str, Any]:
    """The JSON model file representation of a continuous model"""
    return {
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "D": model.D,
        "Q": model.Q.tolist(),
        "mu1": model.mu1.tolist(),
        "P1": model.P1.tolist(),
    }


def model_from_dict(data: Dict[str, Any]) -> ContinuousModel:
    """Builds a continuous model from its JSON representation. mu1 and P1
    default to a state known to start at zero."""
    missing = [key for key in ("A", "B", "C", "Q") if key not in data]
    if missing:
        raise KeyError(f"model file is missing {', '.join(missing)}")
    n = np.atleast_2d(np.asarray(data["A"], dtype=float)).shape[0]
    return ContinuousModel(
        A=data["A"],
        B=data["B"],
        C=data["C"],
        D=data.get("D", 0.0),
        Q=data["Q"],
        mu1=data.get("mu1", np.zeros(n)),
        P1=data.get("P1", np.zeros((n, n))),
    )


def read_model(path: PathLike) -> ContinuousModel:
    """Loads a JSON model file"""
    with open(path, encoding="utf-8") as handle:
        return model_from_dict(json.load(handle))


def write_json(path: PathLike, data: Any) -> None:
    """Writes indented JSON atomically"""
    with atomic_writer(path) as handle:
        json.dump(data, handle, indent=2)
        handle.write("\n")


def write_model(path: PathLike, model: ContinuousModel) -> None:
    """Saves a continuous model as a JSON model file"""
    write_json(path, model_to_dict(model))


def write_em_trace(path: PathLike, history: EMTrace) -> None:
    """Saves an EM history as JSON"""
    write_json(path, history.to_dict())


#### #### #### TRACES #### #### ####


def write_trace_csv(
    path: PathLike, u: np.ndarray, z: Optional[np.ndarray], trace: QuantizedTrace
) -> None:
    """Writes one row per grid step: k, t, u, z, y, a, b, event. z may be
    unknown (None), in which case the column holds nan."""
    N = trace.N
    z_col = np.full(N, np.nan) if z is None else np.asarray(z, dtype=float)
    rows = zip(
        range(N),
        trace.times,
        np.asarray(u, dtype=float),
        z_col,
        trace.y,
        trace.a,
        trace.b,
        trace.event_flag,
    )
    write_table(path, TRACE_COLUMNS, rows)


def read_trace_csv(
    path: PathLike, tau: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray, QuantizedTrace]:
    """Loads a trace file
    Parameters: The path, and tau if it should not be inferred from the first
                band (which is the floor band, tau wide)
       Returns: The input, the noiseless output (nan when unknown), the trace
       Effects: None
    """
    header, rows = read_table(path)
    if header != TRACE_COLUMNS:
        raise TraceError(f"{path}: expected columns {','.join(TRACE_COLUMNS)}")
    if len(rows) < 2:
        raise TraceError(f"{path}: a trace needs at least two rows")

    data = np.array([[float(cell) for cell in row] for row in rows])
    t, u, z, y, a, b, event = (data[:, i] for i in range(1, 8))
    delta = float(t[1] - t[0])
    if tau is None:
        tau = float(b[0] - a[0])
    trace = QuantizedTrace(
        y=y, a=a, b=b, event_flag=event.astype(bool), delta=delta, tau=tau
    )
    return u, z, trace


def write_events_csv(path: PathLike, events: EventRecord) -> None:
    """Writes one row per event: l, t_l, y_l"""
    rows = zip(range(1, len(events) + 1), events.times, events.values)
    write_table(path, EVENT_COLUMNS, rows)


def write_smoothed_csv(
    path: PathLike, means: np.ndarray, variances: np.ndarray
) -> None:
    """Writes smoothed means and variances: k, mean_1..mean_n, var_1..var_n"""
    n = means.shape[1]
    header = (
        ["k"] + [f"mean_{i + 1}" for i in range(n)] + [f"var_{i + 1}" for i in range(n)]
    )
    rows = (
        [k, *mean, *var] for k, (mean, var) in enumerate(zip(means, variances))
    )
    write_table(path, header, rows)

"""CSV files for observations, step records, timings and summaries.

Floats are written with 17 significant digits so that reading a file back
gives the exact values that were written.  Step records and their wall-clock
timings go to separate files: the record file depends only on the seed and
the configuration, the timing file does not.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import IngestionError
from ..fixed_window import StepRecord


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def timing_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_timing" + path.suffix)


def record_header(names) -> list[str]:
    return (["time", "block"] + [f"mean_{n}" for n in names] + [f"sd_{n}" for n in names]
            + ["state_mean", "prediction", "ess", "log_evidence_increment", "resampled"])


def record_row(r: StepRecord) -> list[str]:
    values = [r.time, r.block, *r.theta_mean, *r.theta_sd, r.state_mean, r.prediction, r.ess,
              r.log_evidence_increment, bool(r.resampled)]
    return [fmt(v) for v in values]


def write_records(path, records, names) -> None:
    """Write the records and, next to them, a ``*_timing.csv`` with wall-clock milliseconds."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(record_header(names))
        for r in records:
            w.writerow(record_row(r))
    with open(timing_path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "wall_ms"])
        for r in records:
            w.writerow([fmt(r.time), fmt(r.wall_ms)])


def read_records(path) -> tuple[list[StepRecord], list[str]]:
    """Inverse of :func:`write_records`; timings are joined when the file exists."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    names = [h[len("mean_"):] for h in header if h.startswith("mean_")]
    d = len(names)
    timings = {}
    if timing_path(path).is_file():
        with open(timing_path(path), newline="", encoding="utf-8") as fh:
            for row in list(csv.reader(fh))[1:]:
                timings[int(row[0])] = float(row[1])
    out = []
    for row in body:
        time = int(row[0])
        out.append(StepRecord(
            time=time,
            block=int(row[1]),
            theta_mean=tuple(float(v) for v in row[2:2 + d]),
            theta_sd=tuple(float(v) for v in row[2 + d:2 + 2 * d]),
            state_mean=float(row[2 + 2 * d]),
            prediction=float(row[3 + 2 * d]),
            ess=float(row[4 + 2 * d]),
            log_evidence_increment=float(row[5 + 2 * d]),
            resampled=row[6 + 2 * d] == "1",
            wall_ms=timings.get(time, 0.0),
        ))
    return out, names


def write_series(path, y, states=None) -> None:
    """Observations (and optionally the hidden states) with a header row."""
    y = np.asarray(y, dtype=float)
    cols = ["time", "y"]
    st = None
    if states is not None:
        st = np.asarray(states, dtype=float).reshape(len(y), -1)
        cols += ["x"] if st.shape[1] == 1 else [f"x{k}" for k in range(st.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, v in enumerate(y):
            row = [str(i + 1), fmt(v)]
            if st is not None:
                row += [fmt(s) for s in st[i]]
            w.writerow(row)


def read_series(path) -> np.ndarray:
    """Observation column ``y`` of a series file, or the only column of a bare file."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise IngestionError(f"{path}: no observations")
    header = [h.strip() for h in rows[0]]
    try:
        float(header[-1])
        col, body = len(header) - 1, rows
    except ValueError:
        if "y" in header:
            col = header.index("y")
        elif len(header) == 1:
            col = 0
        else:
            raise IngestionError(f"{path}: no 'y' column in header {header}") from None
        body = rows[1:]
    out = []
    for lineno, row in enumerate(body, start=2 if body is not rows else 1):
        try:
            out.append(float(row[col]))
        except (ValueError, IndexError):
            raise IngestionError(f"{path}: line {lineno}: cannot parse observation") from None
    return np.array(out)


def write_summary(path, rows) -> None:
    """Rows are dicts with the same keys; the first row fixes the column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(rows[0].keys()) if rows else ["name"]
        w.writerow(keys)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in (row[k] for k in keys)])


def read_reference(path) -> dict:
    """``name -> value`` from a summary file (its ``mean`` column) or a two-column file."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if "name" in header:
        key = header.index("name")
        col = header.index("mean") if "mean" in header else header.index("value")
        return {r[key]: float(r[col]) for r in rows[1:] if r}
    return {r[0]: float(r[1]) for r in rows if r}

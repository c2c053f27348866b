"""CSV serialization of traces and smoother outputs (UTF-8, LF, 17 significant digits)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .gaussian import ValidationError
from .model import SimulationTrace


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) if isinstance(v, float) else v
                        for v in row])


def write_trace(path: Path, trace: SimulationTrace) -> None:
    """``step,mode,x0..,z0..``; row ``k`` carries the mode that produced ``x_k``."""
    n = trace.states.shape[1]
    m = trace.measurements.shape[1]
    header = ["step", "mode"] + [f"x{i}" for i in range(n)] + [f"z{i}" for i in range(m)]
    rows = []
    for k in range(trace.steps):
        mode = "" if k == 0 else str(int(trace.modes[k - 1]))
        rows.append([k, mode, *map(float, trace.states[k]), *map(float, trace.measurements[k])])
    write_rows(path, header, rows)


def read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty CSV")
    return [h.strip() for h in rows[0]], [r for r in rows[1:] if r]


def _column(header: list[str], rows: list[list[str]], name: str) -> list[str]:
    try:
        i = header.index(name)
    except ValueError:
        raise ValidationError(f"missing column {name!r}") from None
    return [r[i].strip() for r in rows]


def read_trace(path: Path) -> SimulationTrace:
    header, rows = read_table(path)
    xs = [h for h in header if h.startswith("x") and h[1:].isdigit()]
    zs = [h for h in header if h.startswith("z") and h[1:].isdigit()]
    states = np.array([[float(v) for v in _column(header, rows, h)] for h in xs]).T
    meas = np.array([[float(v) for v in _column(header, rows, h)] for h in zs]).T
    modes = np.array([int(v) for v in _column(header, rows, "mode")[1:]], dtype=int)
    return SimulationTrace(states.reshape(len(rows), -1), meas.reshape(len(rows), -1), modes)


def read_measurements(
    path: Path,
    columns: Optional[Sequence[str]] = None,
    mode_column: Optional[str] = "mode",
    labels: Sequence[str] = (),
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Measurement matrix and, when present, ground-truth mode slots.

    Without ``columns`` the ``z0, z1, ...`` columns of a trace file are used.
    Mode cells may be indices or labels; the first row's cell is ignored.
    """
    header, rows = read_table(path)
    if columns is None:
        columns = [h for h in header if h.startswith("z") and h[1:].isdigit()]
        if not columns:
            raise ValidationError(f"{path}: no measurement columns (z0, z1, ...)")
    try:
        z = np.array([[float(v) for v in _column(header, rows, c)] for c in columns]).T
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    truth = None
    if mode_column and mode_column in header:
        cells = _column(header, rows, mode_column)[1:]
        if cells and all(cells):
            truth = np.array(
                [int(c) if c.lstrip("-").isdigit() else _label_index(labels, c) for c in cells],
                dtype=int,
            )
    return z.reshape(len(rows), len(columns)), truth


def _label_index(labels: Sequence[str], cell: str) -> int:
    try:
        return list(labels).index(cell)
    except ValueError:
        raise ValidationError(f"unknown mode label {cell!r} in input") from None

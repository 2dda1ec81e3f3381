"""CSV emission.  Column orders are documented in FORMATS.md."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import Grid, TracerState

__all__ = ["fmt", "write_csv", "read_csv", "write_snapshot", "read_snapshot", "DIAGNOSTICS_HEADER"]

DIAGNOSTICS_HEADER = ("cycle_or_step", "time", "mass_P", "mass_Fe", "residual")


def fmt(v) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Header and float array of a numeric CSV written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(x) for x in row] for row in r]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def write_snapshot(path: str | Path, state: TracerState) -> Path:
    Y = state.as_array()
    return write_csv(path, ("cell", "y1", "y2", "y3"), ([i, *Y[i]] for i in range(Y.shape[0])))


def read_snapshot(path: str | Path, g: Grid | None = None, timestamp: float = 0.0) -> TracerState:
    _, a = read_csv(path)
    order = np.argsort(a[:, 0], kind="stable")
    st = TracerState.from_array(a[order, 1:4], timestamp)
    if g is not None:
        st.check(g)
    return st

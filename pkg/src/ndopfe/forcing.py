"""Surface insolation and aeolian iron deposition."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .grid import Grid
from .params import ParameterSet

__all__ = ["Forcing", "seasonal_insolation", "iron_source"]

SourceSpread = Literal["euphotic", "surface"]


@dataclass(frozen=True, eq=False)
class Forcing:
    """Periodic surface forcing.

    Insolation of a column at day ``t`` is
    ``I0 * max(0, 1 + amplitude * phi * cos(2 pi (t - solstice) / period))``
    where ``phi`` in (-1, 1) is the column's latitude fraction (positive
    rows have their summer at ``solstice``).
    """

    I0: float = 150.0                   # W m-2
    amplitude: float = 0.6
    F_in: np.ndarray | float = 26.0     # iron deposition per column, per m2 and day
    period: float = 360.0
    solstice: float = 180.0
    source_spread: SourceSpread = "euphotic"
    frozen: bool = False                # annual-mean insolation at every t

    def __post_init__(self):
        if self.I0 < 0 or np.any(np.asarray(self.F_in) < 0) or self.period <= 0:
            raise ValueError("forcing values must be nonnegative and the period positive")
        if self.source_spread not in ("euphotic", "surface"):
            raise ValueError(f"unknown source_spread {self.source_spread!r}")

    def deposition(self, g: Grid) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.F_in, dtype=float), (g.ncolumns,)).copy()

    def seasonal_factor(self, g: Grid, t) -> np.ndarray:
        phase = np.cos(2.0 * np.pi * (np.asarray(t) - self.solstice) / self.period)
        return 1.0 + self.amplitude * g.latitude_fraction * phase

    def insolation(self, g: Grid, t: float) -> np.ndarray:
        """Surface irradiance of every column at day ``t``."""
        if self.frozen:
            return self.annual_mean_insolation(g)
        return self.I0 * np.maximum(0.0, self.seasonal_factor(g, t))

    def annual_mean_insolation(self, g: Grid, samples: int = 360) -> np.ndarray:
        # midpoint rule is exact for the unclipped sinusoid
        ts = (np.arange(samples) + 0.5) * self.period / samples
        vals = [self.I0 * np.maximum(0.0, self.seasonal_factor(g, t)) for t in ts]
        return np.mean(vals, axis=0)

    def frozen_copy(self) -> "Forcing":
        return Forcing(self.I0, self.amplitude, self.F_in, self.period, self.solstice,
                       self.source_spread, frozen=True)


def seasonal_insolation(g: Grid, column: int, t: float, f: Forcing) -> float:
    return float(f.insolation(g, t)[column])


def iron_source(g: Grid, p: ParameterSet, f: Forcing) -> np.ndarray:
    """S_Fe per cell: beta * F_in spread over the euphotic depth (or the top cell)."""
    F = f.deposition(g)
    out = np.zeros(g.ncells)
    if f.source_spread == "euphotic":
        eu = g.euphotic
        out[eu] = p.beta * F[g.cell_column[eu]] / g.h_e[g.cell_column[eu]]
    else:
        top = g.col_start[:-1]
        out[top] = p.beta * F / g.dz[top]
    return out

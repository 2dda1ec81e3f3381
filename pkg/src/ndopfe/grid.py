"""Column/layer ocean domain, tracer state and the phosphorus mass functional.

The domain is a set of surface columns on a (lon, lat) index lattice,
layered on shared z-level interfaces.  A column of depth ``h`` uses the
first ``n`` layers with ``interfaces[n] == h``.  The euphotic zone of each
column is ``h_e = min(h_bar_e, h)`` and ``h_bar_e`` must be an interface,
so the euphotic/aphotic split always falls on a layer boundary.

Cells are ordered column by column, top to bottom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "H_BAR_E",
    "Grid",
    "TracerState",
    "GridError",
    "DESK_INTERFACES",
    "DESK_DEPTHS",
    "desk_grid",
    "make_grid",
    "total_mass",
    "uniform_state_with_mass",
    "read_grid",
    "write_grid",
    "volume_norm",
]

H_BAR_E = 120.0

DESK_INTERFACES = (0.0, 40.0, 80.0, 120.0, 200.0, 300.0, 450.0, 650.0, 900.0,
                   1200.0, 1550.0, 1950.0, 2400.0, 2900.0, 3450.0, 4000.0)

# rows are latitude index 0..3, entries longitude index 0..7
DESK_DEPTHS = (
    (80.0, 450.0, 1550.0, 2400.0, 2400.0, 1550.0, 450.0, 120.0),
    (120.0, 900.0, 3450.0, 4000.0, 4000.0, 3450.0, 900.0, 200.0),
    (120.0, 900.0, 2900.0, 4000.0, 3450.0, 2900.0, 900.0, 120.0),
    (80.0, 300.0, 1200.0, 1950.0, 1950.0, 1200.0, 300.0, 80.0),
)


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable column grid.

    Parameters
    ----------
    interfaces : shared layer interfaces, strictly increasing from 0 (m)
    lon, lat : integer lattice position of every column
    area : surface area of every column (m2)
    depth : sea-floor depth h of every column (m); must be an interface
    h_bar_e : nominal euphotic depth (m)
    """

    interfaces: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    area: np.ndarray
    depth: np.ndarray
    h_bar_e: float = H_BAR_E
    # derived
    nlayers: np.ndarray = field(init=False, repr=False)
    col_start: np.ndarray = field(init=False, repr=False)
    cell_column: np.ndarray = field(init=False, repr=False)
    cell_layer: np.ndarray = field(init=False, repr=False)
    z_top: np.ndarray = field(init=False, repr=False)
    z_bot: np.ndarray = field(init=False, repr=False)
    dz: np.ndarray = field(init=False, repr=False)
    z_mid: np.ndarray = field(init=False, repr=False)
    volume: np.ndarray = field(init=False, repr=False)
    euphotic: np.ndarray = field(init=False, repr=False)
    h_e: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        z = np.asarray(self.interfaces, dtype=float)
        lon = np.asarray(self.lon, dtype=int)
        lat = np.asarray(self.lat, dtype=int)
        area = np.asarray(self.area, dtype=float)
        depth = np.asarray(self.depth, dtype=float)
        if z.ndim != 1 or len(z) < 2 or z[0] != 0.0 or np.any(np.diff(z) <= 0):
            raise GridError("interfaces must start at 0 and increase strictly")
        ncol = len(depth)
        if not (len(lon) == len(lat) == len(area) == ncol) or ncol == 0:
            raise GridError("column arrays must be non-empty and of equal length")
        if np.any(depth <= 0) or np.any(area <= 0):
            raise GridError("depths and areas must be positive")
        if len(set(zip(lon.tolist(), lat.tolist()))) != ncol:
            raise GridError("duplicate (lon, lat) position")
        nlayers = np.searchsorted(z, depth)
        if np.any(nlayers >= len(z)) or np.any(z[np.minimum(nlayers, len(z) - 1)] != depth):
            raise GridError("every column depth must coincide with an interface")
        if np.any(depth > self.h_bar_e) and self.h_bar_e not in z:
            raise GridError("h_bar_e must be an interface when aphotic columns exist")

        col_start = np.concatenate([[0], np.cumsum(nlayers)])
        cell_column = np.repeat(np.arange(ncol), nlayers)
        cell_layer = np.concatenate([np.arange(n) for n in nlayers])
        z_top = z[cell_layer]
        z_bot = z[cell_layer + 1]
        dz = z_bot - z_top
        z_mid = 0.5 * (z_top + z_bot)
        h_e = np.minimum(self.h_bar_e, depth)

        for name, val in dict(interfaces=z, lon=lon, lat=lat, area=area, depth=depth,
                              nlayers=nlayers, col_start=col_start, cell_column=cell_column,
                              cell_layer=cell_layer, z_top=z_top, z_bot=z_bot, dz=dz,
                              z_mid=z_mid, volume=area[cell_column] * dz,
                              euphotic=z_mid < h_e[cell_column], h_e=h_e).items():
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def ncolumns(self) -> int:
        return len(self.depth)

    @property
    def ncells(self) -> int:
        return int(self.col_start[-1])

    @property
    def total_volume(self) -> float:
        return math.fsum(self.volume)

    @property
    def gamma2(self) -> np.ndarray:
        """Columns with an aphotic part (h > h_bar_e)."""
        return self.depth > self.h_bar_e

    @property
    def bottom_cell(self) -> np.ndarray:
        return self.col_start[1:] - 1

    def column_cells(self, c: int) -> slice:
        return slice(int(self.col_start[c]), int(self.col_start[c + 1]))

    def column_interfaces(self, c: int) -> np.ndarray:
        return self.interfaces[: int(self.nlayers[c]) + 1]

    def cell_index(self, lon: int, lat: int, layer: int) -> int | None:
        hit = np.flatnonzero((self.lon == lon) & (self.lat == lat))
        if len(hit) == 0 or layer >= self.nlayers[hit[0]]:
            return None
        return int(self.col_start[hit[0]] + layer)

    @property
    def latitude_fraction(self) -> np.ndarray:
        """Latitude of each column mapped to (-1, 1), symmetric about the equator row."""
        lo, hi = self.lat.min(), self.lat.max()
        n = hi - lo + 1
        return (2.0 * (self.lat - lo) + 1.0) / n - 1.0


def make_grid(depths, interfaces, area: float | np.ndarray = 1.0, h_bar_e: float = H_BAR_E) -> Grid:
    """Grid from a ``depths[lat][lon]`` table; ``nan`` or 0 marks land."""
    d = np.asarray(depths, dtype=float)
    if d.ndim == 1:
        d = d[None, :]
    lat, lon = np.nonzero(np.nan_to_num(d) > 0)
    a = np.broadcast_to(np.asarray(area, dtype=float), d.shape)[lat, lon]
    return Grid(np.asarray(interfaces, float), lon, lat, a, d[lat, lon], h_bar_e)


def desk_grid() -> Grid:
    """The 8 x 4 x 15 default grid.

    Column areas are chosen so that the total volume is 1 m3: a phosphorus
    mass of C mmol then means a mean concentration of C mmol m-3.
    """
    area = 1.0 / float(np.sum(DESK_DEPTHS))
    return make_grid(DESK_DEPTHS, DESK_INTERFACES, area)


@dataclass
class TracerState:
    """Phosphate, DOP and iron per cell at one instant."""

    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray
    timestamp: float = 0.0

    @classmethod
    def from_array(cls, Y: np.ndarray, timestamp: float = 0.0) -> "TracerState":
        Y = np.asarray(Y, dtype=float)
        return cls(Y[:, 0].copy(), Y[:, 1].copy(), Y[:, 2].copy(), timestamp)

    @classmethod
    def zeros(cls, g: Grid, timestamp: float = 0.0) -> "TracerState":
        return cls.from_array(np.zeros((g.ncells, 3)), timestamp)

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.y1, self.y2, self.y3]).astype(float)

    def check(self, g: Grid) -> None:
        for name in ("y1", "y2", "y3"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (g.ncells,):
                raise GridError(f"{name} has shape {arr.shape}, grid has {g.ncells} cells")
            if not np.all(np.isfinite(arr)):
                raise GridError(f"{name} has non-finite values")

    def copy(self) -> "TracerState":
        return TracerState(self.y1.copy(), self.y2.copy(), self.y3.copy(), self.timestamp)


def total_mass(state: TracerState, g: Grid) -> float:
    """Phosphorus mass, sum over cells of (y1 + y2) * volume (mmol); iron excluded."""
    y1 = np.asarray(state.y1, dtype=float)
    y2 = np.asarray(state.y2, dtype=float)
    if y1.shape != (g.ncells,) or y2.shape != (g.ncells,):
        raise GridError("state does not match grid")
    return float(np.dot(y1 + y2, g.volume))


def volume_norm(Y: np.ndarray, g: Grid) -> float:
    """Volume-weighted L2 norm over every tracer column of ``Y``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    return float(np.sqrt(np.sum(g.volume[:, None] * Y * Y)))


def uniform_state_with_mass(C: float, g: Grid, y3: float = 0.5) -> TracerState:
    """All phosphorus as uniform phosphate with total mass ``C``; DOP zero, iron ``y3``."""
    if not C >= 0:
        raise ValueError("mass must be nonnegative")
    n = g.ncells
    return TracerState(np.full(n, C / g.total_volume), np.zeros(n), np.full(n, float(y3)))


_GRID_MAGIC = "# ndopfe-grid v1"


def write_grid(g: Grid, path: str | Path) -> None:
    """Plain-text grid table: column id, lon, lat, area, depth, layer count."""
    lines = [_GRID_MAGIC,
             "# interfaces " + " ".join(repr(float(z)) for z in g.interfaces),
             f"# h_bar_e {g.h_bar_e!r}",
             "column lon lat area depth layers"]
    for c in range(g.ncolumns):
        lines.append(f"{c} {g.lon[c]} {g.lat[c]} {float(g.area[c])!r} {float(g.depth[c])!r} {g.nlayers[c]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid(path: str | Path) -> Grid:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != _GRID_MAGIC:
        raise GridError(f"{path}: not a grid file")
    interfaces = None
    h_bar_e = H_BAR_E
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        s = line.strip()
        if s.startswith("# interfaces"):
            interfaces = [float(v) for v in s.split()[2:]]
        elif s.startswith("# h_bar_e"):
            h_bar_e = float(s.split()[2])
        elif not s or s.startswith("#") or s.startswith("column"):
            continue
        else:
            parts = s.split()
            if len(parts) != 6:
                raise GridError(f"{path}:{lineno}: expected 6 fields")
            rows.append(parts)
    if interfaces is None:
        raise GridError(f"{path}: missing interfaces header")
    rows.sort(key=lambda r: int(r[0]))
    g = Grid(np.array(interfaces), [int(r[1]) for r in rows], [int(r[2]) for r in rows],
             [float(r[3]) for r in rows], [float(r[4]) for r in rows], h_bar_e)
    if list(g.nlayers) != [int(r[5]) for r in rows]:
        raise GridError(f"{path}: layer counts inconsistent with depths")
    return g

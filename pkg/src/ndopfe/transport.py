"""Offline transport as a time-periodic sparse operator in tendency form.

Every snapshot ``A`` maps a concentration field to its advective plus
diffusive tendency.  Fluxes are assembled face by face (what leaves one
cell enters its neighbour), so the volume-weighted column sums of ``A``
vanish: transport neither creates nor destroys mass.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid

__all__ = ["TransportOperator", "build_synthetic", "apply", "write_operator", "read_operator",
           "CFLError", "grid_faces"]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class CFLError(ValueError):
    pass


@dataclass(eq=False)
class TransportOperator:
    """Snapshots share one sparsity pattern, so interpolation acts on ``data`` only.

    Snapshot ``m`` belongs to day ``times[m]``; between snapshots the
    operator is interpolated linearly, wrapping around the period.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray            # (n_snapshots, nnz)
    times: np.ndarray
    period: float
    volumes: np.ndarray
    _lu: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != self.data.shape[0]:
            raise ValueError("one time per snapshot required")
        if np.any(np.diff(self.times) <= 0) or self.times[0] < 0 or self.times[-1] >= self.period:
            raise ValueError("snapshot times must increase within [0, period)")

    @property
    def ncells(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[0]

    def matrix(self, m: int) -> sp.csr_matrix:
        n = self.ncells
        return sp.csr_matrix((self.data[m], self.indices, self.indptr), shape=(n, n))

    def weights(self, t: float) -> tuple[int, int, float]:
        """Bracketing snapshots (m0, m1) and the weight of m1 at day ``t``."""
        n = self.n_snapshots
        if n == 1:
            return 0, 0, 0.0
        tt = math.fmod(t, self.period)
        if tt < 0:
            tt += self.period
        m1 = int(np.searchsorted(self.times, tt, side="right"))
        m0 = m1 - 1
        t0 = self.times[m0] if m0 >= 0 else self.times[-1] - self.period
        t1 = self.times[m1] if m1 < n else self.times[0] + self.period
        return m0 % n, m1 % n, (tt - t0) / (t1 - t0)

    def data_at(self, t: float) -> np.ndarray:
        m0, m1, w = self.weights(t)
        if w == 0.0:
            return self.data[m0]
        return (1.0 - w) * self.data[m0] + w * self.data[m1]

    def at(self, t: float) -> sp.csr_matrix:
        n = self.ncells
        return sp.csr_matrix((self.data_at(t), self.indices, self.indptr), shape=(n, n))

    def mean(self) -> "TransportOperator":
        """Annual-mean operator (mean of the snapshots)."""
        return TransportOperator(self.indptr, self.indices, self.data.mean(axis=0, keepdims=True),
                                 np.zeros(1), self.period, self.volumes)

    def diagonal(self) -> np.ndarray:
        """Diagonal of every snapshot, shape (n_snapshots, ncells)."""
        return np.stack([self.matrix(m).diagonal() for m in range(self.n_snapshots)])

    def max_explicit_dt(self) -> float:
        """Largest dt for which I + dt*A stays nonnegative (monotone, max-norm stable)."""
        d = -self.diagonal().min()
        return math.inf if d <= 0 else 1.0 / d

    def check_cfl(self, dt: float) -> None:
        limit = self.max_explicit_dt()
        if dt > limit:
            raise CFLError(f"dt = {dt} violates the explicit stability bound; max admissible dt = {limit:.6g}")

    def implicit_solver(self, t: float, dt: float):
        """Factorized (I - dt*A) of the snapshot governing day ``t`` (cached)."""
        m0, _, _ = self.weights(t)
        key = (m0, dt)
        if key not in self._lu:
            n = self.ncells
            self._lu[key] = spla.splu((sp.identity(n, format="csc") - dt * self.matrix(m0)).tocsc())
        return self._lu[key]

    def is_zero(self) -> bool:
        return not np.any(self.data)


def apply(op: TransportOperator, s: np.ndarray, t: float) -> np.ndarray:
    """Transport tendency of field ``s`` (shape (n,) or (n, k)) at day ``t``."""
    s = np.asarray(s, dtype=float)
    if s.shape[0] != op.ncells:
        raise ValueError(f"field has {s.shape[0]} cells, operator {op.ncells}")
    return op.at(t) @ s


def grid_faces(g: Grid):
    """All interior faces: (cell_a, cell_b, kind, layer_or_interface, col_a, col_b).

    ``kind`` is 'x' (a west of b), 'y' (a south of b) or 'z' (a above b).
    """
    pos = {(int(g.lon[c]), int(g.lat[c])): c for c in range(g.ncolumns)}
    faces = []
    for c in range(g.ncolumns):
        i, j = int(g.lon[c]), int(g.lat[c])
        s = int(g.col_start[c])
        for k in range(int(g.nlayers[c]) - 1):
            faces.append((s + k, s + k + 1, "z", k + 1, c, c))
        for kind, nb in (("x", (i + 1, j)), ("y", (i, j + 1))):
            d = pos.get(nb)
            if d is None:
                continue
            sd = int(g.col_start[d])
            for k in range(int(min(g.nlayers[c], g.nlayers[d]))):
                faces.append((s + k, sd + k, kind, k, c, d))
    return faces


def _gyre_streamfunction(g: Grid, layer: int, amplitude: float):
    """Corner values psi[(ci, cj)] of the horizontal gyre at one layer."""
    pos = {(int(g.lon[c]), int(g.lat[c])): c for c in range(g.ncolumns)}
    i0, i1 = int(g.lon.min()), int(g.lon.max())
    j0, j1 = int(g.lat.min()), int(g.lat.max())
    nx, ny = i1 - i0 + 1, j1 - j0 + 1
    z = g.interfaces
    decay = math.exp(-0.5 * (z[layer] + z[layer + 1]) / z[-1])
    psi = {}
    for ci in range(i0 + 1, i1 + 1):
        for cj in range(j0 + 1, j1 + 1):
            cols = [pos.get((a, b)) for a in (ci - 1, ci) for b in (cj - 1, cj)]
            if any(c is None or g.nlayers[c] <= layer for c in cols):
                continue
            psi[(ci, cj)] = amplitude * decay * math.sin(math.pi * (ci - i0) / nx) \
                * math.sin(math.pi * (cj - j0) / ny)
    return psi


def _overturning_streamfunction(g: Grid, lon: int, amplitude: float):
    """Corner values psi[(cj, ck)] of the meridional cell in one longitude strip."""
    pos = {(int(g.lon[c]), int(g.lat[c])): c for c in range(g.ncolumns)}
    j0, j1 = int(g.lat.min()), int(g.lat.max())
    ny = j1 - j0 + 1
    z = g.interfaces
    psi = {}
    for cj in range(j0 + 1, j1 + 1):
        ca, cb = pos.get((lon, cj - 1)), pos.get((lon, cj))
        if ca is None or cb is None:
            continue
        nmin = int(min(g.nlayers[ca], g.nlayers[cb]))
        hmin = z[nmin]
        for ck in range(1, nmin):
            psi[(cj, ck)] = amplitude * math.sin(math.pi * (cj - j0) / ny) * math.sin(math.pi * z[ck] / hmin)
    return psi


def _face_fluxes(g: Grid, faces, gyre_strength: float, overturning: float) -> np.ndarray:
    """Volume flux from cell a to cell b through every face (m3/day); divergence free."""
    L = np.sqrt(g.area)
    dzs = np.diff(g.interfaces)
    gyres = {}
    strips = {}
    flux = np.zeros(len(faces))
    for f, (a, b, kind, k, ca, cb) in enumerate(faces):
        i, j = int(g.lon[ca]), int(g.lat[ca])
        Lf = math.sqrt(L[ca] * L[cb])
        if kind in ("x", "y") and gyre_strength:
            if k not in gyres:
                gyres[k] = _gyre_streamfunction(g, k, gyre_strength * float(np.mean(L)))
            psi = gyres[k]
            if kind == "x":
                flux[f] += (psi.get((i + 1, j + 1), 0.0) - psi.get((i + 1, j), 0.0)) * dzs[k]
            else:
                flux[f] -= (psi.get((i + 1, j + 1), 0.0) - psi.get((i, j + 1), 0.0)) * dzs[k]
        if overturning and kind in ("y", "z"):
            if i not in strips:
                strips[i] = _overturning_streamfunction(g, i, overturning)
            psi = strips[i]
            if kind == "y":
                flux[f] += (psi.get((j + 1, k + 1), 0.0) - psi.get((j + 1, k), 0.0)) * Lf
            else:
                # k is the interface index below cell a
                flux[f] -= (psi.get((j + 1, k), 0.0) - psi.get((j, k), 0.0)) * Lf
    return flux


def _diffusion_coefficients(g: Grid, faces, kappa: float, kappa_h: float) -> np.ndarray:
    """kappa * face area / centre distance for every face (m3/day)."""
    L = np.sqrt(g.area)
    out = np.zeros(len(faces))
    for f, (a, b, kind, k, ca, cb) in enumerate(faces):
        if kind == "z":
            out[f] = kappa * g.area[ca] / (0.5 * (g.dz[a] + g.dz[b]))
        else:
            out[f] = kappa_h * g.dz[a] * math.sqrt(L[ca] * L[cb]) / (0.5 * (L[ca] + L[cb]))
    return out


def build_synthetic(g: Grid, gyre_strength: float, kappa: float, *, kappa_h: float | None = None,
                    overturning: float = 0.0, n_snapshots: int = 12, period: float = 360.0,
                    seasonal_amplitude: float = 0.3) -> TransportOperator:
    """Upwind advection by a divergence-free, no-normal-flow circulation plus diffusion.

    Parameters
    ----------
    gyre_strength : horizontal gyre velocity scale (m/day); the gyre
        streamfunction peaks at ``gyre_strength`` times the column spacing.
    kappa : vertical diffusivity (m2/day), identical for all tracers.
    kappa_h : horizontal diffusivity (m2/day); defaults to ``kappa``.
    overturning : peak meridional-overturning streamfunction (m2/day).
    seasonal_amplitude : relative seasonal modulation of the advective fluxes.
    """
    if kappa < 0 or (kappa_h is not None and kappa_h < 0):
        raise ValueError("diffusivity must be nonnegative")
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    kappa_h = kappa if kappa_h is None else kappa_h
    n = g.ncells
    if n == 1:
        log.warning("single-cell grid: transport operator is identically zero")
    faces = grid_faces(g)
    fa = np.array([f[0] for f in faces], dtype=np.int64)
    fb = np.array([f[1] for f in faces], dtype=np.int64)
    flux = _face_fluxes(g, faces, gyre_strength, overturning)
    kdiff = _diffusion_coefficients(g, faces, kappa, kappa_h)

    # canonical CSR pattern: diagonal + both off-diagonals of every face
    rows = np.concatenate([np.arange(n), fa, fb])
    cols = np.concatenate([np.arange(n), fb, fa])
    pattern = sp.csr_matrix((np.arange(1, len(rows) + 1, dtype=float), (rows, cols)), shape=(n, n))
    pattern.sort_indices()
    indptr, indices = pattern.indptr.copy(), pattern.indices.copy()
    lookup = {(r, c): q for r in range(n) for q, c in
              zip(range(indptr[r], indptr[r + 1]), indices[indptr[r]:indptr[r + 1]])}
    diag_pos = np.array([lookup[(r, r)] for r in range(n)])
    ab_pos = np.array([lookup[(a, b)] for a, b in zip(fa, fb)], dtype=np.int64)
    ba_pos = np.array([lookup[(b, a)] for a, b in zip(fa, fb)], dtype=np.int64)
    nnz = len(indices)
    vol = g.volume

    times = np.arange(n_snapshots) * period / n_snapshots
    data = np.zeros((n_snapshots, nnz))
    for m, t in enumerate(times):
        F = flux * (1.0 + seasonal_amplitude * math.cos(2.0 * math.pi * t / period))
        fp, fm = np.maximum(F, 0.0), np.maximum(-F, 0.0)
        # M[b,a] gains what flows a->b, M[a,b] what flows b->a; diagonals lose it
        vals = np.concatenate([fp + kdiff, fm + kdiff, -(fp + kdiff), -(fm + kdiff)])
        pos = np.concatenate([ba_pos, ab_pos, diag_pos[fa], diag_pos[fb]])
        M = np.bincount(pos, weights=vals, minlength=nnz)
        row_of = np.repeat(np.arange(n), np.diff(indptr))
        data[m] = M / vol[row_of]
    return TransportOperator(indptr, indices, data, times, period, vol.copy())


_OP_MAGIC = f"# ndopfe-operator v{FORMAT_VERSION}"


def write_operator(op: TransportOperator, directory: str | Path) -> list[Path]:
    """One coordinate-list file per snapshot plus ``volumes.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in range(op.n_snapshots):
        A = op.matrix(m).tocoo()
        path = d / f"snapshot_{m:03d}.coo"
        with path.open("w") as fh:
            fh.write(f"{_OP_MAGIC}\n# period {op.period!r}\n# time {float(op.times[m])!r}\n"
                     f"# cells {op.ncells}\n# nnz {A.nnz}\nrow col value\n")
            for r, c, v in zip(A.row, A.col, A.data):
                fh.write(f"{r} {c} {v:.17g}\n")
        paths.append(path)
    (d / "volumes.txt").write_text("".join(f"{v:.17g}\n" for v in op.volumes))
    return paths


def read_operator(directory: str | Path) -> TransportOperator:
    d = Path(directory)
    files = sorted(d.glob("snapshot_*.coo"))
    if not files:
        raise FileNotFoundError(f"no snapshot_*.coo files in {d}")
    volumes = np.loadtxt(d / "volumes.txt", ndmin=1)
    entries, times, periods, n = [], [], set(), None
    for path in files:
        lines = path.read_text().splitlines()
        if not lines or lines[0].strip() != _OP_MAGIC:
            raise ValueError(f"{path}: unsupported operator format")
        header = dict(line[1:].split() for line in lines[1:] if line.startswith("#"))
        body = [line.split() for line in lines[1:] if line and not line.startswith("#")][1:]
        arr = np.array(body, dtype=float).reshape(-1, 3)
        entries.append(arr)
        times.append(float(header["time"]))
        periods.add(float(header["period"]))
        if n is not None and int(header["cells"]) != n:
            raise ValueError(f"{path}: cell count differs between snapshots")
        n = int(header["cells"])
    if len(periods) != 1 or len(volumes) != n:
        raise ValueError("inconsistent period or volume count")
    # shared pattern: union of the snapshot patterns (diagonal always present)
    allrc = np.concatenate([e[:, :2] for e in entries] + [np.repeat(np.arange(n), 2).reshape(-1, 2)])
    pattern = sp.csr_matrix((np.ones(len(allrc)), (allrc[:, 0].astype(int), allrc[:, 1].astype(int))),
                            shape=(n, n))
    pattern.sum_duplicates()
    pattern.sort_indices()
    data = []
    for e in entries:
        M = sp.csr_matrix((e[:, 2], (e[:, 0].astype(int), e[:, 1].astype(int))), shape=(n, n))
        data.append(_on_pattern(M, pattern))
    order = np.argsort(times)
    return TransportOperator(pattern.indptr.copy(), pattern.indices.copy(), np.array(data)[order],
                             np.array(times)[order], periods.pop(), volumes)


def _on_pattern(M: sp.csr_matrix, pattern: sp.csr_matrix) -> np.ndarray:
    """Values of M at the entries of ``pattern`` (zeros where M has none)."""
    M = M.tocsr()
    M.sum_duplicates()
    out = np.zeros(pattern.nnz)
    for r in range(pattern.shape[0]):
        lo, hi = pattern.indptr[r], pattern.indptr[r + 1]
        row = dict(zip(M.indices[M.indptr[r]:M.indptr[r + 1]], M.data[M.indptr[r]:M.indptr[r + 1]]))
        out[lo:hi] = [row.get(c, 0.0) for c in pattern.indices[lo:hi]]
    return out

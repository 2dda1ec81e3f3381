"""Transient, periodic (spin-up) and stationary solutions.

One time step is first-order operator splitting: transport over ``dt``
(explicit or implicit), then the reaction tendencies over ``dt`` evaluated
on the transported state.  Both parts conserve phosphorus exactly, so the
mass of y1 + y2 only changes by round-off.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _fast
from .forcing import Forcing, iron_source
from .grid import Grid, TracerState, uniform_state_with_mass, volume_norm
from .kernels import GridReactions, Variant
from .params import ParameterSet
from .transport import TransportOperator

__all__ = [
    "SolverError",
    "RunDiagnostics",
    "Simulator",
    "step",
    "run_transient",
    "spinup_periodic",
    "solve_stationary",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Non-finite state; ``step_index`` says where it happened."""

    def __init__(self, message: str, step_index: int | None = None):
        self.step_index = step_index
        super().__init__(message if step_index is None else f"{message} at step {step_index}")


@dataclass
class RunDiagnostics:
    times: list[float] = field(default_factory=list)
    mass_P: list[float] = field(default_factory=list)
    mass_Fe: list[float] = field(default_factory=list)
    periodic_residuals: list[float] = field(default_factory=list)
    stationary_residuals: list[float] = field(default_factory=list)
    steps: int = 0
    cycles: int = 0
    wall_time: float = 0.0
    converged: bool = True
    nonmonotone_tail: bool = False

    @property
    def mass_drift(self) -> float:
        """max |mass(t) - mass(0)| / mass(0) over the recorded series."""
        if not self.mass_P:
            return 0.0
        m = np.asarray(self.mass_P)
        if m[0] == 0:
            return float(np.max(np.abs(m - m[0])))
        return float(np.max(np.abs(m - m[0])) / abs(m[0]))

    def rows(self):
        """(index, time, mass_P, mass_Fe, residual) rows for the diagnostics CSV."""
        if self.periodic_residuals or self.stationary_residuals:
            res = self.periodic_residuals or self.stationary_residuals
            for k, r in enumerate(res):
                yield (k + 1, self.times[k], self.mass_P[k], self.mass_Fe[k], r)
        else:
            for k, t in enumerate(self.times):
                yield (k, t, self.mass_P[k], self.mass_Fe[k], math.nan)


class Simulator:
    """Model configuration bundle: grid, transport, forcing, parameters.

    Parameters
    ----------
    dt : time step (days)
    implicit : implicit transport (factorized per snapshot) instead of explicit
    clip : clip negative concentrations after each step; clipped phosphorus
        is re-injected uniformly into y1 so the mass is unchanged
    fast : use the compiled integrator for multi-step runs (explicit only)
    """

    def __init__(self, grid: Grid, transport: TransportOperator, forcing: Forcing, params: ParameterSet,
                 variant: Variant = "adjusted", dt: float = 0.5, implicit: bool = False,
                 clip: bool = False, fast: bool = True):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if transport.ncells != grid.ncells:
            raise ValueError("transport operator does not match grid")
        self.grid, self.transport, self.forcing, self.params = grid, transport, forcing, params
        self.variant, self.dt, self.implicit, self.clip = variant, float(dt), implicit, clip
        if not implicit:
            transport.check_cfl(dt)
        self.s_fe = iron_source(grid, params, forcing)
        self.reactions = GridReactions(grid, params, variant, self.s_fe)
        self.fast = fast and not implicit and not clip
        self._fast_model = None

    @property
    def period(self) -> float:
        return self.forcing.period

    def frozen(self) -> "Simulator":
        """Same model with annual-mean forcing and transport."""
        return Simulator(self.grid, self.transport.mean(), self.forcing.frozen_copy(), self.params,
                         self.variant, self.dt, self.implicit, self.clip, self.fast)

    def with_params(self, params: ParameterSet) -> "Simulator":
        return Simulator(self.grid, self.transport, self.forcing, params, self.variant, self.dt,
                         self.implicit, self.clip, self.fast)

    # -- one step -----------------------------------------------------------
    def transport_step(self, Y: np.ndarray, t: float) -> np.ndarray:
        op = self.transport
        if self.implicit:
            return op.implicit_solver(t, self.dt).solve(np.ascontiguousarray(Y))
        return Y + self.dt * (op.at(t) @ Y)

    def step(self, Y: np.ndarray, t: float) -> np.ndarray:
        Ys = self.transport_step(Y, t)
        I_col = self.forcing.insolation(self.grid, t)
        Yn = Ys + self.dt * self.reactions.tendencies(Ys, I_col)
        if self.clip:
            Yn = _clip_conserving(Yn, self.grid)
        return Yn

    def tendency(self, Y: np.ndarray, t: float) -> np.ndarray:
        """(step(Y) - Y) / dt: the discrete tendency whose zero is a fixed point of the step."""
        return (self.step(Y, t) - Y) / self.dt

    # -- many steps ---------------------------------------------------------
    def _compiled(self):
        if self._fast_model is None:
            self._fast_model = _fast.FastModel(self)
        return self._fast_model

    def integrate(self, Y: np.ndarray, t0: float, nsteps: int, record_mass: bool = False,
                  monthly: int = 0, step0: int = 0):
        """Advance ``nsteps`` steps from day ``t0``.

        Returns ``(Y, masses, monthly_means)``: ``masses`` is (nsteps, 2)
        phosphorus/iron mass after every step when ``record_mass``;
        ``monthly_means`` is (monthly, ncells, 2) means of y1, y2 over equal
        slices of the run when ``monthly`` > 0.
        """
        Y = np.array(Y, dtype=float, order="C")
        if self.fast:
            return self._compiled().integrate(Y, t0, nsteps, record_mass, monthly, step0)
        g = self.grid
        masses = np.empty((nsteps, 2)) if record_mass else None
        means = np.zeros((monthly, g.ncells, 2)) if monthly else None
        per = nsteps // monthly if monthly else 0
        if monthly and per * monthly != nsteps:
            raise ValueError("nsteps must be a multiple of the number of monthly slices")
        for k in range(nsteps):
            Y = self.step(Y, t0 + k * self.dt)
            if not np.all(np.isfinite(Y)):
                raise SolverError("non-finite state", step0 + k + 1)
            if record_mass:
                masses[k, 0] = np.dot(Y[:, 0] + Y[:, 1], g.volume)
                masses[k, 1] = np.dot(Y[:, 2], g.volume)
            if monthly:
                means[k // per] += Y[:, :2]
        if monthly:
            means /= per
        return Y, masses, means

    def steps_per_period(self) -> int:
        n = self.period / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ValueError("dt must divide the period")
        return int(round(n))


def _clip_conserving(Y: np.ndarray, g: Grid) -> np.ndarray:
    """Zero out negative values; remove the phosphorus this adds uniformly from y1."""
    Yc = np.maximum(Y, 0.0)
    added = float(np.dot((Yc[:, 0] + Yc[:, 1]) - (Y[:, 0] + Y[:, 1]), g.volume))
    Yc[:, 0] -= added / g.total_volume
    return Yc


def step(state: TracerState, t: float, dt: float, op: TransportOperator, forcing: Forcing,
         p: ParameterSet, variant: Variant = "adjusted", grid: Grid | None = None,
         implicit: bool = False) -> TracerState:
    """One split step of the state; convenience wrapper around :class:`Simulator`."""
    if grid is None:
        raise ValueError("grid required")
    sim = Simulator(grid, op, forcing, p, variant, dt, implicit=implicit, fast=False)
    Y = sim.step(state.as_array(), t)
    if not np.all(np.isfinite(Y)):
        raise SolverError("non-finite state", 1)
    return TracerState.from_array(Y, t + dt)


def _masses(Y: np.ndarray, g: Grid) -> tuple[float, float]:
    return float(np.dot(Y[:, 0] + Y[:, 1], g.volume)), float(np.dot(Y[:, 2], g.volume))


def run_transient(sim: Simulator, y0: TracerState, T_end: float) -> tuple[TracerState, RunDiagnostics]:
    """Integrate from ``y0`` for ``T_end`` days, recording masses after every step."""
    t_start = time.perf_counter()
    y0.check(sim.grid)
    diag = RunDiagnostics()
    Y = y0.as_array()
    m0 = _masses(Y, sim.grid)
    diag.times.append(y0.timestamp)
    diag.mass_P.append(m0[0])
    diag.mass_Fe.append(m0[1])
    nsteps = int(round(T_end / sim.dt))
    if T_end < 0 or abs(nsteps * sim.dt - T_end) > 1e-9 * max(1.0, T_end):
        raise ValueError("T_end must be a nonnegative multiple of dt")
    if nsteps:
        Y, masses, _ = sim.integrate(Y, y0.timestamp, nsteps, record_mass=True)
        diag.times.extend((y0.timestamp + sim.dt * np.arange(1, nsteps + 1)).tolist())
        diag.mass_P.extend(masses[:, 0].tolist())
        diag.mass_Fe.extend(masses[:, 1].tolist())
    diag.steps = nsteps
    diag.wall_time = time.perf_counter() - t_start
    return TracerState.from_array(Y, y0.timestamp + nsteps * sim.dt), diag


@dataclass
class CycleResult:
    state: TracerState
    diagnostics: RunDiagnostics
    monthly_means: np.ndarray | None = None


def spinup_periodic(sim: Simulator, C: float, tol: float = 1e-6, max_cycles: int = 3000,
                    y0: TracerState | None = None, monthly: int = 0, anderson: int = 0) -> CycleResult:
    """Integrate whole periods until ||y(kT) - y((k-1)T)|| <= tol.

    Starts from the uniform state of mass ``C`` unless ``y0`` is given.
    Non-convergence is reported through ``diagnostics.converged``; the last
    iterate is returned either way.

    ``anderson`` > 0 mixes the last ``anderson`` years (Anderson
    acceleration of the annual map).  The mixing weights sum to one, so the
    phosphorus mass is unchanged; the returned state is always the end of
    an integrated year.
    """
    if not C >= 0:
        raise ValueError("mass must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    t_start = time.perf_counter()
    g = sim.grid
    nper = sim.steps_per_period()
    Y = (y0 if y0 is not None else uniform_state_with_mass(C, g)).as_array()
    diag = RunDiagnostics(converged=False)
    means = None
    acc = _Anderson(anderson, g.volume) if anderson else None
    for k in range(1, max_cycles + 1):
        Y_new, _, means = sim.integrate(Y, 0.0, nper, monthly=monthly, step0=(k - 1) * nper)
        r = volume_norm(Y_new - Y, g)
        if acc is not None and r > tol:
            Y_next = acc.update(Y, Y_new)
        else:
            Y_next = Y_new
        Y = Y_new
        mP, mFe = _masses(Y, g)
        diag.times.append(k * sim.period)
        diag.mass_P.append(mP)
        diag.mass_Fe.append(mFe)
        diag.periodic_residuals.append(r)
        diag.cycles = k
        diag.steps += nper
        if r <= tol:
            diag.converged = True
            break
        Y = Y_next
    res = np.asarray(diag.periodic_residuals)
    if len(res) > 4:
        diag.nonmonotone_tail = bool(np.any(np.diff(res[3:]) > 0))
    diag.wall_time = time.perf_counter() - t_start
    if not diag.converged:
        log.warning("spin-up not converged after %d cycles (residual %.3g)", diag.cycles, res[-1])
    return CycleResult(TracerState.from_array(Y, 0.0), diag, means)


class _Anderson:
    """Type-II Anderson mixing for the fixed point of ``x -> g(x)``."""

    def __init__(self, depth: int, weights: np.ndarray):
        self.depth = depth
        self.w = np.sqrt(weights)[:, None]
        self.dF: list[np.ndarray] = []
        self.dG: list[np.ndarray] = []
        self.prev: tuple[np.ndarray, np.ndarray] | None = None

    def update(self, x: np.ndarray, gx: np.ndarray) -> np.ndarray:
        f = gx - x
        if self.prev is not None:
            self.dF.append(f - self.prev[0])
            self.dG.append(gx - self.prev[1])
            if len(self.dF) > self.depth:
                self.dF.pop(0)
                self.dG.pop(0)
        self.prev = (f, gx)
        if not self.dF:
            return gx
        Fm = np.stack([(d * self.w).ravel() for d in self.dF], axis=1)
        gamma, *_ = np.linalg.lstsq(Fm, (f * self.w).ravel(), rcond=None)
        out = gx - sum(c * d for c, d in zip(gamma, self.dG))
        if not np.all(np.isfinite(out)):
            self.dF.clear()
            self.dG.clear()
            return gx
        return out


def solve_stationary(sim: Simulator, C: float, tol: float = 1e-8, max_iters: int = 20000,
                     pseudo_dt: float = 20.0, y0: TracerState | None = None) -> CycleResult:
    """Fixed point of the frozen-forcing step map by preconditioned pseudo-time stepping.

    The residual is the annualized tendency ``period * ||(step(y) - y)/dt||``
    (volume-weighted L2), i.e. the drift one year at the current rate would
    accumulate.  Each iteration solves ``(I - pseudo_dt * (A + D)) delta =
    pseudo_dt * F(y)`` with ``A`` the mean transport and ``D`` the iron
    scavenging slope, so the fixed point is exactly that of the time step
    used by the spin-up.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    if not C >= 0:
        raise ValueError("mass must be positive")
    t_start = time.perf_counter()
    fz = sim if sim.forcing.frozen and sim.transport.n_snapshots == 1 else sim.frozen()
    fz = Simulator(fz.grid, fz.transport, fz.forcing, fz.params, fz.variant, fz.dt,
                   fz.implicit, fz.clip, fast=False)
    g = fz.grid
    A = fz.transport.matrix(0).tocsc()
    n = g.ncells
    eye = sp.identity(n, format="csc")
    Y = (y0 if y0 is not None else uniform_state_with_mass(C, g)).as_array()
    diag = RunDiagnostics(converged=False)
    ds = float(pseudo_dt)
    lu = spla.splu(eye - ds * A)
    scav = fz.reactions.scav_rate
    last_iron_diag = None
    lu3 = None
    prev = math.inf
    for it in range(1, max_iters + 1):
        F = fz.tendency(Y, 0.0)
        r = fz.period * volume_norm(F, g)
        mP, mFe = _masses(Y, g)
        diag.times.append(float(it))
        diag.mass_P.append(mP)
        diag.mass_Fe.append(mFe)
        diag.stationary_residuals.append(r)
        diag.cycles = it
        if not math.isfinite(r):
            raise SolverError("non-finite state in stationary iteration", it)
        if r <= tol:
            diag.converged = True
            break
        if r > 10.0 * prev and ds > 1e-3:
            ds *= 0.5
            lu = spla.splu(eye - ds * A)
            lu3 = None
        prev = min(prev, r)
        d3 = scav * fz.reactions.free_iron_slope(Y[:, 2])
        if lu3 is None or last_iron_diag is None or np.max(np.abs(d3 - last_iron_diag)) > 1e-3 * np.max(np.abs(d3)):
            lu3 = spla.splu((eye - ds * A + ds * sp.diags(d3)).tocsc())
            last_iron_diag = d3
        dY = np.empty_like(Y)
        dY[:, :2] = lu.solve(ds * np.ascontiguousarray(F[:, :2]))
        dY[:, 2] = lu3.solve(ds * np.ascontiguousarray(F[:, 2]))
        Y = Y + dY
    diag.wall_time = time.perf_counter() - t_start
    diag.steps = diag.cycles
    if not diag.converged:
        log.warning("stationary solve not converged after %d iterations (residual %.3g)",
                    diag.cycles, diag.stationary_residuals[-1])
    return CycleResult(TracerState.from_array(Y, 0.0), diag)

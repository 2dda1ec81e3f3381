import math

import numpy as np
import pytest

from ndopfe.forcing import Forcing
from ndopfe.grid import TracerState, total_mass, uniform_state_with_mass, volume_norm
from ndopfe.params import ParameterSet
from ndopfe.solvers import (RunDiagnostics, Simulator, SolverError, run_transient, solve_stationary,
                            spinup_periodic, step)
from ndopfe.transport import CFLError


def test_zero_state_is_fixed(grid, transport):
    z = TracerState.zeros(grid)
    out = step(z, 0.0, 0.5, transport, Forcing(F_in=0.0), ParameterSet(), grid=grid)
    assert np.all(out.as_array() == 0)
    assert out.timestamp == 0.5


def test_constant_state_without_reactions(grid, transport):
    q = ParameterSet(alpha=1e-300, lam=1e-300, k0=0.0)
    s = TracerState.from_array(np.full((grid.ncells, 3), 0.7))
    out = step(s, 0.0, 0.5, transport, Forcing(F_in=0.0), q, grid=grid)
    assert np.allclose(out.as_array(), 0.7, rtol=1e-13)


def test_splitting_first_order(grid, transport):
    # two half steps vs one step: difference shrinks like dt^2
    y = uniform_state_with_mass(1.0, grid)
    y = run_transient(Simulator(grid, transport, Forcing(), ParameterSet(), dt=1.0), y, 30.0)[0]
    diffs = []
    for dt in (1.0, 0.5, 0.25):
        one = Simulator(grid, transport, Forcing(), ParameterSet(), dt=dt, fast=False)
        half = Simulator(grid, transport, Forcing(), ParameterSet(), dt=dt / 2, fast=False)
        Y = y.as_array()
        a = one.step(Y, 30.0)
        b = half.step(half.step(Y, 30.0), 30.0 + dt / 2)
        diffs.append(volume_norm(a - b, grid))
    assert 3.0 < diffs[0] / diffs[1] < 5.0 and 3.0 < diffs[1] / diffs[2] < 5.0


def test_fast_matches_reference(grid, transport):
    y = uniform_state_with_mass(1.0, grid).as_array()
    for variant in ("adjusted", "original"):
        a = Simulator(grid, transport, Forcing(), ParameterSet(), variant, fast=True)
        b = Simulator(grid, transport, Forcing(), ParameterSet(), variant, fast=False)
        Ya, ma, mea = a.integrate(y, 5.0, 120, record_mass=True, monthly=4)
        Yb, mb, meb = b.integrate(y, 5.0, 120, record_mass=True, monthly=4)
        assert np.allclose(Ya, Yb, rtol=1e-12, atol=1e-15)
        assert np.allclose(ma, mb, rtol=1e-12)
        assert np.allclose(mea, meb, rtol=1e-12, atol=1e-15)


def test_fast_frozen_matches(grid, transport):
    y = uniform_state_with_mass(1.0, grid).as_array()
    fz = Simulator(grid, transport, Forcing(), ParameterSet()).frozen()
    ref = Simulator(fz.grid, fz.transport, fz.forcing, fz.params, fast=False)
    assert np.allclose(fz.integrate(y, 0, 50)[0], ref.integrate(y, 0, 50)[0], rtol=1e-12, atol=1e-15)


def test_cfl_refused(grid, transport):
    with pytest.raises(CFLError):
        Simulator(grid, transport, Forcing(), ParameterSet(), dt=30.0)
    Simulator(grid, transport, Forcing(), ParameterSet(), dt=30.0, implicit=True)


def test_implicit_conserves(grid, transport):
    sim = Simulator(grid, transport, Forcing(), ParameterSet(), dt=5.0, implicit=True)
    y, d = run_transient(sim, uniform_state_with_mass(1.0, grid), 360.0)
    assert d.mass_drift <= 1e-10


def test_transient_trivial(grid, sim):
    y0 = uniform_state_with_mass(1.0, grid)
    y, d = run_transient(sim, y0, 0.0)
    assert np.array_equal(y.as_array(), y0.as_array())
    zs = Simulator(grid, sim.transport, Forcing(F_in=0.0), ParameterSet())
    z0 = TracerState.zeros(grid)
    y, d = run_transient(zs, z0, 30.0)
    assert np.all(y.as_array() == 0)
    assert d.steps == 60 and len(d.mass_P) == 61


def test_transient_mass(grid, sim):
    y, d = run_transient(sim, uniform_state_with_mass(1.0, grid), 360.0)
    assert d.mass_drift <= 1e-8
    assert y.timestamp == 360.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_aborts_with_step(grid, transport):
    sim = Simulator(grid, transport, Forcing(), ParameterSet(), fast=False)
    Y = uniform_state_with_mass(1.0, grid).as_array()
    Y[3, 1] = np.inf
    with pytest.raises(SolverError) as e:
        sim.integrate(Y, 0.0, 5)
    assert e.value.step_index == 1
    fast = Simulator(grid, transport, Forcing(), ParameterSet())
    with pytest.raises(SolverError) as e:
        fast.integrate(Y, 0.0, 5, step0=100)
    assert e.value.step_index == 101


def test_clip_conserves_mass(grid, transport, rng):
    sim = Simulator(grid, transport, Forcing(), ParameterSet(), clip=True)
    Y = uniform_state_with_mass(1.0, grid).as_array()
    Y[:, 0] += rng.normal(0, 0.2, grid.ncells)
    m0 = float(np.dot(Y[:, 0] + Y[:, 1], grid.volume))
    out = sim.step(Y, 0.0)
    assert math.isclose(float(np.dot(out[:, 0] + out[:, 1], grid.volume)), m0, rel_tol=1e-13)


def test_spinup_zero_mass(grid, transport):
    sim = Simulator(grid, transport, Forcing(F_in=0.0), ParameterSet())
    res = spinup_periodic(sim, 0.0, 1e-12, 5, y0=TracerState.zeros(grid))
    assert res.diagnostics.converged and res.diagnostics.cycles == 1
    assert np.all(res.state.as_array() == 0)


def test_spinup_negative_mass(sim):
    with pytest.raises(ValueError, match="mass must be positive"):
        spinup_periodic(sim, -1.0)


def test_spinup_conserves_each_cycle(sim, grid):
    res = spinup_periodic(sim, 1.0, 1e-5, 50)
    d = res.diagnostics
    assert d.converged
    assert np.all(np.abs(np.array(d.mass_P) - 1.0) <= 1e-10)
    assert math.isclose(total_mass(res.state, grid), 1.0, rel_tol=1e-10)
    assert not d.nonmonotone_tail


def test_spinup_nonconvergence_is_flag(sim):
    res = spinup_periodic(sim, 1.0, 1e-14, 2)
    assert not res.diagnostics.converged and res.diagnostics.cycles == 2


def test_anderson_same_cycle(sim, grid):
    a = spinup_periodic(sim, 1.0, 1e-9)
    b = spinup_periodic(sim, 1.0, 1e-9, anderson=5)
    assert b.diagnostics.cycles < a.diagnostics.cycles
    assert volume_norm(a.state.as_array() - b.state.as_array(), grid) < 1e-7
    assert abs(b.diagnostics.mass_P[-1] - 1.0) < 1e-12


def test_stationary_trivial(grid, transport):
    sim = Simulator(grid, transport, Forcing(F_in=0.0), ParameterSet())
    res = solve_stationary(sim, 0.0, 1e-8, 10, y0=TracerState.zeros(grid))
    assert res.diagnostics.converged and res.diagnostics.stationary_residuals[0] == 0.0


def test_stationary_fixed_point(sim, grid):
    res = solve_stationary(sim, 1.0, 1e-8)
    assert res.diagnostics.converged
    fz = sim.frozen()
    Y = res.state.as_array()
    assert volume_norm(fz.step(Y, 0.0) - Y, grid) <= 1e-8
    assert math.isclose(total_mass(res.state, grid), 1.0, rel_tol=1e-12)


def test_diagnostics_rows():
    d = RunDiagnostics(times=[0.0, 1.0], mass_P=[1.0, 1.0], mass_Fe=[0.5, 0.5])
    rows = list(d.rows())
    assert rows[0][0] == 0 and math.isnan(rows[0][4])
    d.periodic_residuals = [0.1, 0.01]
    assert [r[4] for r in d.rows()] == [0.1, 0.01]

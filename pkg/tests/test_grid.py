import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndopfe.grid import (H_BAR_E, Grid, GridError, TracerState, make_grid, read_grid, total_mass,
                         uniform_state_with_mass, volume_norm, write_grid)


def test_desk_shape(grid):
    assert grid.ncolumns == 32
    assert grid.nlayers.max() == 15
    assert math.isclose(grid.total_volume, 1.0, rel_tol=1e-14)
    assert np.any(grid.gamma2) and np.any(~grid.gamma2)


def test_layer_thickness_sums_and_mask(grid):
    for c in range(grid.ncolumns):
        sl = grid.column_cells(c)
        assert math.isclose(grid.dz[sl].sum(), grid.depth[c])
        he = min(H_BAR_E, grid.depth[c])
        assert grid.h_e[c] == he
        eu = grid.euphotic[sl]
        assert np.array_equal(eu, grid.z_mid[sl] < he)
        # the euphotic zone ends on an interface
        assert math.isclose(grid.dz[sl][eu].sum(), he)


def test_gamma2_is_deeper_than_euphotic(grid):
    assert np.array_equal(grid.gamma2, grid.depth > H_BAR_E)


def test_invalid_grids():
    with pytest.raises(GridError):
        make_grid([[100.0]], (0.0, 40.0, 120.0))
    with pytest.raises(GridError):
        make_grid([[40.0]], (0.0, 40.0, 20.0))
    with pytest.raises(GridError):
        Grid(np.array([0.0, 10.0]), [0], [0], [1.0], [-10.0])


def test_total_mass_trivial(grid):
    assert total_mass(TracerState.zeros(grid), grid) == 0.0
    n = grid.ncells
    st_ = TracerState(np.full(n, 2.0), np.zeros(n), np.zeros(n))
    assert math.isclose(total_mass(st_, grid), 2.0 * grid.total_volume, rel_tol=1e-14)


def test_total_mass_oracle(grid, rng):
    Y = rng.normal(size=(grid.ncells, 3))
    st_ = TracerState.from_array(Y)
    exact = sum(Fraction(float(a)) * Fraction(float(v)) + Fraction(float(b)) * Fraction(float(v))
                for a, b, v in zip(Y[:, 0], Y[:, 1], grid.volume))
    assert math.isclose(total_mass(st_, grid), float(exact), rel_tol=1e-12, abs_tol=1e-14)


def test_total_mass_shape_mismatch(grid):
    with pytest.raises(GridError):
        total_mass(TracerState(np.ones(3), np.ones(3), np.ones(3)), grid)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 2**31))
def test_total_mass_linear(a, b, seed):
    from ndopfe.grid import desk_grid
    g = desk_grid()
    r = np.random.default_rng(seed)
    X, Y = r.normal(size=(g.ncells, 3)), r.normal(size=(g.ncells, 3))
    lhs = total_mass(TracerState.from_array(a * X + b * Y), g)
    rhs = a * total_mass(TracerState.from_array(X), g) + b * total_mass(TracerState.from_array(Y), g)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(a) + abs(b)) * 10


def test_uniform_state(grid, small_grid):
    z = uniform_state_with_mass(0.0, grid)
    assert np.all(z.y1 == 0) and np.all(z.y2 == 0)
    s = uniform_state_with_mass(2.5, small_grid)
    assert math.isclose(total_mass(s, small_grid), 2.5, rel_tol=1e-12)
    one = uniform_state_with_mass(1.0, grid)
    assert np.allclose(one.y1, 1.0, rtol=1e-14)
    with pytest.raises(ValueError):
        uniform_state_with_mass(-1.0, grid)


def test_volume_norm(grid):
    assert math.isclose(volume_norm(np.ones(grid.ncells), grid), 1.0, rel_tol=1e-14)


def test_grid_file_round_trip(small_grid, tmp_path):
    write_grid(small_grid, tmp_path / "g.txt")
    g2 = read_grid(tmp_path / "g.txt")
    for name in ("interfaces", "lon", "lat", "area", "depth", "volume"):
        assert np.array_equal(getattr(g2, name), getattr(small_grid, name))


def test_state_check(grid):
    bad = TracerState(np.full(grid.ncells, np.nan), np.zeros(grid.ncells), np.zeros(grid.ncells))
    with pytest.raises(GridError):
        bad.check(grid)

import subprocess
import sys

import numpy as np
import pytest

from ndopfe.cli import main
from ndopfe.io import fmt, read_csv, read_snapshot, write_csv, write_snapshot
from ndopfe.grid import uniform_state_with_mass
from ndopfe.params import ConfigError, ParameterSet
from ndopfe.scenario import load_scenario, parse_scenario


def test_fmt_17_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(3) == "3" and fmt(True) == "1" and fmt(float("nan")) == "nan"


def test_csv_round_trip(tmp_path, grid, rng):
    s = uniform_state_with_mass(1.0, grid)
    s.y2[:] = rng.normal(size=grid.ncells)
    write_snapshot(tmp_path / "s.csv", s)
    back = read_snapshot(tmp_path / "s.csv", grid)
    assert np.array_equal(back.as_array(), s.as_array())
    write_csv(tmp_path / "x.csv", ("a", "b"), [(1, 2.5)])
    h, a = read_csv(tmp_path / "x.csv")
    assert h == ["a", "b"] and a.tolist() == [[1.0, 2.5]]


def test_bundled_scenario_defaults():
    sc = load_scenario()
    assert sc.params == ParameterSet()
    assert parse_scenario(sc.to_ini()) == sc


def test_scenario_errors():
    with pytest.raises(ConfigError) as e:
        parse_scenario("[solver]\ndt = 0.5\nbogus = 1\n")
    assert e.value.key == "bogus" and e.value.line == 3
    with pytest.raises(ConfigError) as e:
        parse_scenario("[parameters]\n\nnu = 1.5\n")
    assert e.value.key == "nu" and e.value.line == 3
    with pytest.raises(ConfigError):
        parse_scenario("[weather]\nrain = 1\n")
    with pytest.raises(ConfigError):
        parse_scenario("[solver]\nimplicit = maybe\n")


def test_kernels_check(tmp_path):
    assert main(["kernels-check", "--out", str(tmp_path)]) == 0
    for f in ("free_iron.csv", "free_iron_zoom.csv", "uptake_shapes.csv", "diagnostics.csv",
              "resolved.ini", "VERSION"):
        assert (tmp_path / f).exists()
    h, a = read_csv(tmp_path / "free_iron.csv")
    assert h == ["y3", "fe_prime", "fe_f"] and a.shape == (601, 3)


def test_negative_mass(tmp_path, capsys):
    assert main(["spin-up", "--mass", "-1", "--out", str(tmp_path / "x")]) == 2
    assert "mass must be positive" in capsys.readouterr().err


def test_unknown_subcommand():
    r = subprocess.run([sys.executable, "-m", "ndopfe.cli", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[solver]\ntypo = 3\n")
    assert main(["spin-up", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_cfl_violation_exit_2(tmp_path):
    assert main(["run-transient", "--dt", "30", "--out", str(tmp_path)]) == 2


def test_spin_up_and_rerun_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["spin-up", "--mass", "1.0", "--out", str(a)]) == 0
    assert main(["spin-up", "--mass", "1.0", "--out", str(b)]) == 0
    for f in ("diagnostics.csv", "cycle_state.csv", "resolved.ini", "VERSION"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    h, d = read_csv(a / "diagnostics.csv")
    assert h == ["cycle_or_step", "time", "mass_P", "mass_Fe", "residual"]
    assert d[-1, 4] <= 1e-6


def test_spin_up_nonconvergence_exit_3(tmp_path):
    assert main(["spin-up", "--max-cycles", "2", "--out", str(tmp_path)]) == 3


def test_transient_and_stationary(tmp_path):
    assert main(["run-transient", "--T-end", "30", "--out", str(tmp_path / "t")]) == 0
    h, d = read_csv(tmp_path / "t" / "diagnostics.csv")
    assert d.shape[0] == 61
    assert main(["stationary", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "stationary_state.csv").exists()


def test_collide(tmp_path):
    assert main(["collide", "--out", str(tmp_path)]) == 0
    h, a = read_csv(tmp_path / "collision.csv")
    assert h == ["x3", "I", "y1_star", "G1", "G2", "gap"]
    ok = np.isfinite(a[:, 2])
    assert ok.any() and np.nanmax(a[ok, 5]) <= 1e-12


def test_gen_circulation(tmp_path):
    from ndopfe.grid import read_grid
    from ndopfe.transport import read_operator

    assert main(["gen-circulation", "--out", str(tmp_path)]) == 0
    g = read_grid(tmp_path / "grid.txt")
    op = read_operator(tmp_path / "operator")
    assert op.ncells == g.ncells and op.n_snapshots == 12
    cfg = tmp_path / "file.ini"
    cfg.write_text("[grid]\nkind = file\npath = grid.txt\n[transport]\nkind = file\npath = operator\n")
    assert main(["run-transient", "--config", str(cfg), "--T-end", "5", "--out", str(tmp_path / "r")]) == 0


def test_identify_small(tmp_path):
    rc = main(["identify", "--starts", "1", "--budget", "30", "--out", str(tmp_path)])
    assert rc in (0, 3)
    for f in ("recovery.csv", "scatter.csv", "summary.txt", "diagnostics.csv"):
        assert (tmp_path / f).exists()

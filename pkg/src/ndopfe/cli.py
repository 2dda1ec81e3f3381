"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 non-convergence, 4 runtime
failure.  ``NDOPFE_THREADS`` caps the worker threads of the numerical
libraries (set before they are imported).
"""
from __future__ import annotations

import os

_threads = os.environ.get("NDOPFE_THREADS")
if _threads:
    for _var in ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import logging  # noqa: E402
import platform  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .grid import GridError, uniform_state_with_mass, write_grid  # noqa: E402
from .io import DIAGNOSTICS_HEADER, write_csv, write_snapshot  # noqa: E402
from .params import ConfigError, IdentificationSubset  # noqa: E402
from .scenario import Scenario, load_scenario  # noqa: E402
from .transport import CFLError, write_operator  # noqa: E402

log = logging.getLogger("ndopfe")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_RUNTIME = 0, 2, 3, 4


class NotConverged(Exception):
    pass


# -- helpers --------------------------------------------------------------------
def _positive_mass(m: float) -> float:
    if not m >= 0:
        raise ConfigError("mass must be positive", key="mass")
    return m


def version_stamp() -> str:
    import numba
    import scipy

    return (f"ndopfe {__version__}\npython {platform.python_version()}\nnumpy {np.__version__}\n"
            f"scipy {scipy.__version__}\nnumba {numba.__version__}\n")


def _prepare(sc: Scenario, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.ini").write_text(sc.to_ini())
    (out / "VERSION").write_text(version_stamp())
    return out


def _diagnostics(out: Path, diag) -> None:
    write_csv(out / "diagnostics.csv", DIAGNOSTICS_HEADER, diag.rows())


# -- subcommands ------------------------------------------------------------------
def cmd_run_transient(sc: Scenario, args, out: Path) -> int:
    from .solvers import run_transient

    mass = _positive_mass(sc.solver.mass)
    sim = sc.simulator()
    state, diag = run_transient(sim, uniform_state_with_mass(mass, sim.grid), sc.solver.T_end)
    _diagnostics(out, diag)
    write_snapshot(out / "final_state.csv", state)
    log.info("%d steps, relative mass drift %.3e", diag.steps, diag.mass_drift)
    return EXIT_OK


def cmd_spin_up(sc: Scenario, args, out: Path) -> int:
    from .solvers import spinup_periodic

    s = sc.solver
    mass = _positive_mass(s.mass)
    res = spinup_periodic(sc.simulator(), mass, s.tol, s.max_cycles, anderson=s.anderson)
    _diagnostics(out, res.diagnostics)
    write_snapshot(out / "cycle_state.csv", res.state)
    d = res.diagnostics
    log.info("%d cycles, final residual %.3e%s", d.cycles, d.periodic_residuals[-1],
             " (non-monotone tail)" if d.nonmonotone_tail else "")
    if not d.converged:
        raise NotConverged(f"spin-up not converged within {s.max_cycles} cycles")
    return EXIT_OK


def cmd_stationary(sc: Scenario, args, out: Path) -> int:
    from .solvers import solve_stationary

    s = sc.solver
    mass = _positive_mass(s.mass)
    res = solve_stationary(sc.simulator(), mass, s.stationary_tol, s.max_iters, s.pseudo_dt)
    _diagnostics(out, res.diagnostics)
    write_snapshot(out / "stationary_state.csv", res.state)
    d = res.diagnostics
    log.info("%d iterations, final residual %.3e", d.cycles, d.stationary_residuals[-1])
    if not d.converged:
        raise NotConverged(f"stationary solve not converged within {s.max_iters} iterations")
    return EXIT_OK


def cmd_identify(sc: Scenario, args, out: Path) -> int:
    from .identifiability import identify, misfit_curvature, synth_observations

    i = sc.identify
    mass = _positive_mass(sc.solver.mass)
    fixed = {k: v for k, v in (("K_I", i.K_I), ("K_W", i.K_W)) if v is not None}
    subset = IdentificationSubset.parse(i.subset, **fixed)
    sim = sc.simulator(dt=i.dt)
    obs = synth_observations(sc.params, sim, mass, tol=i.tol, max_cycles=i.max_cycles, anderson=i.anderson,
                             noise=i.noise, seed=i.noise_seed)
    _diagnostics(out, obs.diagnostics)
    rep = identify(obs, subset, i.starts, i.budget, seed=i.seed, xatol=i.xatol)
    write_csv(out / "recovery.csv", rep.header(), rep.rows())
    write_csv(out / "scatter.csv", ("restart", "converged", "misfit", *rep.scatter_names()),
              ([r.index, int(r.converged), r.misfit, *(rep.scatter()[r.index])] for r in rep.restarts))
    (out / "summary.txt").write_text(rep.summary() + "\n")
    if args.curvature:
        best = sc.params.replace(**rep.estimate)
        w, V = misfit_curvature(obs, best, rep.names)
        write_csv(out / "curvature.csv", ("eigenvalue", *rep.names), ([w[k], *V[:, k]] for k in range(len(w))))
    print(rep.summary())
    if not obs.converged:
        raise NotConverged("spin-up of the observations did not converge")
    if not any(r.converged for r in rep.restarts):
        raise NotConverged("no restart converged")
    return EXIT_OK


def cmd_collide(sc: Scenario, args, out: Path) -> int:
    from .identifiability import collision_profile, make_collision_pair
    from .kernels import uptake_G

    pair = make_collision_pair(sc.params, args.ratio, args.K_P2, args.K_I2, args.K_W2)
    x3 = np.linspace(0.0, args.depth, args.n)
    I = np.full_like(x3, args.irradiance)
    y = collision_profile(pair, I, x3)
    G1 = np.where(np.isfinite(y), uptake_G(np.nan_to_num(y), args.y3, I, x3, pair.u1), np.nan)
    G2 = np.where(np.isfinite(y), uptake_G(np.nan_to_num(y), args.y3, I, x3, pair.u2), np.nan)
    gap = np.abs(G1 - G2)
    write_csv(out / "collision.csv", ("x3", "I", "y1_star", "G1", "G2", "gap"), zip(x3, I, y, G1, G2, gap))
    c = pair.constants
    write_csv(out / "diagnostics.csv", ("quantity", "value"),
              [*((f"c{k + 1}", v) for k, v in enumerate(c)), ("constraint_gap", pair.constraint_gap()),
               ("admissible_points", int(np.sum(np.isfinite(y)))),
               ("max_gap", float(np.nanmax(gap)) if np.any(np.isfinite(gap)) else float("nan"))])
    log.info("%d admissible points of %d", int(np.sum(np.isfinite(y))), len(y))
    return EXIT_OK


def cmd_kernels_check(sc: Scenario, args, out: Path) -> int:
    from .kernels import free_iron_adjusted, free_iron_original, free_iron_radicand, saturation

    p = sc.params
    K, L = p.K_lig, p.L_T
    y3 = np.linspace(-2.0 * L, 4.0 * L, 601)
    write_csv(out / "free_iron.csv", ("y3", "fe_prime", "fe_f"),
              zip(y3, free_iron_original(y3, K, L), free_iron_adjusted(y3, K, L)))
    z = np.linspace(0.9 * L, 1.1 * L, 201)
    write_csv(out / "free_iron_zoom.csv", ("y3", "fe_prime", "fe_f"),
              zip(z, free_iron_original(z, K, L), free_iron_adjusted(z, K, L)))
    y1 = np.linspace(0.0, 10.0, 501)
    write_csv(out / "uptake_shapes.csv", ("y1", "saturation", "arctan"),
              zip(y1, saturation(y1, 1.0), args.beta_arc * np.arctan(y1)))

    neg = np.linspace(-10.0, 0.0, 10000)
    grid = np.linspace(-10.0, 10.0, 10000)
    fe = free_iron_original(grid, K, L)
    checks = [
        ("fe_prime_at_zero", float(free_iron_original(0.0, K, L)), free_iron_original(0.0, K, L) == 0.0),
        ("min_radicand_margin", float(np.min(free_iron_radicand(neg, K, L)) - (L + 1 / K) ** 2 / 4),
         bool(np.all(free_iron_radicand(neg, K, L) >= (L + 1 / K) ** 2 / 4))),
        ("min_fe_prime_increment", float(np.min(np.diff(fe))), bool(np.all(np.diff(fe) > 0))),
        ("fe_f_jump_at_L_T", float(abs(free_iron_adjusted(L * (1 + 1e-15), K, L) - free_iron_adjusted(L, K, L))),
         abs(free_iron_adjusted(L * (1 + 1e-15), K, L) - free_iron_adjusted(L, K, L)) <= 1e-14),
    ]
    write_csv(out / "diagnostics.csv", ("check", "value", "passed"), checks)
    failed = [name for name, _, ok in checks if not ok]
    if failed:
        log.error("kernel checks failed: %s", ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_gen_circulation(sc: Scenario, args, out: Path) -> int:
    g = sc.build_grid()
    op = sc.build_transport(g)
    write_grid(g, out / "grid.txt")
    write_operator(op, out / "operator")
    rows = []
    for m in range(op.n_snapshots):
        A = op.matrix(m)
        colsum = np.abs(A.T @ op.volumes) / np.max(op.volumes)
        rows.append((m, float(op.times[m]), float(np.max(colsum)), float(1.0 / np.max(np.abs(A.diagonal())))
                     if A.nnz else float("inf")))
    write_csv(out / "diagnostics.csv", ("snapshot", "time", "max_mass_leak", "max_explicit_dt"), rows)
    return EXIT_OK


COMMANDS = {
    "run-transient": cmd_run_transient,
    "spin-up": cmd_spin_up,
    "stationary": cmd_stationary,
    "identify": cmd_identify,
    "collide": cmd_collide,
    "kernels-check": cmd_kernels_check,
    "gen-circulation": cmd_gen_circulation,
}


# -- parser ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ndopfe", description="N-DOP-Fe ecosystem simulator and identifiability lab")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario .ini (default: bundled desk scenario)")
    common.add_argument("--out", type=Path, help="output directory (overrides [output] directory)")
    common.add_argument("--dt", type=float, help="time step in days")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("run-transient", parents=[common], help="integrate from a uniform state")
    p.add_argument("--mass", type=float)
    p.add_argument("--T-end", dest="T_end", type=float, help="days")

    p = sub.add_parser("spin-up", parents=[common], help="spin up to a steady annual cycle")
    p.add_argument("--mass", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-cycles", dest="max_cycles", type=int)
    p.add_argument("--anderson", type=int, help="Anderson mixing depth (0 = plain spin-up)")

    p = sub.add_parser("stationary", parents=[common], help="stationary solution under annual-mean forcing")
    p.add_argument("--mass", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)

    p = sub.add_parser("identify", parents=[common], help="twin-experiment parameter identification")
    p.add_argument("--subset", choices=("Full7", "Reduced5"))
    p.add_argument("--starts", type=int)
    p.add_argument("--budget", type=int, help="forward runs per restart")
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int, help="seed of the starting points")
    p.add_argument("--noise-seed", dest="noise_seed", type=int)
    p.add_argument("--curvature", action="store_true", help="also write misfit curvature at the best estimate")

    p = sub.add_parser("collide", parents=[common], help="tabulate the uptake collision profile of a pair")
    p.add_argument("--ratio", type=float, default=1.25, help="alpha1 / alpha2")
    p.add_argument("--K-P2", dest="K_P2", type=float, default=0.3)
    p.add_argument("--K-I2", dest="K_I2", type=float, default=20.0)
    p.add_argument("--K-W2", dest="K_W2", type=float, default=0.03)
    p.add_argument("--irradiance", type=float, default=100.0)
    p.add_argument("--depth", type=float, default=120.0)
    p.add_argument("--y3", type=float, default=1.0)
    p.add_argument("--n", type=int, default=121)

    p = sub.add_parser("kernels-check", parents=[common], help="kernel certificates and curve tables")
    p.add_argument("--beta-arc", dest="beta_arc", type=float, default=0.6)

    sub.add_parser("gen-circulation", parents=[common], help="write the synthetic circulation as operator files")
    return ap


def _apply_overrides(sc: Scenario, args) -> Scenario:
    solver = {k: getattr(args, k) for k in ("mass", "T_end", "tol", "max_cycles", "anderson", "max_iters")
              if getattr(args, k, None) is not None}
    if args.command == "stationary" and "tol" in solver:
        solver["stationary_tol"] = solver.pop("tol")
    if args.dt is not None:
        solver["dt"] = args.dt
    if solver:
        sc = sc.replace("solver", **solver)
    ident = {k: getattr(args, k) for k in ("subset", "starts", "budget", "noise", "seed", "noise_seed")
             if getattr(args, k, None) is not None}
    if args.command == "identify" and args.dt is not None:
        ident["dt"] = args.dt
    if ident:
        sc = sc.replace("identify", **ident)
    return sc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = _apply_overrides(load_scenario(args.config), args)
        if getattr(args, "mass", None) is not None:
            _positive_mass(args.mass)
        out = _prepare(sc, args.out or Path(sc.output.directory))
        return COMMANDS[args.command](sc, args, out)
    except (ConfigError, CFLError, GridError, ValueError, KeyError) as exc:
        print(f"ndopfe: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConverged as exc:
        print(f"ndopfe: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except Exception as exc:  # runtime failure, including SolverError
        print(f"ndopfe: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

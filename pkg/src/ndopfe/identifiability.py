"""Parameter identifiability: uptake collisions, kernel checks and twin experiments.

Two parameter sets that differ only in (alpha, K_P, K_I, K_W) give the
same uptake wherever phosphate sits on a closed-form profile
``y1*(I, x3)``; :func:`collision_profile` evaluates it and
:func:`verify_collision` checks the uptake gap on it.  The scalar
``*_from_*`` functions invert single reaction terms, which is how the
uniqueness of lambda, nu and b reduces to one equation each.
:func:`synth_observations` and :func:`identify` run twin experiments.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .grid import H_BAR_E
from .kernels import uptake_G
from .params import IdentificationSubset, ParameterSet, validate
from .solvers import RunDiagnostics, SolverError, Simulator, spinup_periodic

__all__ = [
    "CollisionPair",
    "make_collision_pair",
    "collision_profile",
    "verify_collision",
    "admissible_samples",
    "lambda_from_aphotic_r2",
    "nu_from_euphotic_r2",
    "b_from_bottom_deposit",
    "ObservationSet",
    "synth_observations",
    "SearchBox",
    "RestartResult",
    "RecoveryReport",
    "Misfit",
    "identify",
    "misfit_curvature",
]

log = logging.getLogger(__name__)

DEPENDENT = ("alpha", "K_P", "K_I", "K_W")
DENOMINATOR_TOL = 1e-12


# -- collisions ---------------------------------------------------------------
@dataclass(frozen=True)
class CollisionPair:
    """Two parameter sets that differ at most in alpha, K_P, K_I and K_W."""

    u1: ParameterSet
    u2: ParameterSet

    def __post_init__(self):
        a, b = self.u1.as_dict(), self.u2.as_dict()
        moved = [k for k in a if a[k] != b[k] and k not in DEPENDENT]
        if moved:
            raise ValueError(f"collision pair may only differ in {DEPENDENT}, not {moved}")

    @property
    def C(self) -> float:
        return self.u1.alpha / self.u2.alpha

    @property
    def constants(self) -> tuple[float, ...]:
        """(c1, ..., c8)."""
        u1, u2, C = self.u1, self.u2, self.C
        return (u1.K_P - C * u2.K_P, u1.K_P * u1.K_I, C * u2.K_P * u2.K_I, C - 1.0,
                u1.K_I, C * u2.K_I, u1.K_W, u2.K_W)

    def constraint_gap(self) -> float:
        """|c1 - (c2/c5 - (c4 + 1) c3/c6)|; zero up to round-off by construction."""
        c1, c2, c3, c4, c5, c6, _, _ = self.constants
        return abs(c1 - (c2 / c5 - (c4 + 1.0) * c3 / c6))


def make_collision_pair(u1: ParameterSet, C: float, K_P2: float, K_I2: float, K_W2: float) -> CollisionPair:
    """Pair from ``u1`` and the ratio ``C = alpha1 / alpha2`` plus the second set's constants."""
    if C <= 0:
        raise ValueError("C must be positive")
    return CollisionPair(u1, u1.replace(alpha=u1.alpha / C, K_P=K_P2, K_I=K_I2, K_W=K_W2))


def collision_profile(pair: CollisionPair, I, x3):
    """Phosphate value ``|y1|`` at which both sets of ``pair`` give equal uptake.

    Returns None (or NaN entries for array input) where the denominator
    vanishes within 1e-12 or the value is not positive.
    """
    c1, c2, c3, c4, c5, c6, c7, c8 = pair.constants
    I = np.asarray(I, dtype=float)
    x3 = np.asarray(x3, dtype=float)
    e7, e8 = np.exp(x3 * c7), np.exp(x3 * c8)
    num = c1 * I + c2 * e7 - c3 * e8
    den = c4 * I - c5 * e7 + c6 * e8
    with np.errstate(divide="ignore", invalid="ignore"):
        y = num / den
    bad = (np.abs(den) <= DENOMINATOR_TOL) | ~(y > 0) | ~np.isfinite(y)
    if y.ndim == 0:
        return None if bad else float(y)
    return np.where(bad, np.nan, y)


def _gap(pair: CollisionPair, y1, I, x3, y3: float) -> np.ndarray:
    return np.abs(uptake_G(y1, y3, I, x3, pair.u1) - uptake_G(y1, y3, I, x3, pair.u2))


def verify_collision(pair: CollisionPair, samples, y3: float = 1.0) -> float:
    """Largest uptake gap between the two sets on the collision profile.

    ``samples`` is a sequence of (I, x3).  Inadmissible samples are skipped;
    ``y3`` (shared by both sets) fixes the iron factor.
    """
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    y = collision_profile(pair, s[:, 0], s[:, 1])
    ok = np.isfinite(y)
    if not np.any(ok):
        raise ValueError("no admissible sample on the collision profile")
    return float(np.max(_gap(pair, y[ok], s[ok, 0], s[ok, 1], y3)))


def admissible_samples(pair: CollisionPair, n: int, rng: np.random.Generator,
                       I_range=(1.0, 300.0), x3_range=(0.0, H_BAR_E), max_draws: int = 100000) -> np.ndarray:
    """Draw ``n`` (I, x3) points where the profile is admissible."""
    out = []
    draws = 0
    while len(out) < n and draws < max_draws:
        I = rng.uniform(*I_range, size=n)
        x3 = rng.uniform(*x3_range, size=n)
        draws += n
        y = collision_profile(pair, I, x3)
        out.extend(zip(I[np.isfinite(y)], x3[np.isfinite(y)]))
    if len(out) < n:
        raise ValueError("collision profile admissible on too few samples")
    return np.array(out[:n])


# -- single-term inversions ----------------------------------------------------
def lambda_from_aphotic_r2(r2, y2):
    """Aphotic DOP tendency is -lambda * y2, so lambda = -r2 / y2 (y2 != 0)."""
    if np.any(np.asarray(y2) == 0):
        raise ValueError("y2 must be nonzero")
    return -np.asarray(r2) / np.asarray(y2)


def nu_from_euphotic_r2(r2, y2, G, lam):
    """Euphotic DOP tendency is -lambda y2 + nu G, so nu = (r2 + lambda y2) / G."""
    if np.any(np.asarray(G) == 0):
        raise ValueError("uptake must be nonzero")
    return (np.asarray(r2) + lam * np.asarray(y2)) / np.asarray(G)


def b_from_bottom_deposit(deposit, export, h, h_bar_e: float = H_BAR_E):
    """Bottom deposit is export * (h / h_bar_e)^-b, so b = -ln(deposit / export) / ln(h / h_bar_e)."""
    q = np.asarray(h, dtype=float) / h_bar_e
    if np.any(q <= 1) or np.any(np.asarray(export) == 0):
        raise ValueError("needs h > h_bar_e and nonzero export")
    return -np.log(np.asarray(deposit) / np.asarray(export)) / np.log(q)


# -- twin experiments -----------------------------------------------------------
@dataclass
class ObservationSet:
    """Monthly-mean y1, y2 fields of a periodic cycle plus the settings that made them.

    ``means`` has shape (months, ncells, 2).  The spin-up settings are kept
    so forward runs inside :func:`identify` are computed the same way.
    """

    means: np.ndarray
    sim: Simulator
    mass: float
    truth: ParameterSet | None = None
    noise: float = 0.0
    seed: int | None = None
    converged: bool = True
    tol: float = 1e-10
    max_cycles: int = 400
    anderson: int = 5
    diagnostics: RunDiagnostics | None = None

    @property
    def months(self) -> int:
        return self.means.shape[0]


def synth_observations(truth: ParameterSet, sim: Simulator, mass: float = 1.0, *, months: int = 12,
                       tol: float = 1e-10, max_cycles: int = 400, anderson: int = 5,
                       noise: float = 0.0, seed: int | None = None) -> ObservationSet:
    """Twin observations: monthly means of the periodic cycle of ``truth``.

    ``noise`` > 0 adds seeded Gaussian noise of that standard deviation.
    Non-convergence of the spin-up is carried in ``converged``.
    """
    s = sim.with_params(truth)
    res = spinup_periodic(s, mass, tol, max_cycles, monthly=months, anderson=anderson)
    means = res.monthly_means
    if noise > 0:
        rng = np.random.default_rng(seed)
        means = means + noise * rng.standard_normal(means.shape)
    return ObservationSet(means, sim, mass, truth, noise, seed, res.diagnostics.converged,
                          tol, max_cycles, anderson, res.diagnostics)


class Misfit:
    """Volume-weighted sum of squares between forward cycle means and observations.

    Each forward spin-up starts from the previous evaluation's cycle (the
    first one from the uniform state, as the observations were made), so
    neighbouring simplex points cost only a few years.  Invalid parameters
    and failed runs score +inf.
    """

    def __init__(self, obs: ObservationSet):
        self.obs = obs
        self.w = obs.sim.grid.volume
        self.evaluations = 0
        self.failures = 0
        self.reset()

    def reset(self) -> None:
        self._warm = None

    def __call__(self, p: ParameterSet) -> float:
        self.evaluations += 1
        if not validate(p).ok:
            self.failures += 1
            return math.inf
        o = self.obs
        try:
            with np.errstate(all="ignore"):
                res = spinup_periodic(o.sim.with_params(p), o.mass, o.tol, o.max_cycles, y0=self._warm,
                                      monthly=o.months, anderson=o.anderson)
        except (SolverError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            log.debug("forward run failed: %s", exc)
            self.failures += 1
            self._warm = None
            return math.inf
        self._warm = res.state
        d = res.monthly_means - o.means
        val = float(np.einsum("mic,mic,i->", d, d, self.w))
        return val if math.isfinite(val) else math.inf


@dataclass(frozen=True)
class SearchBox:
    """Log-scaled search bounds; optimization runs in the unit cube."""

    bounds: tuple[tuple[str, float, float], ...] = (
        ("lambda", 3e-4, 1e-2),
        ("alpha", 1e-3, 3e-2),
        ("K_P", 0.05, 5.0),
        ("K_I", 3.0, 300.0),
        ("K_W", 0.005, 0.08),
        ("b", 0.3, 2.0),
        ("nu", 0.3, 0.95),
    )

    def limits(self, names) -> tuple[np.ndarray, np.ndarray]:
        d = {k: (a, b) for k, a, b in self.bounds}
        missing = [k for k in names if k not in d]
        if missing:
            raise KeyError(f"no search bounds for {missing}")
        lo = np.log([d[k][0] for k in names])
        hi = np.log([d[k][1] for k in names])
        return lo, hi

    def to_params(self, u, names, base: ParameterSet) -> ParameterSet:
        lo, hi = self.limits(names)
        v = np.exp(lo + np.clip(u, 0.0, 1.0) * (hi - lo))
        return base.replace(**{k: float(x) for k, x in zip(names, v)})

    def to_unit(self, p: ParameterSet, names) -> np.ndarray:
        lo, hi = self.limits(names)
        return (np.log([p.get(k) for k in names]) - lo) / (hi - lo)


@dataclass
class RestartResult:
    index: int
    start: dict[str, float]
    estimate: dict[str, float]
    misfit: float
    nfev: int
    nit: int
    converged: bool
    message: str = ""
    wall_time: float = 0.0


@dataclass
class RecoveryReport:
    """Outcome of a multi-start identification."""

    subset: IdentificationSubset
    names: tuple[str, ...]
    truth: dict[str, float] | None
    restarts: list[RestartResult] = field(default_factory=list)

    @property
    def best(self) -> RestartResult:
        return min(self.restarts, key=lambda r: (r.misfit, r.index))

    @property
    def estimate(self) -> dict[str, float]:
        return self.best.estimate

    def relative_errors(self, r: RestartResult | None = None) -> dict[str, float]:
        if self.truth is None:
            raise ValueError("relative errors need the true parameters")
        r = r or self.best
        return {k: abs(r.estimate[k] - self.truth[k]) / abs(self.truth[k]) for k in self.names}

    def recovered(self, r: RestartResult, names=None, rtol: float = 0.01) -> bool:
        err = self.relative_errors(r)
        return all(err[k] <= rtol for k in (names or self.names))

    def count_recovered(self, names=None, rtol: float = 0.01, converged_only: bool = False) -> int:
        return sum(self.recovered(r, names, rtol) for r in self.restarts
                   if r.converged or not converged_only)

    def scatter_names(self) -> tuple[str, ...]:
        """Free parameters among the dependent group (alpha, K_P, K_I, K_W)."""
        return tuple(k for k in DEPENDENT if k in self.names)

    def scatter(self, names=None) -> np.ndarray:
        """Estimates of ``names`` over all restarts, one row per restart."""
        names = self.scatter_names() if names is None else names
        return np.array([[r.estimate[k] for k in names] for r in self.restarts])

    def header(self) -> list[str]:
        cols = ["restart", "converged", "nfev", "nit", "misfit"]
        for k in self.names:
            cols += [f"{k}_start", f"{k}_estimate", f"{k}_rel_error"]
        return cols

    def rows(self):
        for r in self.restarts:
            err = self.relative_errors(r) if self.truth is not None else {}
            row = [r.index, int(r.converged), r.nfev, r.nit, r.misfit]
            for k in self.names:
                row += [r.start[k], r.estimate[k], err.get(k, math.nan)]
            yield row

    def summary(self, rtol: float = 0.01) -> str:
        b = self.best
        lines = [f"subset {self.subset.mode.value}: {len(self.restarts)} restarts, "
                 f"{sum(r.converged for r in self.restarts)} converged",
                 f"best restart {b.index}: misfit {b.misfit:.3e}, {b.nfev} forward runs"]
        for k in self.names:
            t = "" if self.truth is None else f"  truth {self.truth[k]:.6g}  rel.err {self.relative_errors(b)[k]:.2e}"
            lines.append(f"  {k:7s} estimate {b.estimate[k]:.6g}{t}")
        if self.truth is not None:
            lines.append(f"restarts within {rtol:.0%} on all free parameters: {self.count_recovered(rtol=rtol)}")
            spread = self.scatter([k for k in DEPENDENT if k in self.names])
            if spread.size:
                rel = spread.std(axis=0) / np.abs(spread.mean(axis=0))
                names = [k for k in DEPENDENT if k in self.names]
                lines.append("restart spread (std/mean): " + ", ".join(f"{k} {v:.2e}" for k, v in zip(names, rel)))
        return "\n".join(lines)


def identify(obs: ObservationSet, subset: IdentificationSubset, starts: int = 20, budget: int = 500, *,
             seed: int = 0, base: ParameterSet | None = None, box: SearchBox | None = None,
             xatol: float = 1e-5, fatol: float = 1e-16, chunk: int = 1000,
             x0: list[ParameterSet] | None = None) -> RecoveryReport:
    """Bounded Nelder-Mead from ``starts`` random points of the search box.

    Parameters outside the subset are taken from ``base`` (default: the
    observations' truth).  ``budget`` caps forward runs per restart; a
    restart counts as converged when a freshly built simplex around the
    incumbent meets ``xatol`` (unit-cube coordinates) and ``fatol`` without
    moving it.  The simplex is rebuilt whenever a pass ends or has used
    ``chunk`` runs, which frees simplices collapsed onto a bound.  ``x0``
    replaces the random starting points.
    """
    base = base or obs.truth
    if base is None:
        raise ValueError("base parameters required when the observations carry no truth")
    base = subset.pinned(base)
    box = box or SearchBox()
    names = subset.free_names
    rng = np.random.default_rng(seed)
    if x0 is not None:
        points = [box.to_unit(p, names) for p in x0]
    else:
        points = [rng.uniform(0.0, 1.0, len(names)) for _ in range(starts)]
    truth = None if obs.truth is None else {k: obs.truth.get(k) for k in names}
    report = RecoveryReport(subset, names, truth)
    misfit = Misfit(obs)

    def f(u):
        return misfit(box.to_params(u, names, base))

    for i, u0 in enumerate(points):
        t0 = time.perf_counter()
        misfit.reset()
        u, fu, nfev, nit, ok, msg = _simplex_search(f, np.asarray(u0, dtype=float), budget, xatol, fatol, chunk)
        est = box.to_params(u, names, base)
        report.restarts.append(RestartResult(
            i, {k: box.to_params(u0, names, base).get(k) for k in names}, {k: est.get(k) for k in names},
            fu, nfev, nit, ok, msg, time.perf_counter() - t0))
        log.info("restart %d: misfit %.3e after %d runs (%s)", i, fu, nfev,
                 "converged" if ok else "budget exhausted")
    return report


def _initial_simplex(u: np.ndarray, size: float) -> np.ndarray:
    S = np.repeat(u[None, :], len(u) + 1, axis=0)
    for i in range(len(u)):
        S[i + 1, i] += size if u[i] + size <= 1.0 else -size
    return S


def _simplex_search(f, u0, budget, xatol, fatol, chunk, size=0.1):
    """Bounded Nelder-Mead with simplex rebuilds; returns (u, f(u), nfev, nit, converged, message)."""
    u, fu = np.clip(u0, 0.0, 1.0), math.inf
    nfev = nit = 0
    while nfev < budget:
        res = minimize(f, u, method="Nelder-Mead", bounds=[(0.0, 1.0)] * len(u),
                       options=dict(maxfev=min(chunk, budget - nfev), xatol=xatol, fatol=fatol,
                                    adaptive=True, initial_simplex=_initial_simplex(u, size)))
        nfev += int(res.nfev)
        nit += int(res.nit)
        x = np.clip(res.x, 0.0, 1.0)
        moved = float(np.max(np.abs(x - u)))
        if res.fun <= fu:
            u, fu = x, float(res.fun)
        if res.success and moved <= xatol:
            return u, fu, nfev, nit, True, "converged"
        size = min(0.1, max(moved, 10 * xatol))
    return u, fu, nfev, nit, False, "budget exhausted"


def misfit_curvature(obs: ObservationSet, p: ParameterSet, names, box: SearchBox | None = None,
                     h: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Hessian of the misfit in unit-cube coordinates at ``p``.

    Returns its eigenvalues (ascending) and eigenvectors; near-zero
    eigenvalues mark directions the observations barely constrain.
    """
    box = box or SearchBox()
    names = tuple(names)
    m = Misfit(obs)
    u = box.to_unit(p, names)

    def f(v):
        return m(box.to_params(v, names, p))

    n = len(names)
    E = np.eye(n) * h
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            H[i, j] = H[j, i] = (f(u + E[i] + E[j]) - f(u + E[i] - E[j]) - f(u - E[i] + E[j])
                                 + f(u - E[i] - E[j])) / (4 * h * h)
    return np.linalg.eigh(H)

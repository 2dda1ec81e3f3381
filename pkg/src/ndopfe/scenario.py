"""Scenario files: INI sections resolved into a deterministic run description.

Sections and keys (every key optional, unknown keys are errors)::

    [parameters]  ParameterSet fields (see params.config_keys)
    [grid]        kind = desk | file, path
    [transport]   kind = synthetic | file, path, gyre_strength, kappa, kappa_h,
                  overturning, n_snapshots, seasonal_amplitude
    [forcing]     I0, amplitude, F_in, period, solstice, source_spread
    [solver]      dt, T_end, mass, tol, max_cycles, anderson, stationary_tol,
                  max_iters, pseudo_dt, implicit, clip, variant
    [identify]    subset, starts, budget, seed, dt, tol, max_cycles, anderson,
                  xatol, noise, noise_seed, K_I, K_W
    [output]      directory
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .forcing import Forcing
from .grid import Grid, desk_grid, read_grid
from .params import ConfigError, ParameterSet, parse_config, serialize
from .transport import TransportOperator, build_synthetic, read_operator

__all__ = ["GridSpec", "TransportSpec", "SolverSpec", "IdentifySpec", "Scenario",
           "load_scenario", "parse_scenario", "bundled_scenario_text"]


@dataclass(frozen=True)
class GridSpec:
    kind: str = "desk"
    path: str = ""


@dataclass(frozen=True)
class TransportSpec:
    kind: str = "synthetic"
    path: str = ""
    gyre_strength: float = 4.5e-5
    kappa: float = 50.0
    kappa_h: float = 1.0e-7
    overturning: float = 0.05
    n_snapshots: int = 12
    seasonal_amplitude: float = 0.3


@dataclass(frozen=True)
class ForcingSpec:
    I0: float = 150.0
    amplitude: float = 0.6
    F_in: str = "26.0"                  # one value, or one per column (comma separated)
    period: float = 360.0
    solstice: float = 180.0
    source_spread: str = "euphotic"


@dataclass(frozen=True)
class SolverSpec:
    dt: float = 0.5
    T_end: float = 360.0
    mass: float = 1.0
    tol: float = 1e-6
    max_cycles: int = 3000
    anderson: int = 0
    stationary_tol: float = 1e-8
    max_iters: int = 20000
    pseudo_dt: float = 20.0
    implicit: bool = False
    clip: bool = False
    variant: str = "adjusted"


@dataclass(frozen=True)
class IdentifySpec:
    subset: str = "Reduced5"
    starts: int = 20
    budget: int = 6000
    seed: int = 0
    dt: float = 1.0
    tol: float = 1e-10
    max_cycles: int = 400
    anderson: int = 5
    xatol: float = 1e-5
    noise: float = 0.0
    noise_seed: int = 0
    K_I: float | None = None
    K_W: float | None = None


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "run"


_SECTIONS = {
    "grid": GridSpec,
    "transport": TransportSpec,
    "forcing": ForcingSpec,
    "solver": SolverSpec,
    "identify": IdentifySpec,
    "output": OutputSpec,
}


@dataclass(frozen=True)
class Scenario:
    params: ParameterSet = field(default_factory=ParameterSet)
    grid: GridSpec = field(default_factory=GridSpec)
    transport: TransportSpec = field(default_factory=TransportSpec)
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    identify: IdentifySpec = field(default_factory=IdentifySpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    base_dir: str = "."

    def replace(self, section: str, **changes) -> "Scenario":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    # -- building -------------------------------------------------------------
    def _path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def build_grid(self) -> Grid:
        if self.grid.kind == "desk":
            return desk_grid()
        if self.grid.kind == "file":
            return read_grid(self._path(self.grid.path))
        raise ConfigError(f"unknown grid kind {self.grid.kind!r}", key="kind")

    def deposition(self):
        vals = _floats(self.forcing.F_in)
        return vals[0] if len(vals) == 1 else np.array(vals)

    def build_forcing(self) -> Forcing:
        f = self.forcing
        return Forcing(f.I0, f.amplitude, self.deposition(), f.period, f.solstice, f.source_spread)

    def build_transport(self, g: Grid) -> TransportOperator:
        t = self.transport
        if t.kind == "synthetic":
            return build_synthetic(g, t.gyre_strength, t.kappa, kappa_h=t.kappa_h, overturning=t.overturning,
                                   n_snapshots=t.n_snapshots, period=self.forcing.period,
                                   seasonal_amplitude=t.seasonal_amplitude)
        if t.kind == "file":
            return read_operator(self._path(t.path))
        raise ConfigError(f"unknown transport kind {t.kind!r}", key="kind")

    def simulator(self, dt: float | None = None):
        from .solvers import Simulator

        g = self.build_grid()
        s = self.solver
        return Simulator(g, self.build_transport(g), self.build_forcing(), self.params, s.variant,
                         s.dt if dt is None else dt, implicit=s.implicit, clip=s.clip)

    # -- text -----------------------------------------------------------------
    def to_ini(self) -> str:
        out = ["[parameters]", serialize(self.params).rstrip("\n"), ""]
        for name in _SECTIONS:
            out.append(f"[{name}]")
            for f in dataclasses.fields(getattr(self, name)):
                v = getattr(getattr(self, name), f.name)
                if v is None:
                    continue
                out.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
            out.append("")
        return "\n".join(out)


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r}", key="F_in") from None
    if not vals:
        raise ConfigError("empty value", key="F_in")
    return vals


def _convert(spec_cls, key: str, text: str, lineno: int | None):
    ftype = {f.name: f.type for f in dataclasses.fields(spec_cls)}[key]
    try:
        if "bool" in ftype:
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if "int" in ftype:
            return int(text)
        if "float" in ftype:
            return float(text)
        return text.strip()
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r}", key=key, line=lineno) from None


def parse_scenario(text: str, base_dir: str | Path = ".") -> Scenario:
    """Parse a scenario document; errors carry the key and line."""
    cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None

    lines = text.splitlines()
    section_of_line: list[str | None] = []
    current = None
    for raw in lines:
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        section_of_line.append(current)

    def line_of(section: str, key: str) -> int | None:
        for i, raw in enumerate(lines):
            if section_of_line[i] == section and raw.split("=", 1)[0].split(":", 1)[0].strip() == key:
                return i + 1
        return None

    unknown = [s for s in cp.sections() if s != "parameters" and s not in _SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")

    # parameter lines keep their absolute line numbers
    ptext = "\n".join(raw if section_of_line[i] == "parameters" and not raw.strip().startswith("[") else ""
                      for i, raw in enumerate(lines))
    sc = Scenario(params=parse_config(ptext), base_dir=str(base_dir))
    for name, spec_cls in _SECTIONS.items():
        if not cp.has_section(name):
            continue
        known = {f.name for f in dataclasses.fields(spec_cls)}
        changes = {}
        for key, val in cp.items(name):
            if key not in known:
                raise ConfigError(f"unknown key in [{name}]", key=key, line=line_of(name, key))
            changes[key] = _convert(spec_cls, key, val, line_of(name, key))
        sc = sc.replace(name, **changes)
    _check(sc)
    return sc


def _check(sc: Scenario) -> None:
    s, i = sc.solver, sc.identify
    if s.variant not in ("original", "adjusted"):
        raise ConfigError(f"variant must be original or adjusted, not {s.variant!r}", key="variant")
    if s.dt <= 0 or i.dt <= 0:
        raise ConfigError("dt must be positive", key="dt")
    if s.tol <= 0 or s.stationary_tol <= 0:
        raise ConfigError("tolerances must be positive", key="tol")
    if s.mass < 0:
        raise ConfigError("mass must be positive", key="mass")
    if sc.forcing.source_spread not in ("euphotic", "surface"):
        raise ConfigError("source_spread must be euphotic or surface", key="source_spread")
    if any(v < 0 for v in _floats(sc.forcing.F_in)):
        raise ConfigError("F_in must be nonnegative", key="F_in")
    if i.subset not in ("Full7", "Reduced5"):
        raise ConfigError("subset must be Full7 or Reduced5", key="subset")


def bundled_scenario_text() -> str:
    return resources.files("ndopfe").joinpath("data/desk.ini").read_text()


def load_scenario(path: str | Path | None = None) -> Scenario:
    """Scenario from ``path``, or the bundled desk scenario when None."""
    if path is None:
        return parse_scenario(bundled_scenario_text())
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {p}: {exc.strerror}") from None
    return parse_scenario(text, base_dir=p.parent)

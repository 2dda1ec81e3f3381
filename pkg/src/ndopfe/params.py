"""Model parameters of the N-DOP-Fe ecosystem and their identification subsets.

Units: concentrations in mmol m-3 (phosphorus units; iron in the unit in
which ``L_T`` is expressed, linked to phosphorus through ``R_Fe``), time in
days, depth in metres.

The N-DOP values below are per-day translations of a commonly used N-DOP
calibration.  The iron-cycle constants (``beta``, ``R_Fe``, ``tau``, ``k0``,
``Phi``) and the particle profile (``C_p0``, ``C_p_exp``) are
modeler-supplied placeholders, not literature values.  Every run logs the
fully resolved set.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import re
from dataclasses import dataclass, field

__all__ = [
    "ParameterSet",
    "ValidationReport",
    "IdentificationMode",
    "IdentificationSubset",
    "ConfigError",
    "validate",
    "parse_config",
    "serialize",
    "N_DOP_NAMES",
    "MODELER_SUPPLIED",
]

# config key -> attribute ("lambda" is a Python keyword)
_KEY_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}

N_DOP_NAMES = ("lambda", "alpha", "K_P", "K_I", "K_W", "b", "nu")
MODELER_SUPPLIED = ("K_F", "beta", "R_Fe", "tau", "k0", "Phi", "C_p0", "C_p_exp", "c_p_floor")


@dataclass(frozen=True)
class ParameterSet:
    """Immutable parameter vector.

    Construction does not validate; use :func:`validate`.
    """

    lam: float = 0.5 / 360.0          # DOP remineralization, 1/day
    alpha: float = 2.0 / 360.0        # maximum uptake, mmol m-3 / day
    K_P: float = 0.5                  # phosphate half saturation, mmol m-3
    K_F: float = 0.12                 # iron half saturation
    K_I: float = 30.0                 # light half saturation, W m-2
    K_W: float = 0.02                 # attenuation, 1/m
    b: float = 0.858                  # Martin exponent
    nu: float = 0.67                  # DOP fraction of uptake
    beta: float = 0.01                # iron solubility
    R_Fe: float = 0.468               # Fe:P ratio
    tau: float = 1.0
    k0: float = 1.0                   # scavenging rate, 1/day
    Phi: float = 0.58
    K_lig: float = math.exp(11.0)
    L_T: float = 1.0
    c_p_floor: float = 0.05
    C_p0: float = 1.0                 # particle concentration at the euphotic base
    C_p_exp: float = 0.858            # particle profile decay exponent

    @property
    def lambda_(self) -> float:
        return self.lam

    def get(self, key: str) -> float:
        return getattr(self, _KEY_TO_ATTR.get(key, key))

    def replace(self, **changes: float) -> "ParameterSet":
        """Copy with fields changed; accepts config keys (``lambda``) too."""
        attrs = {_KEY_TO_ATTR.get(k, k): float(v) for k, v in changes.items()}
        return dataclasses.replace(self, **attrs)

    def as_dict(self) -> dict[str, float]:
        return {key: getattr(self, f.name) for key, f in zip(config_keys(), dataclasses.fields(self))}


def config_keys() -> list[str]:
    return [_ATTR_TO_KEY.get(f.name, f.name) for f in dataclasses.fields(ParameterSet)]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _bad(x: float) -> bool:
    return not math.isfinite(x)


def validate(p: ParameterSet) -> ValidationReport:
    """Check every invariant; never raises.

    Degenerate-but-legal settings (``nu == 1``, ``alpha == 0``) are reported
    as flags: they make some parameters unidentifiable.
    """
    rep = ValidationReport()
    v = rep.violations
    for key in config_keys():
        if _bad(p.get(key)):
            v.append(f"{key} must be finite")
    if not 0.0 < p.lam < 1.0:
        v.append("lambda out of (0,1)")
    if not p.alpha > 0.0:
        v.append("alpha must be positive")
    for key in ("K_P", "K_F", "K_I", "K_W", "K_lig", "L_T", "c_p_floor"):
        if not p.get(key) > 0.0:
            v.append(f"{key} must be positive")
    if not p.b >= 0.0:
        v.append("b must be nonnegative")
    if not 0.0 < p.nu <= 1.0:
        v.append("nu out of (0,1]")
    for key in ("beta", "R_Fe", "tau", "k0", "Phi", "C_p0", "C_p_exp"):
        if not p.get(key) >= 0.0:
            v.append(f"{key} must be nonnegative")
    if p.K_lig > 0.0 and not p.L_T - 1.0 / p.K_lig >= 0.0:
        v.append("L_T - 1/K_lig must be nonnegative")

    if p.nu == 1.0:
        rep.flags.append("identifiability-degenerate: nu = 1 (no export, b arbitrary)")
    if p.alpha == 0.0:
        rep.flags.append("identifiability-degenerate: alpha = 0 (K_P, K_I, K_W arbitrary)")
    return rep


class ConfigError(ValueError):
    """Configuration problem; carries the offending key and line number."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*[=:]\s*(.*?)\s*$")


def parse_config(text: str, base: ParameterSet | None = None) -> ParameterSet:
    """Parse ``key = value`` lines into a validated :class:`ParameterSet`.

    Blank lines, ``#``/``;`` comments and a ``[parameters]`` header are
    ignored.  Missing keys keep the values of ``base`` (defaults if None).
    """
    known = set(config_keys())
    values: dict[str, float] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not stripped or stripped.lower() == "[parameters]":
            continue
        m = _LINE.match(stripped)
        if m is None:
            raise ConfigError(f"cannot parse {stripped!r}", line=lineno)
        key, txt = m.groups()
        if key not in known:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in values:
            raise ConfigError("duplicate key", key=key, line=lineno)
        try:
            values[key] = float(txt)
        except ValueError:
            raise ConfigError(f"unparsable number {txt!r}", key=key, line=lineno) from None
        lines[key] = lineno

    p = (base or ParameterSet()).replace(**values)
    rep = validate(p)
    if not rep.ok:
        msg = rep.violations[0]
        key = msg.split()[0]
        raise ConfigError(msg, key=key, line=lines.get(key))
    return p


def serialize(p: ParameterSet) -> str:
    """Canonical text form; ``parse_config(serialize(p)) == p`` exactly."""
    return "".join(f"{k} = {v!r}\n" for k, v in p.as_dict().items())


class IdentificationMode(str, enum.Enum):
    FULL7 = "Full7"
    REDUCED5 = "Reduced5"


@dataclass(frozen=True)
class IdentificationSubset:
    """Which N-DOP parameters an identification run is free to move.

    ``Reduced5`` pins ``K_I`` and ``K_W`` at ``fixed_values`` (taken from
    the starting parameter set when not given).
    """

    mode: IdentificationMode = IdentificationMode.REDUCED5
    fixed_values: tuple[tuple[str, float], ...] = ()

    @classmethod
    def parse(cls, name: str, **fixed: float) -> "IdentificationSubset":
        return cls(IdentificationMode(name), tuple(sorted(fixed.items())))

    @property
    def free_names(self) -> tuple[str, ...]:
        if self.mode is IdentificationMode.FULL7:
            return N_DOP_NAMES
        return ("lambda", "alpha", "K_P", "b", "nu")

    def pinned(self, p: ParameterSet) -> ParameterSet:
        if self.mode is IdentificationMode.FULL7 or not self.fixed_values:
            return p
        return p.replace(**dict(self.fixed_values))

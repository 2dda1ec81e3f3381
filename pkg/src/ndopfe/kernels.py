"""Biogeochemical reaction terms of the N-DOP-Fe model.

All functions are pure and accept numpy arrays or scalars.  Negative
concentrations are legal inputs; nothing is clipped here (the saturation
terms keep ``|x|`` in their denominators for exactly that reason).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .grid import H_BAR_E, Grid
from .params import ParameterSet

__all__ = [
    "Variant",
    "saturation",
    "attenuated_light",
    "uptake_G",
    "uptake_arctan",
    "free_iron_radicand",
    "free_iron_original",
    "free_iron_adjusted",
    "particle_profile",
    "scavenging",
    "scavenging_coercivity_constants",
    "martin_fraction",
    "martin_layer_weights",
    "ColumnGeometry",
    "ColumnReactionResult",
    "reaction_tendencies",
    "GridReactions",
]

Variant = Literal["original", "adjusted"]


def saturation(x, K):
    """Michaelis-Menten factor x / (|x| + K), odd in x and bounded by 1."""
    if np.any(np.asarray(K) <= 0):
        raise ValueError("half saturation constant must be positive")
    return x / (np.abs(x) + K)


def attenuated_light(I_surface, x3, K_W, in_euphotic=True):
    """Irradiance at depth ``x3``; zero outside the euphotic zone."""
    return np.where(in_euphotic, I_surface * np.exp(-x3 * K_W), 0.0)


def uptake_G(y1, y3, I_surface, x3, p: ParameterSet, in_euphotic=True):
    """Light-, phosphate- and iron-limited uptake; ``|G| <= alpha``."""
    light = attenuated_light(I_surface, x3, p.K_W, in_euphotic)
    return p.alpha * saturation(y1, p.K_P) * saturation(y3, p.K_F) * saturation(light, p.K_I)


def uptake_arctan(y1, y3, I_surface, x3, p: ParameterSet, beta_arc: float, in_euphotic=True):
    """Uptake with ``alpha * sat(y1, K_P)`` replaced by ``beta_arc * arctan(y1)``."""
    light = attenuated_light(I_surface, x3, p.K_W, in_euphotic)
    return beta_arc * np.arctan(y1) * saturation(y3, p.K_F) * saturation(light, p.K_I)


def free_iron_radicand(y3, K_lig, L_T):
    H = L_T + 1.0 / K_lig - y3
    return 0.25 * H * H + y3 / K_lig


def free_iron_original(y3, K_lig, L_T):
    """Free iron, the positive root of Fe'^2 + H Fe' - y3/K = 0, H = L_T + 1/K - y3.

    Evaluated in the cancellation-free form on each side of H = 0.
    """
    y3 = np.asarray(y3, dtype=float)
    H = L_T + 1.0 / K_lig - y3
    r = 0.25 * H * H + y3 / K_lig
    if np.any(r <= 0):
        raise FloatingPointError("free-iron radicand not positive; is L_T - 1/K_lig >= 0?")
    s = np.sqrt(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(H > 0, (y3 / K_lig) / (0.5 * H + s), s - 0.5 * H)
    return out[()] if out.ndim == 0 else out


def free_iron_adjusted(y3, K_lig, L_T):
    """Piecewise linear substitute: slope Fe'(L_T)/L_T up to L_T, slope 1 above."""
    y3 = np.asarray(y3, dtype=float)
    fl = float(free_iron_original(L_T, K_lig, L_T))
    out = np.where(y3 > L_T, y3 + fl - L_T, (fl / L_T) * y3)
    return out[()] if out.ndim == 0 else out


def free_iron_adjusted_slope(y3, K_lig, L_T):
    fl = float(free_iron_original(L_T, K_lig, L_T))
    return np.where(np.asarray(y3) > L_T, 1.0, fl / L_T)


def particle_profile(x3, p: ParameterSet, h_bar_e: float = H_BAR_E):
    """C_p(x3) = max(c_p_floor, C_p0 * (max(x3, h_bar_e)/h_bar_e)**-C_p_exp)."""
    x = np.maximum(np.asarray(x3, dtype=float), h_bar_e) / h_bar_e
    return np.maximum(p.c_p_floor, p.C_p0 * x ** (-p.C_p_exp))


def scavenging(y3, x3, p: ParameterSet, variant: Variant = "adjusted", h_bar_e: float = H_BAR_E):
    """tau * k0 * C_p(x3)**Phi * (Fe' or FeF)(y3)."""
    rate = p.tau * p.k0 * particle_profile(x3, p, h_bar_e) ** p.Phi
    if variant == "original":
        free = free_iron_original(y3, p.K_lig, p.L_T)
    elif variant == "adjusted":
        free = free_iron_adjusted(y3, p.K_lig, p.L_T)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return rate * free


def scavenging_coercivity_constants(p: ParameterSet) -> tuple[float, float]:
    """(C1, C2) with J(y) * y >= C1 * y**2 - C2 * |y| for the adjusted term."""
    fl = float(free_iron_original(p.L_T, p.K_lig, p.L_T))
    k_min = p.tau * p.k0 * p.c_p_floor ** p.Phi
    k_max = p.tau * p.k0 * max(p.c_p_floor, p.C_p0) ** p.Phi
    return k_min * min(1.0, fl / p.L_T), k_max * abs(p.L_T - fl)


def martin_fraction(h, b, h_bar_e: float = H_BAR_E):
    """Share of column export remineralized between h_bar_e and the floor h."""
    h = np.asarray(h, dtype=float)
    if np.any(h < h_bar_e):
        raise ValueError("martin_fraction needs h >= h_bar_e")
    out = 1.0 - (h / h_bar_e) ** (-b)
    return out[()] if out.ndim == 0 else out


def martin_layer_weights(z_top, z_bot, b, h_bar_e: float = H_BAR_E):
    """Per-metre remineralization weight of aphotic layers (exact antiderivative).

    ``sum(weight * dz)`` over a column telescopes to ``martin_fraction(h, b)``.
    """
    z_top = np.asarray(z_top, dtype=float)
    z_bot = np.asarray(z_bot, dtype=float)
    return ((z_top / h_bar_e) ** (-b) - (z_bot / h_bar_e) ** (-b)) / (z_bot - z_top)


@dataclass(frozen=True)
class ColumnGeometry:
    interfaces: np.ndarray       # 0 ... h
    h_bar_e: float = H_BAR_E

    @property
    def depth(self) -> float:
        return float(self.interfaces[-1])

    @property
    def dz(self) -> np.ndarray:
        return np.diff(self.interfaces)

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.interfaces[1:] + self.interfaces[:-1])

    @property
    def euphotic(self) -> np.ndarray:
        return self.mid < min(self.h_bar_e, self.depth)


@dataclass
class ColumnReactionResult:
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    export_production: float     # (1 - nu) * column uptake, per m2
    bottom_deposit: float        # per m2, into the deepest (Gamma1: deepest euphotic) cell


def reaction_tendencies(y1, y2, y3, geom: ColumnGeometry, I_surface: float, p: ParameterSet,
                        variant: Variant = "adjusted", s_fe=None) -> ColumnReactionResult:
    """Reaction tendencies of one column.

    ``s_fe`` is the iron source per layer (already spread over the
    euphotic zone); zero when omitted.
    """
    y1, y2, y3 = (np.asarray(a, dtype=float) for a in (y1, y2, y3))
    n = len(geom.dz)
    if not (y1.shape == y2.shape == y3.shape == (n,)):
        raise ValueError("column state does not match column geometry")
    dz, mid, eu = geom.dz, geom.mid, geom.euphotic
    hb = geom.h_bar_e
    G = np.where(eu, uptake_G(y1, y3, I_surface, mid, p, eu), 0.0)
    P = float(np.dot(G, dz))
    export = (1.0 - p.nu) * P
    remin = lam_y2 = p.lam * y2

    r1 = lam_y2 - G
    r2 = -remin + p.nu * G
    aph = ~eu
    if np.any(aph):
        w = martin_layer_weights(geom.interfaces[:-1][aph], geom.interfaces[1:][aph], p.b, hb)
        r1[aph] += export * w
        deposit = export * (geom.depth / hb) ** (-p.b)
    else:
        deposit = export
    r1[-1] += deposit / dz[-1]

    J = scavenging(y3, mid, p, variant, hb)
    r3 = p.R_Fe * lam_y2 - p.R_Fe * G - J
    if s_fe is not None:
        r3 = r3 + np.asarray(s_fe, dtype=float)
    return ColumnReactionResult(r1, r2, r3, export, deposit)


class GridReactions:
    """Vectorized :func:`reaction_tendencies` over every column of a grid.

    Parameter-dependent per-cell factors (light attenuation, Martin weights,
    particle rates) are precomputed once.
    """

    def __init__(self, grid: Grid, p: ParameterSet, variant: Variant = "adjusted", s_fe=None):
        if variant not in ("original", "adjusted"):
            raise ValueError(f"unknown variant {variant!r}")
        g = grid
        self.grid, self.p, self.variant = g, p, variant
        hb = g.h_bar_e
        self.eu = g.euphotic.copy()
        self.eu_idx = np.flatnonzero(self.eu)
        self.eu_col = g.cell_column[self.eu_idx]
        self.eu_dz = g.dz[self.eu_idx]
        self.light_att = np.exp(-g.z_mid[self.eu_idx] * p.K_W)

        # export distribution: r1 += export[column] * weight[cell]
        weight = np.zeros(g.ncells)
        aph = ~self.eu
        weight[aph] = martin_layer_weights(g.z_top[aph], g.z_bot[aph], p.b, hb)
        bottom = g.bottom_cell
        frac = np.where(g.gamma2, (g.depth / hb) ** (-p.b), 1.0)
        weight[bottom] += frac / g.dz[bottom]
        self.export_weight = weight
        self.scav_rate = p.tau * p.k0 * particle_profile(g.z_mid, p, hb) ** p.Phi
        self.s_fe = np.zeros(g.ncells) if s_fe is None else np.asarray(s_fe, dtype=float)
        self._fl = float(free_iron_original(p.L_T, p.K_lig, p.L_T))

    def free_iron(self, y3):
        p = self.p
        if self.variant == "original":
            return free_iron_original(y3, p.K_lig, p.L_T)
        return np.where(y3 > p.L_T, y3 + self._fl - p.L_T, (self._fl / p.L_T) * y3)

    def free_iron_slope(self, y3):
        p = self.p
        if self.variant == "adjusted":
            return np.where(y3 > p.L_T, 1.0, self._fl / p.L_T)
        fe = free_iron_original(y3, p.K_lig, p.L_T)
        # implicit differentiation of Fe'^2 + H Fe' - y3/K = 0
        H = p.L_T + 1.0 / p.K_lig - y3
        return (fe + 1.0 / p.K_lig) / (2.0 * fe + H)

    def uptake(self, Y: np.ndarray, I_col: np.ndarray) -> np.ndarray:
        """G on euphotic cells (ordered as ``eu_idx``)."""
        p = self.p
        y1 = Y[self.eu_idx, 0]
        y3 = Y[self.eu_idx, 2]
        light = I_col[self.eu_col] * self.light_att
        return p.alpha * (y1 / (np.abs(y1) + p.K_P)) * (y3 / (np.abs(y3) + p.K_F)) \
            * (light / (np.abs(light) + p.K_I))

    def tendencies(self, Y: np.ndarray, I_col: np.ndarray) -> np.ndarray:
        """Reaction tendencies R (ncells x 3) for state Y and surface insolation per column."""
        p, g = self.p, self.grid
        G = self.uptake(Y, I_col)
        P = np.bincount(self.eu_col, weights=G * self.eu_dz, minlength=g.ncolumns)
        lam_y2 = p.lam * Y[:, 1]
        R = np.empty_like(Y)
        R[:, 0] = lam_y2 + self.export_weight * ((1.0 - p.nu) * P)[g.cell_column]
        R[:, 0][self.eu_idx] -= G
        R[:, 1] = -lam_y2
        R[:, 1][self.eu_idx] += p.nu * G
        R[:, 2] = p.R_Fe * lam_y2 - self.scav_rate * self.free_iron(Y[:, 2]) + self.s_fe
        R[:, 2][self.eu_idx] -= p.R_Fe * G
        return R

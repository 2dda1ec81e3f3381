"""Compiled multi-step integrator (explicit transport, adjusted or original iron).

Mirrors :meth:`ndopfe.solvers.Simulator.step` operation for operation; the
test suite checks both paths agree to round-off.
"""
from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _weights(times, period, t):
    n = times.shape[0]
    if n == 1:
        return 0, 0, 0.0
    tt = t - period * math.floor(t / period)
    if tt < 0:
        tt += period
    m1 = np.searchsorted(times, tt, side="right")
    m0 = m1 - 1
    t0 = times[m0] if m0 >= 0 else times[n - 1] - period
    t1 = times[m1] if m1 < n else times[0] + period
    return m0 % n, m1 % n, (tt - t0) / (t1 - t0)


@numba.njit(cache=True)
def _free_iron(y, original, K_lig, L_T, fl):
    if original:
        H = L_T + 1.0 / K_lig - y
        s = math.sqrt(0.25 * H * H + y / K_lig)
        if H > 0:
            return (y / K_lig) / (0.5 * H + s)
        return s - 0.5 * H
    if y > L_T:
        return y + fl - L_T
    return (fl / L_T) * y


@numba.njit(cache=True)
def _integrate(Y, t0, nsteps, dt, indptr, indices, data, times, period,
               vol, cell_col, ncol, I0_col, coef_col, solstice, fperiod,
               eu_idx, eu_col, eu_dz, light_att, export_weight, scav_rate, s_fe,
               alpha, K_P, K_F, K_I, lam, nu, R_Fe, K_lig, L_T, fl, original,
               record_mass, masses, monthly, means, step0):
    n = Y.shape[0]
    neu = eu_idx.shape[0]
    Ys = np.empty_like(Y)
    I_col = np.empty(ncol)
    G = np.empty(neu)
    P = np.empty(ncol)
    per = nsteps // monthly if monthly > 0 else 1
    for k in range(nsteps):
        t = t0 + k * dt
        m0, m1, w = _weights(times, period, t)
        # transport
        for r in range(n):
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            for q in range(indptr[r], indptr[r + 1]):
                if w == 0.0:
                    v = data[m0, q]
                else:
                    v = (1.0 - w) * data[m0, q] + w * data[m1, q]
                c = indices[q]
                a0 += v * Y[c, 0]
                a1 += v * Y[c, 1]
                a2 += v * Y[c, 2]
            Ys[r, 0] = Y[r, 0] + dt * a0
            Ys[r, 1] = Y[r, 1] + dt * a1
            Ys[r, 2] = Y[r, 2] + dt * a2
        # insolation
        phase = math.cos(2.0 * math.pi * (t - solstice) / fperiod)
        for c in range(ncol):
            f = 1.0 + coef_col[c] * phase
            I_col[c] = I0_col[c] * (f if f > 0.0 else 0.0)
        # uptake and column export
        for c in range(ncol):
            P[c] = 0.0
        for e in range(neu):
            i = eu_idx[e]
            y1 = Ys[i, 0]
            y3 = Ys[i, 2]
            light = I_col[eu_col[e]] * light_att[e]
            G[e] = alpha * (y1 / (abs(y1) + K_P)) * (y3 / (abs(y3) + K_F)) * (light / (abs(light) + K_I))
            P[eu_col[e]] += G[e] * eu_dz[e]
        for i in range(n):
            lam_y2 = lam * Ys[i, 1]
            Y[i, 0] = Ys[i, 0] + dt * (lam_y2 + export_weight[i] * ((1.0 - nu) * P[cell_col[i]]))
            Y[i, 1] = Ys[i, 1] + dt * (-lam_y2)
            fe = _free_iron(Ys[i, 2], original, K_lig, L_T, fl)
            Y[i, 2] = Ys[i, 2] + dt * (R_Fe * lam_y2 - scav_rate[i] * fe + s_fe[i])
        for e in range(neu):
            i = eu_idx[e]
            Y[i, 0] -= dt * G[e]
            Y[i, 1] += dt * (nu * G[e])
            Y[i, 2] -= dt * (R_Fe * G[e])
        ok = True
        for i in range(n):
            if not (math.isfinite(Y[i, 0]) and math.isfinite(Y[i, 1]) and math.isfinite(Y[i, 2])):
                ok = False
        if not ok:
            return step0 + k + 1
        if record_mass:
            mp = 0.0
            mf = 0.0
            for i in range(n):
                mp += (Y[i, 0] + Y[i, 1]) * vol[i]
                mf += Y[i, 2] * vol[i]
            masses[k, 0] = mp
            masses[k, 1] = mf
        if monthly > 0:
            s = k // per
            for i in range(n):
                means[s, i, 0] += Y[i, 0]
                means[s, i, 1] += Y[i, 1]
    return 0


class FastModel:
    """Flattened arrays of a :class:`~ndopfe.solvers.Simulator` for the compiled loop."""

    def __init__(self, sim):
        g, op, f, p, rx = sim.grid, sim.transport, sim.forcing, sim.params, sim.reactions
        self.sim = sim
        self.ops = (np.ascontiguousarray(op.indptr, dtype=np.int64),
                    np.ascontiguousarray(op.indices, dtype=np.int64),
                    np.ascontiguousarray(op.data), np.ascontiguousarray(op.times), float(op.period))
        if f.frozen:
            I0_col = f.annual_mean_insolation(g)
            coef = np.zeros(g.ncolumns)
        else:
            I0_col = np.full(g.ncolumns, float(f.I0))
            coef = f.amplitude * g.latitude_fraction
        self.forcing = (np.ascontiguousarray(I0_col, dtype=float), np.ascontiguousarray(coef, dtype=float),
                        float(f.solstice), float(f.period))
        self.cells = (np.ascontiguousarray(g.volume), np.ascontiguousarray(g.cell_column, dtype=np.int64),
                      int(g.ncolumns),)
        self.bio = (np.ascontiguousarray(rx.eu_idx, dtype=np.int64), np.ascontiguousarray(rx.eu_col, dtype=np.int64),
                    np.ascontiguousarray(rx.eu_dz), np.ascontiguousarray(rx.light_att),
                    np.ascontiguousarray(rx.export_weight), np.ascontiguousarray(rx.scav_rate),
                    np.ascontiguousarray(rx.s_fe))
        self.consts = (p.alpha, p.K_P, p.K_F, p.K_I, p.lam, p.nu, p.R_Fe, p.K_lig, p.L_T, rx._fl,
                       sim.variant == "original")

    def integrate(self, Y, t0, nsteps, record_mass=False, monthly=0, step0=0):
        from .solvers import SolverError

        n = Y.shape[0]
        masses = np.empty((nsteps if record_mass else 1, 2))
        means = np.zeros((max(monthly, 1), n, 2))
        if monthly and nsteps % monthly:
            raise ValueError("nsteps must be a multiple of the number of monthly slices")
        bad = _integrate(Y, float(t0), int(nsteps), self.sim.dt, *self.ops, *self.cells, *self.forcing,
                         *self.bio, *self.consts, bool(record_mass), masses, int(monthly), means, int(step0))
        if bad:
            raise SolverError("non-finite state", int(bad))
        if monthly:
            means /= nsteps // monthly
        return Y, (masses if record_mass else None), (means if monthly else None)

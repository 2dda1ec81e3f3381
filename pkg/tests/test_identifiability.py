import math

import numpy as np
import pytest

from ndopfe.grid import desk_grid
from ndopfe.identifiability import (CollisionPair, Misfit, SearchBox, admissible_samples,
                                    b_from_bottom_deposit, collision_profile, identify, lambda_from_aphotic_r2,
                                    make_collision_pair, nu_from_euphotic_r2, synth_observations,
                                    verify_collision)
from ndopfe.kernels import ColumnGeometry, reaction_tendencies, uptake_G
from ndopfe.params import IdentificationSubset, ParameterSet

P = ParameterSet()
PAIR = make_collision_pair(P, 1.25, 0.3, 20.0, 0.03)


def test_constants_mapping():
    c = PAIR.constants
    C = P.alpha / PAIR.u2.alpha
    assert math.isclose(C, 1.25, rel_tol=1e-15)
    assert c[0] == P.K_P - C * 0.3 and c[3] == C - 1 and c[6] == P.K_W and c[7] == 0.03
    assert PAIR.constraint_gap() <= 1e-14


def test_pair_must_share_other_parameters():
    with pytest.raises(ValueError):
        CollisionPair(P, P.replace(lam=0.01))


def test_identical_sets_have_no_profile():
    same = CollisionPair(P, P)
    I, x3 = np.meshgrid(np.linspace(1, 300, 20), np.linspace(0, 120, 20))
    assert np.all(np.isnan(collision_profile(same, I.ravel(), x3.ravel())))
    assert collision_profile(same, 100.0, 10.0) is None
    with pytest.raises(ValueError):
        verify_collision(same, [(100.0, 10.0)])


def test_profile_gives_equal_uptake(rng):
    s = admissible_samples(PAIR, 100, rng)
    assert verify_collision(PAIR, s) <= 1e-12
    y = collision_profile(PAIR, s[:, 0], s[:, 1])
    G1 = uptake_G(y, 1.0, s[:, 0], s[:, 1], PAIR.u1)
    assert np.all(G1 > 1e-4 * P.alpha)  # the gap is not trivially small


def test_perturbed_profile_breaks_collision(rng):
    s = admissible_samples(PAIR, 100, rng)
    y = 1.1 * collision_profile(PAIR, s[:, 0], s[:, 1])
    gap = np.abs(uptake_G(y, 1.0, s[:, 0], s[:, 1], PAIR.u1) - uptake_G(y, 1.0, s[:, 0], s[:, 1], PAIR.u2))
    assert np.all(gap > 1e-9)


def test_profile_sweep_smooth_between_poles():
    x3 = np.linspace(0, 120, 2001)
    y = collision_profile(PAIR, np.full_like(x3, 100.0), x3)
    ok = np.isfinite(y)
    # finite stretches are smooth: small steps give small changes away from poles
    d = np.abs(np.diff(y))
    both = ok[1:] & ok[:-1]
    assert np.median(d[both]) < 1e-2


def test_lambda_identifiable_from_aphotic_r2(rng):
    geom = ColumnGeometry(np.array([0.0, 40.0, 80.0, 120.0, 200.0, 300.0]))
    n = 5
    y2 = rng.uniform(0.1, 1, n)
    aph = ~geom.euphotic
    for lam in (1e-3, 5e-3):
        r = reaction_tendencies(np.ones(n), y2, np.ones(n), geom, 100.0, P.replace(lam=lam))
        assert np.allclose(lambda_from_aphotic_r2(r.r2[aph], y2[aph]), lam, rtol=1e-13)
    r1 = reaction_tendencies(np.ones(n), y2, np.ones(n), geom, 100.0, P.replace(lam=1e-3))
    r2 = reaction_tendencies(np.ones(n), y2, np.ones(n), geom, 100.0, P.replace(lam=2e-3))
    assert not np.allclose(r1.r2[aph], r2.r2[aph])


def test_nu_identifiable_from_euphotic_r2(rng):
    geom = ColumnGeometry(np.array([0.0, 40.0, 80.0, 120.0, 200.0]))
    n = 4
    y1, y2 = rng.uniform(0.1, 1, n), rng.uniform(0.1, 1, n)
    eu = geom.euphotic
    for nu in (0.3, 0.67, 0.9):
        q = P.replace(nu=nu)
        r = reaction_tendencies(y1, y2, np.ones(n), geom, 100.0, q)
        G = uptake_G(y1[eu], 1.0, 100.0, geom.mid[eu], q)
        assert np.allclose(nu_from_euphotic_r2(r.r2[eu], y2[eu], G, q.lam), nu, rtol=1e-10)


def test_b_identifiable_from_bottom_deposit():
    geom = ColumnGeometry(np.array([0.0, 40.0, 80.0, 120.0, 200.0, 300.0, 450.0]))
    n = 6
    for b in (0.0, 0.5, 0.858, 1.7):
        r = reaction_tendencies(np.ones(n), np.zeros(n), np.ones(n), geom, 100.0, P.replace(b=b))
        assert b_from_bottom_deposit(r.bottom_deposit, r.export_production, geom.depth) == pytest.approx(b, abs=1e-12)
    with pytest.raises(ValueError):
        b_from_bottom_deposit(1.0, 1.0, 100.0)


def test_search_box_round_trip():
    box = SearchBox()
    names = ("lambda", "alpha", "K_P", "b", "nu")
    u = box.to_unit(P, names)
    assert np.all((u > 0) & (u < 1))
    q = box.to_params(u, names, P)
    for k in names:
        assert q.get(k) == pytest.approx(P.get(k), rel=1e-13)


@pytest.fixture(scope="module")
def small_obs(scenario):
    sim = scenario.simulator(dt=1.0)
    return synth_observations(P, sim, 1.0, tol=1e-9)


def test_observations_deterministic(small_obs, scenario):
    again = synth_observations(P, scenario.simulator(dt=1.0), 1.0, tol=1e-9)
    assert np.array_equal(small_obs.means, again.means)
    assert small_obs.means.shape == (12, desk_grid().ncells, 2)
    n1 = synth_observations(P, scenario.simulator(dt=1.0), 1.0, tol=1e-9, noise=1e-3, seed=7)
    n2 = synth_observations(P, scenario.simulator(dt=1.0), 1.0, tol=1e-9, noise=1e-3, seed=7)
    assert np.array_equal(n1.means, n2.means)
    assert not np.array_equal(n1.means, small_obs.means)


def test_misfit_zero_at_truth(small_obs):
    m = Misfit(small_obs)
    assert m(P) == 0.0
    assert m(P.replace(alpha=P.alpha * 1.01)) > 0.0
    assert m(P.replace(nu=2.0)) == math.inf


def test_identify_from_truth_does_not_move(small_obs):
    sub = IdentificationSubset.parse("Reduced5")
    rep = identify(small_obs, sub, budget=60, x0=[P])
    r = rep.restarts[0]
    assert r.misfit <= 1e-25  # the start passes through unit coordinates
    assert all(r.estimate[k] == pytest.approx(P.get(k), rel=1e-6) for k in sub.free_names)
    assert all(e == pytest.approx(0.0, abs=1e-6) for e in rep.relative_errors().values())
    header = rep.header()
    rows = list(rep.rows())
    assert len(rows) == 1 and len(rows[0]) == len(header)
    assert "Reduced5" in rep.summary()


def test_failed_forward_runs_score_inf(small_obs):
    m = Misfit(small_obs)
    assert m(P.replace(lam=-1.0)) == math.inf
    assert m.failures == 1

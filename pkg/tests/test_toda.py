import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from soliton_lab.errors import ConsistencyViolation, DegeneratePairing, StepTooLarge
from soliton_lab.lattice import ZERO, LatticeField, PotentialSpec, evolve
from soliton_lab.modulation import omega, project_Q
from soliton_lab.toda import (BacklundOperators, TodaSoliton, decay_rate_estimate, delta,
                              delta_inverse, operator_norm_band, smooth_random_data,
                              toda_linearized_evolve)

C_GRID = (1.0005, 1.001, 1.002, 1.005)


def setup(c, span=60.0):
    sol = TodaSoliton(c)
    N = int(span / sol.kappa)
    sites = np.arange(-N, N)
    return sol, sites, BacklundOperators(c, sites)


def orthogonal_data(sol, sites, rng, centre=0.0):
    xi1, xi2 = sol.tangent_vectors(sites)
    v = smooth_random_data(rng, sites, centre, 2 / sol.kappa)
    return project_Q(1, v, xi1, xi2), xi1, xi2


def wnorm(x, sites, a):
    e = np.exp(2 * a * sites)
    return math.sqrt(math.fsum(e * sum(np.asarray(c) ** 2 for c in x)))


# soliton


@pytest.mark.parametrize("c", C_GRID)
def test_soliton_profile_limits(c):
    sol = TodaSoliton(c)
    n = 50 / sol.kappa
    assert sol.Q(n) == pytest.approx(-sol.kappa, abs=1e-10)
    assert sol.Q(-n) == pytest.approx(sol.kappa, abs=1e-10)
    assert math.sinh(sol.kappa) == pytest.approx(sol.kappa * c, rel=1e-13)


def test_soliton_is_exact_toda_solution():
    sol = TodaSoliton(1.01)
    sites = np.arange(-300, 300)
    r, p = sol.state(sites)
    u = LatticeField(-300, r, p, ZERO)
    fin = evolve(u, PotentialSpec.toda(), 5.0, 0.05, order=6, keep_states=False).final
    r5, p5 = sol.state(sites, 5.0)
    assert np.max(np.abs(fin.r - r5)) <= 1e-10 and np.max(np.abs(fin.p - p5)) <= 1e-10


def test_tangent_vectors_match_differences():
    sol, sites, _ = setup(1.002)
    xi1, xi2 = sol.tangent_vectors(sites)
    h = 1e-6
    a, b = sol.state(sites, shift=h), sol.state(sites, shift=-h)
    s1, s2 = TodaSoliton(1.002 + 1e-7), TodaSoliton(1.002 - 1e-7)
    A, B = s1.state(sites), s2.state(sites)
    for i in range(2):
        assert np.max(np.abs((a[i] - b[i]) / (2 * h) - xi1[i])) <= 1e-7
        fd = (A[i] - B[i]) / 2e-7
        assert np.max(np.abs(fd - xi2[i])) <= 1e-6 * np.max(np.abs(xi2[i]))


# elementary operators


def test_multiplier_A_is_cosh_ratio():
    sol, sites, ops = setup(1.002)
    k = sol.kappa
    assert np.allclose(ops.A, np.cosh(k * sites) / np.cosh(k * (sites + 1)), rtol=1e-13)


def test_delta_inverse_impulse():
    y = np.zeros(11)
    y[5] = 1.0  # site 0 with offset -5
    z = delta_inverse(y)
    assert np.all(z[:6] == -1.0) and np.all(z[6:] == 0.0)
    assert np.all(delta_inverse(np.zeros(7)) == 0)


@given(arrays(float, 30, elements=st.floats(-1, 1)))
def test_delta_inverse_telescopes(y):
    y = np.concatenate([y, np.zeros(5)])
    assert np.max(np.abs(delta(delta_inverse(y)) - y)) <= 1e-14 * max(1.0, np.sum(np.abs(y)))


def test_operator_band_c_independent():
    for c in C_GRID:
        cb, ct = operator_norm_band(c)
        assert 1.5 <= cb <= 2.5 and 1.5 <= ct <= 2.5


def test_commutator_small_as_c_tends_to_one():
    vals = []
    for c in (1.005, 1.002, 1.001, 1.0005):
        sol, sites, ops = setup(c)
        x = np.exp(-(sites * sol.kappa / 2) ** 2)
        Sx = np.concatenate([x[1:], [0.0]])
        SAx = np.concatenate([(ops.Ainv * x)[1:], [0.0]])
        vals.append(np.linalg.norm(ops.Ainv * Sx - SAx) / (sol.kappa * np.linalg.norm(x)))
    assert all(b < a for a, b in zip(vals, vals[1:]))


# inversions


def test_invert_C_round_trip(rng):
    sol, sites, ops = setup(1.002)
    for _ in range(10):
        x = smooth_random_data(rng, sites, 0.0, 2 / sol.kappa)[0]
        y = ops.apply_C(delta_inverse(x))
        assert np.max(np.abs(ops.invert_C(y) - x)) <= 1e-10 * np.max(np.abs(x))
    assert np.all(ops.invert_C(np.zeros(sites.size)) == 0)


def test_invert_C_rejects_inconsistent_data():
    sol, sites, ops = setup(1.002)
    y = np.zeros(sites.size)
    y[sites.size // 2] = 1.0
    with pytest.raises(ConsistencyViolation):
        ops.invert_C(y)


def test_invert_C_weighted_bound_uniform(rng):
    Ks = []
    for c in C_GRID:
        sol, sites, ops = setup(c)
        a = sol.kappa / 2
        for _ in range(5):
            v, _, _ = orthogonal_data(sol, sites, rng)
            y = v[1] + ops.apply_Cbar(delta_inverse(v[0]))
            Ks.append(wnorm([ops.invert_C(y)], sites, a) / wnorm([y], sites, a))
    assert max(Ks) / min(Ks) <= 3.0 and max(Ks) <= 1.0


def test_invert_Chat_round_trip(rng):
    sol, sites, ops = setup(1.002)
    j = sites.size // 2
    for _ in range(10):
        z = smooth_random_data(rng, sites, 0.0, 2 / sol.kappa)[0]
        y = ops.apply_Chat(z)
        zz = ops.invert_Chat(y, lambda w: w[j] - z[j])
        assert np.max(np.abs(zz - z)) <= 1e-10 * np.max(np.abs(z))
    zero = ops.invert_Chat(np.zeros(sites.size), lambda w: w[j])
    assert np.max(np.abs(zero)) == 0.0


def test_invert_Chat_degenerate_pairing():
    sol, sites, ops = setup(1.002)
    with pytest.raises(DegeneratePairing):
        ops.invert_Chat(np.zeros(sites.size), lambda w: 0.0)


def test_Chat_branches_agree_across_split():
    sol, sites, ops = setup(1.002)
    rng = np.random.default_rng(3)
    y = smooth_random_data(rng, sites, 0.0, 2 / sol.kappa)[0]
    z = ops._solve_Chat_particular(y)
    m = ops.split
    resid = ops.apply_Chat(z) - y
    assert np.max(np.abs(resid[m - 3:m + 3])) <= 1e-12 * np.max(np.abs(y))


# Backlund transformation


def test_backlund_zero():
    sol, sites, ops = setup(1.002)
    z = np.zeros(sites.size)
    rp, pp = ops.forward(z, z)
    assert not np.any(rp) and not np.any(pp)
    xi1, xi2 = sol.tangent_vectors(sites)
    r, p = ops.inverse(z, z, xi2)
    assert np.max(np.abs(r)) == 0 and np.max(np.abs(p)) == 0


@pytest.mark.parametrize("c", C_GRID)
def test_backlund_round_trip_100(c):
    rng = np.random.default_rng(int(c * 1e4))
    sol, sites, ops = setup(c)
    a = sol.kappa / 2
    for _ in range(100):
        v, xi1, xi2 = orthogonal_data(sol, sites, rng, rng.uniform(-3, 3) / sol.kappa)
        rp, pp = ops.forward(*v)
        r, p = ops.inverse(rp, pp, xi2)
        assert wnorm([r - v[0], p - v[1]], sites, a) <= 1e-10 * wnorm(v, sites, a)
        scale = math.sqrt(np.sum(r**2 + p**2)) * math.sqrt(np.sum(xi1[0] ** 2 + xi1[1] ** 2))
        assert abs(omega(1, xi1, (r, p))) <= 1e-8 * scale


def test_backlund_forward_bounded_uniformly(rng):
    for c in C_GRID:
        sol, sites, ops = setup(c)
        a = sol.kappa / 2
        for _ in range(5):
            v, _, _ = orthogonal_data(sol, sites, rng)
            ratio = wnorm(ops.forward(*v), sites, a) / wnorm(v, sites, a)
            assert ratio * (1 - math.exp(-a)) <= 1.0


# linearized flows


def test_linear_flow_about_zero_energy_drift():
    rng = np.random.default_rng(0)
    sites = np.arange(-300, 300)
    v = smooth_random_data(rng, sites, 0.0, 10.0)
    E0 = np.sum(v[0] ** 2 + v[1] ** 2)
    drift = []
    for dt in (0.2, 0.1):
        tr = toda_linearized_evolve(v, 1.002, 20.0, dt, about="zero", offset=-300, stride=10)
        drift.append(max(abs(np.sum(r**2 + p**2) - E0) for r, p in zip(tr.r, tr.p)) / E0)
    assert drift[0] < 1e-2
    assert 3.0 <= drift[0] / drift[1] <= 5.0


def test_linear_flow_step_guard():
    with pytest.raises(StepTooLarge):
        toda_linearized_evolve((np.zeros(10), np.zeros(10)), 1.002, 2.0, 1.0)


@pytest.mark.parametrize("c", (1.001, 1.002, 1.005))
def test_conjugation_of_linear_flows(c):
    rng = np.random.default_rng(7)
    sol, sites, ops = setup(c)
    v, _, _ = orthogonal_data(sol, sites, rng)
    T = 20.0
    tr = toda_linearized_evolve(v, c, T, 0.05, about="soliton", offset=int(sites[0]), order=6)
    rp, pp = ops.forward(*v)
    tz = toda_linearized_evolve((rp, pp), c, T, 0.05, about="zero", offset=int(sites[0]), order=6)
    opsT = BacklundOperators(c, sites, t=T)
    rT, pT = opsT.forward(tr.r[-1], tr.p[-1])
    assert max(np.max(np.abs(rT - tz.r[-1])), np.max(np.abs(pT - tz.p[-1]))) <= 1e-6


def test_neutral_mode_is_transported():
    sol, sites, _ = setup(1.002)
    xi1, _ = sol.tangent_vectors(sites)
    T = 20.0
    tr = toda_linearized_evolve(xi1, 1.002, T, 0.05, about="soliton", offset=int(sites[0]), order=6)
    x1, _ = sol.tangent_vectors(sites, T)
    err = math.sqrt(np.sum((tr.r[-1] - x1[0]) ** 2 + (tr.p[-1] - x1[1]) ** 2))
    assert err <= 1e-6


# decay


@pytest.mark.parametrize("c", (1.005, 1.01))
def test_decay_rate_positive(c):
    fit = decay_rate_estimate(c, trials=1)
    assert fit.b_fit > 0
    assert all(np.all(np.isfinite(s[1])) for s in fit.series)

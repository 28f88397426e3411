import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from soliton_lab.errors import DomainError, NoConvergence
from soliton_lab.lattice import ZERO, PotentialSpec
from soliton_lab.profiles import (SpectralGrid, WaveFamily, WaveSampler, beta_from_speed,
                                  energy_slope, fixed_point_residual, kappa_root, kdv_profile,
                                  load_profile, profile_derivatives, sample_lattice_wave,
                                  save_profile, solve_profile, speed_from_beta, symbol_p)


@pytest.fixture(scope="module")
def waves():
    return {e: solve_profile(e, 1.0) for e in (0.4, 0.2, 0.1)}


# KdV profile


def test_kdv_profile_peak():
    g = SpectralGrid.for_beta(1.0)
    phi = kdv_profile(1.0, g)
    assert phi[g.M // 2] == pytest.approx(0.25, rel=1e-15)


@pytest.mark.parametrize("beta", [0.3, 1.0, 2.5])
def test_kdv_profile_solves_ode(beta):
    g = SpectralGrid.for_beta(beta, M=2048)
    phi = kdv_profile(beta, g)
    assert phi[g.M // 2] == pytest.approx(beta / 4, rel=1e-15)
    F = np.fft.fft(phi)
    phixx = np.fft.ifft(-(g.zeta**2) * F).real
    assert np.max(np.abs(-phixx + beta * phi - 6 * phi**2)) <= 1e-10
    assert max(phi[0], phi[-1]) < 1e-14


# symbols


def test_symbol_limits():
    assert symbol_p(0.0, 1.0, 0.0) == pytest.approx(12.0)
    for e in (0.1, 0.3, 0.5):
        assert symbol_p(e, 0.7, 0.0) == pytest.approx(12 / 0.7, rel=1e-14)
    with pytest.raises(DomainError):
        symbol_p(0.1, 0.0, 1.0)


def test_symbol_matches_direct_formula():
    xi = np.linspace(-30, 30, 101)
    e, b = 0.3, 1.0
    s = np.sinc(e * xi / 2 / np.pi) ** 2
    direct = e**2 * s / (1 + e**2 * b / 12 - s)
    direct[np.abs(xi) < 1e-12] = 12 / b
    assert np.allclose(symbol_p(e, b, xi), direct, rtol=1e-7)


def test_symbol_second_order_in_eps():
    xi = np.linspace(-40, 40, 4001)
    d = [np.max(np.abs(symbol_p(e, 1.0, xi) - symbol_p(0.0, 1.0, xi))) for e in (0.4, 0.2, 0.1)]
    for a, b in zip(d, d[1:]):
        assert 3.0 <= a / b <= 5.0


# solver


def test_solver_residual_and_evenness(waves):
    for w in waves.values():
        assert w.residual <= 1e-12
        assert fixed_point_residual(w) <= 1e-12
        phi = w.phi
        assert np.max(np.abs(phi[1:] - phi[1:][::-1])) <= 1e-10
        assert phi[w.grid.M // 2] > 0
        right = phi[w.grid.M // 2:]
        assert np.all(np.diff(right) <= 1e-15)


def test_solver_domain_errors():
    with pytest.raises(DomainError):
        solve_profile(0.6, 1.0)
    with pytest.raises(DomainError):
        solve_profile(0.2, -1.0)


def test_solver_reports_failure():
    with pytest.raises(NoConvergence):
        solve_profile(0.2, 1.0, max_iter=1, tol=1e-30)


def test_sup_closeness_is_second_order(waves):
    g = SpectralGrid.for_beta(1.0)
    d = [np.max(np.abs(waves[e].phi - kdv_profile(1.0, g))) for e in (0.4, 0.2, 0.1)]
    for a, b in zip(d, d[1:]):
        assert 3.0 <= a / b <= 5.0


def test_peak_near_kdv_value(waves):
    w = waves[0.2]
    C = abs(w.phi[w.grid.M // 2] - 0.25) / 0.04
    assert C < 1.0


def test_h1_closeness_ratio(waves):
    g = SpectralGrid.for_beta(1.0)
    E = {e: g.h1_norm(waves[e].phi - kdv_profile(1.0, g)) for e in waves}
    for e in (0.4, 0.2):
        assert 0.15 <= E[e / 2] / E[e] <= 0.40


# lattice sampling


def test_amplitude_and_l2_scaling():
    g = SpectralGrid.for_beta(1.0)
    target = g.l2_norm(kdv_profile(1.0, g))
    prev = None
    for e in (0.2, 0.1, 0.05):
        w = solve_profile(e, 1.0)
        N = int(40 / w.kappa_fpu)
        u = sample_lattice_wave(w, 0.0, (-N, 2 * N + 1, ZERO))
        assert np.max(u.r) == pytest.approx(e**2 * w.phi[w.grid.M // 2], rel=1e-12)
        ratio = math.sqrt(math.fsum(u.r**2)) / e**1.5
        gap = abs(ratio / target - 1)
        assert prev is None or gap < prev
        prev = gap
    assert prev < 0.01


def test_velocity_midpoint_relation():
    errs = []
    for e in (0.2, 0.1):
        w = solve_profile(e, 1.0)
        N = int(40 / w.kappa_fpu)
        sites = np.arange(-N, N + 1)
        s = WaveSampler(w)
        r, p = s.fields(0.0, sites)["u"]
        r_half = s.fields(0.5, sites)["u"][0]  # r_c(k - 1/2)
        errs.append(np.max(np.abs(p + w.c * r_half)))
    assert errs[0] <= 2 * 0.2**3
    assert errs[1] / errs[0] <= 1.5 / 8


def test_sampled_tail_decay_rate():
    w = solve_profile(0.3, 1.0)
    N = int(60 / w.kappa_fpu)
    u = sample_lattice_wave(w, 0.0, (-N, 2 * N + 1, ZERO))
    k = u.sites
    m = (k > 0) & (np.abs(u.r) > 1e-10) & (np.abs(u.r) < 1e-4)
    slope = np.polyfit(k[m], np.log(np.abs(u.r[m])), 1)[0]
    assert -1.05 * w.kappa_fpu <= slope <= -0.95 * w.kappa_fpu


# derivatives


def test_tau_derivative_is_minus_x_derivative():
    w = solve_profile(0.2, 1.0)
    s = WaveSampler(w, profile_derivatives(w))
    sites = np.arange(-150, 151)
    h = 1e-3
    d = s.fields(0.0, sites, ("dx",))["dx"]
    a, b = s.fields(h, sites)["u"], s.fields(-h, sites)["u"]
    for i in range(2):
        fd = (a[i] - b[i]) / (2 * h)
        assert np.max(np.abs(fd + d[i])) <= 1e-10


def test_implicit_beta_derivative_matches_finite_difference():
    e, b, h = 0.2, 1.0, 1e-4
    g = SpectralGrid.for_beta(1.0)
    w = solve_profile(e, b, g)
    d = profile_derivatives(w, 2)
    wp, wm = solve_profile(e, b + h, g), solve_profile(e, b - h, g)
    fd = (wp.phi - wm.phi) / (2 * h)
    assert np.max(np.abs(d.dphi_dbeta - fd)) <= 1e-6 * np.max(np.abs(fd))
    fd2 = (wp.phi - 2 * w.phi + wm.phi) / h**2
    assert np.max(np.abs(d.d2phi_dbeta2 - fd2)) <= 1e-4 * np.max(np.abs(fd2))


def test_c_derivative_of_sampled_wave():
    fam = WaveFamily(0.2, 1.0)
    c = speed_from_beta(0.2, 1.0)
    sites = np.arange(-200, 201)
    h = 1e-7
    d = fam.sampler(c).fields(3.0, sites, ("dc",))["dc"]
    a = fam.sampler(c + h).fields(3.0, sites)["u"]
    b = fam.sampler(c - h).fields(3.0, sites)["u"]
    for i in range(2):
        fd = (a[i] - b[i]) / (2 * h)
        assert np.max(np.abs(fd - d[i])) <= 1e-5 * np.max(np.abs(d[i]))


def test_derivative_beta_closeness_second_order(waves):
    g = SpectralGrid.for_beta(1.0)
    h = 1e-4
    kdv_d = (kdv_profile(1 + h, g) - kdv_profile(1 - h, g)) / (2 * h)
    E = [g.h1_norm(profile_derivatives(waves[e], 1).dphi_dbeta - kdv_d) for e in (0.4, 0.2, 0.1)]
    for a, b in zip(E, E[1:]):
        assert 3.0 <= a / b <= 5.0


# kappa


def _bisect(f, lo, hi):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def test_kappa_roots():
    c = 1.001
    fpu_k = _bisect(lambda k: math.sinh(k / 2) / (k / 2) - c, 1e-9, 5.0)
    toda_k = _bisect(lambda k: math.sinh(k) / k - c, 1e-9, 5.0)
    assert kappa_root(c, "fpu_dispersion") == pytest.approx(fpu_k, rel=1e-13)
    assert kappa_root(c, "toda") == pytest.approx(toda_k, rel=1e-13)
    # small c - 1 expansions
    assert kappa_root(c, "fpu_dispersion") == pytest.approx(2 * math.sqrt(6 * (c - 1)), rel=2e-4)
    assert kappa_root(c, "toda") == pytest.approx(math.sqrt(6 * (c - 1)), rel=2e-4)
    with pytest.raises(DomainError):
        kappa_root(1.0)


@given(st.floats(1.0001, 3.0), st.sampled_from(["fpu_dispersion", "toda"]))
def test_kappa_root_equation(c, kind):
    k = kappa_root(c, kind)
    if kind == "toda":
        assert math.sinh(k) == pytest.approx(k * c, rel=1e-13)
    else:
        assert math.sinh(k / 2) / (k / 2) == pytest.approx(c, rel=1e-13)


def test_kappa_increasing():
    cs = np.linspace(1.0005, 2.0, 60)
    for kind in ("fpu_dispersion", "toda"):
        ks = [kappa_root(c, kind) for c in cs]
        assert np.all(np.diff(ks) > 0)


@given(st.floats(0.05, 0.5), st.floats(0.1, 2.0))
def test_speed_beta_inverse(e, b):
    assert beta_from_speed(e, speed_from_beta(e, b)) == pytest.approx(b, rel=1e-9)


# energy slope


def test_energy_slope_leading_order():
    # H(u_c) ~ eps^3 int phi_beta^2 = eps^3 beta^{3/2} / 6 and d beta / dc = 24 c / eps^2,
    # so dH/dc ~ 24 eps d/dbeta (beta^{3/2} / 6) = 6 eps at beta = 1
    eps = [0.3, 0.2, 0.1]
    s = [energy_slope(e) for e in eps]
    assert all(v > 0 for v in s)
    assert s[-1] / 0.1 == pytest.approx(6.0, rel=0.2)
    slope = np.polyfit(np.log(eps), np.log(s), 1)[0]
    assert abs(slope - 1) <= 0.1


# serialization


def test_profile_round_trip(tmp_path):
    w = solve_profile(0.25, 0.8, potential=PotentialSpec.toda())
    save_profile(w, tmp_path / "wave")
    back = load_profile(tmp_path / "wave")
    assert np.array_equal(back.phi, w.phi)
    assert back.residual <= 1e-12 and back.potential == w.potential


def test_load_rejects_corrupted_profile(tmp_path):
    w = solve_profile(0.25, 1.0)
    save_profile(w, tmp_path / "wave")
    csv = tmp_path / "wave.csv"
    lines = csv.read_text().splitlines()
    x, f = lines[600].split(",")
    lines[600] = f"{x},{float(f) + 1e-6!r}"
    csv.write_text("\n".join(lines) + "\n")
    with pytest.raises(NoConvergence):
        load_profile(tmp_path / "wave")

"""The twelve acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed in the terminal
summary (see conftest.py) and the test asserts the same condition.
"""
import math
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from soliton_lab.collisions import (CollisionConfig, InteractionConfig, LinearFit, StabilityConfig,
                                    VirialConfig, interaction_correction_run, scan_epsilon,
                                    stability_run, virial_experiment)
from soliton_lab.lattice import (ZERO, LatticeField, PotentialSpec, WeightSpec, evolve,
                                 hamiltonian_energy, weighted_norm)
from soliton_lab.modulation import (T0, apply_J_pair, assemble_A, extract_coordinates, inner,
                                    localized_perturbation, omega, project_Q, synthesize)
from soliton_lab.profiles import (SpectralGrid, WaveFamily, WaveSampler, fixed_point_residual,
                                  kdv_profile, profile_derivatives, sample_lattice_wave,
                                  solve_profile, speed_from_beta)
from soliton_lab.toda import (BacklundOperators, TodaSoliton, decay_rate_estimate,
                              operator_norm_band, smooth_random_data, toda_linearized_evolve)

V = PotentialSpec.fpu()


def report(n: int, title: str, ok: bool, detail: str):
    line = f"AC{n} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def slope(x, y):
    return LinearFit.of(np.log(x), np.log(y)).slope


# ---------------------------------------------------------------------------


def test_ac1_profile_correctness():
    grid = SpectralGrid.for_beta(1.0, M=2048)
    res, times, E = {}, {}, {}
    for e in (0.4, 0.3, 0.2, 0.1):
        t = time.perf_counter()
        w = solve_profile(e, 1.0, grid)
        times[e] = time.perf_counter() - t
        res[e] = fixed_point_residual(w)
        E[e] = grid.h1_norm(w.phi - kdv_profile(1.0, grid))
    ratios = [E[0.2] / E[0.4], E[0.1] / E[0.2]]
    ok = (max(res.values()) <= 1e-12 and all(0.15 <= r <= 0.40 for r in ratios)
          and max(times.values()) <= 10.0)
    report(1, "profile correctness", ok,
           f"max residual {max(res.values()):.2e}, KdV ratios {ratios[0]:.3f} {ratios[1]:.3f}, "
           f"slowest solve {max(times.values()):.2f} s")


def test_ac2_traveling_wave_fidelity():
    e, T, dt = 0.2, 50.0, 0.02
    w = solve_profile(e, 1.0, SpectralGrid.for_beta(1.0, M=2048))
    reach = int(math.ceil(40.0 / w.kappa_fpu)) + 2
    win = (-reach, int(math.ceil(2 * reach + w.c * T)) + 1, ZERO)
    u = sample_lattice_wave(w, 0.0, win)
    peak = u.sup()
    tr = evolve(u, V, T, dt, {"E": lambda t, s: hamiltonian_energy(s, V)}, stride=250)
    ref = sample_lattice_wave(w, w.c * T, win, check=False)
    err = max(np.max(np.abs(tr.final.r - ref.r)), np.max(np.abs(tr.final.p - ref.p))) / peak
    E = np.array(tr.observed["E"])
    drift = float(np.max(np.abs(E - E[0])) / abs(E[0]))
    report(2, "traveling-wave fidelity", err <= 1e-4 and drift <= 1e-6,
           f"relative sup error {err:.2e}, energy drift {drift:.2e}")


def test_ac3_derivative_scalings():
    grid = [0.3, 0.2, 0.15, 0.1]
    names = {(0, 0): "u", (0, 1): "dx", (1, 0): "dc", (1, 1): "dxc"}
    norms = {kj: [] for kj in names}
    for e in grid:
        w = solve_profile(e, 1.0)
        s = WaveSampler(w, profile_derivatives(w, 2))
        N = int(45 / w.kappa_fpu)
        f = s.fields(0.0, np.arange(-N, N + 1), tuple(names.values()))
        for kj, n in names.items():
            norms[kj].append(math.sqrt(math.fsum(f[n][0] ** 2)))
    fits = {kj: slope(grid, v) for kj, v in norms.items()}
    ok = all(abs(fits[(k, j)] - (1.5 + j - 2 * k)) <= 0.2 for k, j in fits)
    detail = ", ".join(f"(k={k},j={j}) {fits[(k, j)]:.3f} vs {1.5 + j - 2 * k}" for k, j in fits)
    report(3, "derivative scalings", ok, detail)


def test_ac4_symplectic_identities():
    rng = np.random.default_rng(2024)
    worst = {"J": 0.0, "antisym": 0.0, "diff": 0.0, "bound": 0.0}

    def compact(n=80):
        z = np.zeros((2, n))
        z[:, 4:-4] = rng.standard_normal((2, n - 8))
        return z[0], z[1]

    def nrm(x):
        return math.sqrt(inner(x, x))

    for i in range(100):
        alpha = 1 if i % 2 else -1
        z, y = compact(), compact()
        worst["J"] = max(worst["J"], abs(omega(alpha, apply_J_pair(z), y) - inner(z, y)) / (nrm(z) * nrm(y)))
        x = compact()
        for comp in x:
            comp[4:-4] -= comp[4:-4].mean()
        worst["antisym"] = max(worst["antisym"],
                               abs(omega(alpha, x, y) + omega(alpha, y, x)) / (nrm(x) * nrm(y)))
        x = compact()
        d = omega(1, x, y) - omega(-1, x, y)
        expect = y[0].sum() * x[1].sum() + y[1].sum() * x[0].sum()
        worst["diff"] = max(worst["diff"], abs(d - expect) / (nrm(x) * nrm(y)))
        a = rng.uniform(0.05, 1.0)
        sx, sy = LatticeField(-40, *x, ZERO), LatticeField(-40, *y, ZERO)
        bound = (weighted_norm(sx, WeightSpec(a=a, alpha=-alpha), "one_sided")
                 * weighted_norm(sy, WeightSpec(a=a, alpha=alpha), "one_sided") / (1 - math.exp(-a)))
        worst["bound"] = max(worst["bound"], abs(omega(alpha, sx, sy)) / bound)
    ok = worst["J"] <= 1e-12 and worst["antisym"] <= 1e-12 and worst["diff"] <= 1e-12 and worst["bound"] <= 1 + 1e-12
    report(4, "symplectic identities", ok,
           f"J identity {worst['J']:.1e}, antisymmetry {worst['antisym']:.1e}, "
           f"difference identity {worst['diff']:.1e}, max |omega| / weighted bound {worst['bound']:.3f}")


def test_ac5_backlund_suite():
    rng = np.random.default_rng(5)
    round_trip, conj, bands = 0.0, 0.0, []
    for c in (1.001, 1.002, 1.005):
        sol = TodaSoliton(c)
        N = int(60 / sol.kappa)
        sites = np.arange(-N, N)
        ops = BacklundOperators(c, sites)
        xi1, xi2 = sol.tangent_vectors(sites)
        a = sol.kappa / 2
        e = np.exp(2 * a * sites)
        for _ in range(20):
            v = project_Q(1, smooth_random_data(rng, sites, rng.uniform(-3, 3) / sol.kappa, 2 / sol.kappa),
                          xi1, xi2)
            r, p = ops.inverse(*ops.forward(*v), xi2)
            err = math.sqrt(math.fsum(e * ((r - v[0]) ** 2 + (p - v[1]) ** 2)))
            round_trip = max(round_trip, err / math.sqrt(math.fsum(e * (v[0] ** 2 + v[1] ** 2))))
        v = project_Q(1, smooth_random_data(rng, sites, 0.0, 2 / sol.kappa), xi1, xi2)
        T = 20.0
        tr = toda_linearized_evolve(v, c, T, 0.05, about="soliton", offset=int(sites[0]), order=6)
        tz = toda_linearized_evolve(ops.forward(*v), c, T, 0.05, about="zero", offset=int(sites[0]), order=6)
        rT, pT = BacklundOperators(c, sites, t=T).forward(tr.r[-1], tr.p[-1])
        conj = max(conj, np.max(np.abs(rT - tz.r[-1])), np.max(np.abs(pT - tz.p[-1])))
        bands += list(operator_norm_band(c))
    ok = round_trip <= 1e-10 and conj <= 1e-6 and all(1.5 <= b <= 2.5 for b in bands)
    report(5, "Backlund suite", ok,
           f"round trip {round_trip:.1e}, conjugation {conj:.1e}, "
           f"norm band [{min(bands):.3f}, {max(bands):.3f}]")


def test_ac6_semigroup_decay():
    t = time.perf_counter()
    eps_grid = (0.2, 0.15, 0.1)
    bs = [decay_rate_estimate(math.sqrt(1 + e**2 / 12), trials=3).b_fit for e in eps_grid]
    Ks = [decay_rate_estimate(c, trials=3).K_fit for c in (1.001, 1.002, 1.005)]
    elapsed = time.perf_counter() - t
    s = slope(eps_grid, bs)
    spread = max(Ks) / min(Ks)
    ok = min(bs) > 0 and 2.5 <= s <= 3.5 and spread <= 10 and elapsed <= 300
    report(6, "semigroup decay", ok,
           f"b {', '.join(f'{b:.2e}' for b in bs)}, slope {s:.3f}, K spread {spread:.3f}, "
           f"{elapsed:.0f} s")


def _two_wave(e, margin=60):
    fam = WaveFamily(e, 1.0, V)
    c = speed_from_beta(e, 1.0)
    tau = 1.5 * T0(e)
    W = int(tau + margin / e)
    sites = np.arange(-W, W + 1)
    return fam, sites, np.array([tau, c, -tau, -c])


def test_ac7_coordinate_extraction():
    worst_tau, worst_c, worst_k, all_small = 0.0, 0.0, 0.0, True
    for e in (0.25, 0.2, 0.15):
        fam, sites, x = _two_wave(e)
        base = synthesize(fam, x, sites)
        for seed in range(3):
            rng = np.random.default_rng(seed)
            nr, np_ = localized_perturbation(fam, x, sites, e**3.5, rng)
            u = LatticeField(int(sites[0]), base[0] + nr, base[1] + np_, ZERO)
            # guesses inside the tube |dtau| <= 0.5, |dc| <= 1e-4 eps^2
            off = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-1, 1) * 1e-4 * e**2,
                            rng.uniform(-0.5, 0.5), rng.uniform(-1, 1) * 1e-4 * e**2])
            co = extract_coordinates(u, None, x + off, fam)
            d = co.x - x
            worst_tau = max(worst_tau, abs(d[0]), abs(d[2]))
            worst_c = max(worst_c, abs(d[1]), abs(d[3]))
            all_small &= co.small_data_ok
            if co.small_data_ok:
                worst_k = max(worst_k, co.contraction)
    ok = worst_tau <= 1e-6 and worst_c <= 1e-9 and worst_k <= 0.5
    report(7, "coordinate extraction", ok,
           f"max |dtau| {worst_tau:.1e}, max |dc| {worst_c:.1e}, max contraction {worst_k:.3f}"
           f" (smallness precondition held in all runs: {all_small})")


def test_ac8_matrix_A_structure():
    e = 0.2
    fam = WaveFamily(e, 1.0, V)
    c = speed_from_beta(e, 1.0)
    ratios = []
    for f in (1.0, 2.0):
        tau = f * T0(e)
        W = int(tau + 60 / e)
        M = assemble_A(np.array([tau, c, -tau, -c]), fam, np.arange(-W, W + 1), max_cond=1e30)
        ratios.append(M.a1_norm() / M.a0_norm())
    squaring = ratios[1] / ratios[0] ** 2
    grid = (0.25, 0.2, 0.15)
    a11, a12 = [], []
    for g in grid:
        fam, sites, x = _two_wave(g)
        M = assemble_A(x, fam, sites)
        a11.append(abs(M.Ainv[0, 0]))
        a12.append(abs(M.Ainv[0, 1]))
    s11, s12 = slope(grid, a11), slope(grid, a12)
    ok = ratios[1] < ratios[0] and 0.5 <= squaring <= 2.0 and abs(s11 + 4) <= 0.4 and abs(s12 + 1) <= 0.3
    report(8, "matrix A structure", ok,
           f"|A1|/|A0| {ratios[0]:.2e} -> {ratios[1]:.2e} (ratio to square {squaring:.2f}), "
           f"inverse slopes {s11:.3f}, {s12:.3f}")


def test_ac9_virial():
    worst_M, worst_L, C2s = -np.inf, -np.inf, []
    for e in (0.3, 0.25, 0.2, 0.15):
        for seed in (0, 1):
            s = virial_experiment(VirialConfig(e, seed=seed))
            worst_M = max(worst_M, float(np.max(s.M / s.M[0])) - 1.0)
            C2 = s.fit_C2()
            C2s.append(C2)
            L = s.lyapunov(C2)
            worst_L = max(worst_L, float(np.max(np.diff(L)) / abs(L[0])))
    ok = worst_M <= 1e-8 and worst_L <= 1e-12 and all(np.isfinite(C2s))
    report(9, "virial diagnostic", ok,
           f"max M(t)/M(0) - 1 = {worst_M:.1e}, max Lyapunov increment {worst_L:.1e}, "
           f"fitted C2 in [{min(C2s):.4f}, {max(C2s):.4f}]")


def test_ac10_collision_scaling():
    t = time.perf_counter()
    eps_grid = (0.30, 0.25, 0.20, 0.15)
    rep = scan_epsilon([CollisionConfig(e) for e in eps_grid])
    elapsed = time.perf_counter() - t
    rows = sorted(rep.rows, key=lambda r: -r["eps"])
    ratio = [r["residual_total"] / r["wave_norm"] for r in rows]
    pre = [r["residual_pre"] / r["wave_norm"] for r in rows]
    decreasing = all(b < a for a, b in zip(ratio, ratio[1:]))
    ok = (rep.total.slope >= 3.0 and max(ratio) <= 0.2 and decreasing and max(pre) <= 1e-3
          and elapsed <= 7200)
    report(10, "collision scaling", ok,
           f"total slope {rep.total.slope:.3f} (localized {rep.localized.slope:.3f}, "
           f"nonlocalized {rep.nonlocalized.slope:.3f}), residual/wave "
           f"{', '.join(f'{r:.2e}' for r in ratio)}, max pre-crossing ratio {max(pre):.1e}, "
           f"{elapsed:.0f} s")


def test_ac11_stability():
    eps_grid = (0.25, 0.2, 0.15)
    recs = [stability_run(StabilityConfig(e)) for e in eps_grid]
    slopes = {a: slope(eps_grid, [r.waves[a].b_fit for r in recs]) for a in (1, -1)}
    K = [max(r.speed_constant.values()) for r in recs]
    spread = max(K) / min(K)
    ok = all(r.waves[a].b_fit > 0 for r in recs for a in (1, -1)) and \
        all(2.5 <= s <= 3.5 for s in slopes.values()) and spread <= 3
    report(11, "stability run", ok,
           f"decay-rate slopes {slopes[1]:.3f} (right), {slopes[-1]:.3f} (left), "
           f"speed constants {', '.join(f'{k:.2e}' for k in K)} (spread {spread:.2f})")


def test_ac12_interaction_correction():
    eps_grid = (0.3, 0.25, 0.2, 0.15)
    recs = [interaction_correction_run(InteractionConfig(e)) for e in eps_grid]
    phi = [float(r.phi.max()) for r in recs]
    psi = [float(r.psi.max()) for r in recs]
    C = [r.source_constant for r in recs]
    ok = max(phi) <= 1.0 and max(psi) <= 1.0 and max(C) / min(C) <= 3.0 and all(np.isfinite(C))
    report(12, "interaction correction", ok,
           f"max |phi| {max(phi):.3f}, max |psi| {max(psi):.3f}, source constants "
           f"{', '.join(f'{c:.3f}' for c in C)}")

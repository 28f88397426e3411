"""Symplectic pairings, wave-manifold tangent vectors and tubular coordinates.

Two waves: alpha = +1 moves right (speed c_+ > 1, phase tau_+ > 0) and
alpha = -1 moves left (signed speed c_- < -1, phase tau_- < 0). The tangent
vectors are xi_1 = d/dtau u_c(. - tau) = -d/dx u_c(. - tau) and
xi_2 = d/dc u_c(. - tau), with c the signed speed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegeneratePairing, NoConvergence, SeparationTooSmall, SingularA)
from .lattice import LatticeField, PotentialSpec, cutoff_mask
from .profiles import WaveFamily


def T0(eps: float, factor: float = 5.0) -> float:
    """Minimal phase separation, factor * |log eps| / eps."""
    return factor * abs(math.log(eps)) / eps


def _pair(x):
    if isinstance(x, LatticeField):
        return x.r, x.p
    return np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float)


def omega(alpha: int, x, y) -> float:
    """omega_+(x,y) = sum_n y1_n sum_{k<=n} x2_k + y2_n sum_{k<=n-1} x1_k,
    omega_-(x,y) = -sum_n y1_n sum_{k>=n+1} x2_k + y2_n sum_{k>=n} x1_k."""
    x1, x2 = _pair(x)
    y1, y2 = _pair(y)
    if alpha > 0:
        X2 = np.cumsum(x2)
        X1 = np.concatenate(([0.0], np.cumsum(x1)[:-1]))
        return math.fsum(y1 * X2) + math.fsum(y2 * X1)
    X2 = np.concatenate((np.cumsum(x2[::-1])[::-1][1:], [0.0]))
    X1 = np.cumsum(x1[::-1])[::-1]
    return -(math.fsum(y1 * X2) + math.fsum(y2 * X1))


def inner(x, y) -> float:
    x1, x2 = _pair(x)
    y1, y2 = _pair(y)
    return math.fsum(x1 * y1) + math.fsum(x2 * y2)


def apply_J_pair(z):
    """J z on a zero-padded window."""
    z1, z2 = _pair(z)
    a = -z2.copy()
    a[:-1] += z2[1:]
    b = z1.copy()
    b[1:] -= z1[:-1]
    return a, b


def project_Q(alpha: int, v, xi1, xi2, tol: float = 1e-12):
    """v - a xi1 - b xi2 with omega(xi1, .) = omega(xi2, .) = 0."""
    v1, v2 = _pair(v)
    G = np.array([[omega(alpha, xi1, xi1), omega(alpha, xi1, xi2)],
                  [omega(alpha, xi2, xi1), omega(alpha, xi2, xi2)]])
    if abs(G[0, 1]) < tol:
        raise DegeneratePairing(f"omega(xi1, xi2) = {G[0, 1]:.2e}")
    rhs = np.array([omega(alpha, xi1, v), omega(alpha, xi2, v)])
    a, b = np.linalg.solve(G, rhs)
    x1, x2 = _pair(xi1)
    z1, z2 = _pair(xi2)
    return v1 - a * x1 - b * z1, v2 - a * x2 - b * z2


def project_Q_closed(alpha: int, v, xi1, xi2):
    """The closed-form projection (valid when xi1 is zero mean)."""
    v1, v2 = _pair(v)
    w21 = omega(alpha, xi2, xi1)
    w12 = omega(alpha, xi1, xi2)
    w22 = omega(alpha, xi2, xi2)
    a = omega(alpha, xi2, v) / w21 + w22 * omega(alpha, xi1, v) / w21**2
    b = omega(alpha, xi1, v) / w12
    x1, x2 = _pair(xi1)
    z1, z2 = _pair(xi2)
    return v1 - a * x1 - b * z1, v2 - a * x2 - b * z2


# ---------------------------------------------------------------------------
# tangent vectors and the wave sum


def tangent_vectors(sampler, tau: float, sites, direction: int = 1):
    f = sampler.fields(tau, sites, ("dx", "dc"), direction)
    xi1 = (-f["dx"][0], -f["dx"][1])
    return xi1, f["dc"]


@dataclass
class WaveGeometry:
    """Sampled wave, tangent vectors and their derivatives for one wave."""

    u: tuple
    xi1: tuple
    xi2: tuple
    d_tau_xi1: tuple
    d_c_xi1: tuple
    d_c_xi2: tuple

    @property
    def d_tau_xi2(self):
        return self.d_c_xi1


def wave_geometry(family: WaveFamily, tau: float, c_signed: float, sites) -> WaveGeometry:
    d = 1 if c_signed > 0 else -1
    s = family.sampler(abs(c_signed))
    f = s.fields(tau, sites, ("u", "dx", "dc", "dcc", "dxx", "dxc"), d)
    neg = lambda t: (-t[0], -t[1])
    return WaveGeometry(u=f["u"], xi1=neg(f["dx"]), xi2=f["dc"], d_tau_xi1=f["dxx"],
                        d_c_xi1=neg(f["dxc"]), d_c_xi2=f["dcc"])


def synthesize(family: WaveFamily, x, sites) -> tuple:
    """u_{c+}(. - tau+) + u_{c-}(. - tau-) for x = (tau+, c+, tau-, c-)."""
    tp, cp, tm, cm = x
    r = np.zeros(len(sites))
    p = np.zeros(len(sites))
    for tau, c in ((tp, cp), (tm, cm)):
        if c == 0:
            continue
        s = family.sampler(abs(c))
        rr, pp = s.fields(tau, sites, ("u",), 1 if c > 0 else -1)["u"]
        r += rr
        p += pp
    return r, p


def _cut(x, mask):
    x1, x2 = _pair(x)
    return np.where(mask, x1, 0.0), np.where(mask, x2, 0.0)


def _sub(a, b):
    return a[0] - b[0], a[1] - b[1]


def _add(a, b):
    return a[0] + b[0], a[1] + b[1]


def localized_perturbation(family: WaveFamily, x, sites, size: float, rng, width: float | None = None):
    """Random smooth perturbation near each wave, projected so that both
    orthogonality conditions hold, scaled to l2 size `size`."""
    sites = np.asarray(sites)
    eps = family.eps
    width = width or 1.0 / eps
    g = _geoms(family, x, sites)
    r = np.zeros(len(sites))
    p = np.zeros(len(sites))
    for a, tau in ((1, x[0]), (-1, x[2])):
        m = cutoff_mask(sites, a)
        bump = []
        for _ in range(2):
            f = np.zeros(len(sites))
            for _ in range(4):
                x0 = tau + rng.uniform(-1.0, 1.0) * width
                f += rng.standard_normal() * np.exp(-(((sites - x0) / width) ** 2))
            bump.append(np.where(m, f, 0.0))
        q = project_Q(a, bump, g[a].xi1, g[a].xi2)
        r += q[0]
        p += q[1]
    # the cross-wave tails leave a tiny defect; one more pass per wave removes it
    for a in (1, -1):
        m = cutoff_mask(sites, a)
        part = (np.where(m, r, 0.0), np.where(m, p, 0.0))
        q = project_Q(a, part, g[a].xi1, g[a].xi2)
        r = np.where(m, q[0], r)
        p = np.where(m, q[1], p)
    nrm = math.sqrt(float(np.sum(r * r + p * p)))
    return r * size / nrm, p * size / nrm


# ---------------------------------------------------------------------------
# the matrix A


@dataclass
class ModulationMatrix:
    A: np.ndarray  # 4x4, rows (1+,2+,1-,2-), columns (tau+,c+,tau-,c-)
    Ainv: np.ndarray
    cond: float

    @property
    def A0(self):
        return self.A[:2, :2], self.A[2:, 2:]

    @property
    def A1(self):
        return self.A[:2, 2:], self.A[2:, :2]

    def a1_norm(self) -> float:
        return max(np.linalg.norm(b, 2) for b in self.A1)

    def a0_norm(self) -> float:
        return max(np.linalg.norm(b, 2) for b in self.A0)


def _geoms(family, x, sites):
    tp, cp, tm, cm = x
    return {1: wave_geometry(family, tp, cp, sites), -1: wave_geometry(family, tm, cm, sites)}


def assemble_A(x, family: WaveFamily, sites, geoms=None, max_cond: float = 1e12) -> ModulationMatrix:
    """A[(i,alpha),(j,beta)] = omega_alpha(xi_{i,alpha}, xi_{j,beta} h_alpha)."""
    sites = np.asarray(sites)
    g = geoms or _geoms(family, x, sites)
    A = np.zeros((4, 4))
    for ai, a in enumerate((1, -1)):
        mask = cutoff_mask(sites, a)
        for i in range(2):
            xi_i = (g[a].xi1, g[a].xi2)[i]
            for bi, b in enumerate((1, -1)):
                for j in range(2):
                    xi_j = (g[b].xi1, g[b].xi2)[j]
                    A[2 * ai + i, 2 * bi + j] = omega(a, xi_i, _cut(xi_j, mask))
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularA(f"condition number {cond:.2e} exceeds {max_cond:.0e}")
    return ModulationMatrix(A, np.linalg.inv(A), cond)


# ---------------------------------------------------------------------------
# tubular coordinates


def renormed(dx, eps: float) -> float:
    """sqrt(sum eps^3 dtau^2 + eps^-3 dc^2) over both waves."""
    dx = np.asarray(dx, dtype=float)
    return math.sqrt(eps**3 * (dx[0] ** 2 + dx[2] ** 2) + eps**-3 * (dx[1] ** 2 + dx[3] ** 2))


@dataclass
class TubularCoords:
    tau_plus: float
    c_plus: float
    tau_minus: float
    c_minus: float
    v1: LatticeField
    v2: LatticeField
    defects: np.ndarray
    eps: float
    iterations: int = 0
    contraction: float = 0.0
    small_data_ok: bool = True
    history: list = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return np.array([self.tau_plus, self.c_plus, self.tau_minus, self.c_minus])


def _F(x, u, v1, family, sites, geoms=None):
    g = geoms or _geoms(family, x, sites)
    uh = _add(g[1].u, g[-1].u)
    res1 = _sub(u, uh)
    res2 = _sub(res1, v1)
    F = np.zeros(4)
    for ai, a in enumerate((1, -1)):
        mask = cutoff_mask(sites, a)
        F[2 * ai] = omega(a, g[a].xi1, _cut(res1, mask))
        F[2 * ai + 1] = omega(a, g[a].xi2, _cut(res2, mask))
    return F, g, res1, res2


def _jacobian(x, family, sites, g, res1, res2):
    DF = -assemble_A(x, family, sites, geoms=g).A
    for ai, a in enumerate((1, -1)):
        mask = cutoff_mask(sites, a)
        w1, w2 = _cut(res1, mask), _cut(res2, mask)
        G = g[a]
        DF[2 * ai, 2 * ai] += omega(a, G.d_tau_xi1, w1)
        DF[2 * ai, 2 * ai + 1] += omega(a, G.d_c_xi1, w1)
        DF[2 * ai + 1, 2 * ai] += omega(a, G.d_tau_xi2, w2)
        DF[2 * ai + 1, 2 * ai + 1] += omega(a, G.d_c_xi2, w2)
    return DF


def extract_coordinates(u: LatticeField, v1: LatticeField | None, guess, family: WaveFamily,
                        tol: float = 1e-12, max_iter: int = 60, check_separation: bool = True,
                        t0_factor: float = 5.0) -> TubularCoords:
    """Solve the four orthogonality conditions for (tau+, c+, tau-, c-) by the
    frozen-Jacobian iteration x <- x - DF(x*)^-1 F(x) started at the guess."""
    eps = family.eps
    sites = u.sites
    x = np.array(guess, dtype=float)
    if check_separation:
        T0e = T0(eps, t0_factor)
        if not (x[0] > T0e and x[2] < -T0e):
            raise SeparationTooSmall(f"phases {x[0]:.1f}, {x[2]:.1f} inside +-T0 = {T0e:.1f}")
    uu = (u.r, u.p)
    vv = (np.zeros(u.N), np.zeros(u.N)) if v1 is None else (v1.r, v1.p)
    F, g, res1, res2 = _F(x, uu, vv, family, sites)
    DF = _jacobian(x, family, sites, g, res1, res2)
    cond = np.linalg.cond(DF)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularA(f"frozen Jacobian condition {cond:.2e}")
    J = np.linalg.inv(DF)
    hist, steps = [], []
    it = 0
    for it in range(1, max_iter + 1):
        dx = -J @ F
        x = x + dx
        steps.append(renormed(dx, eps))
        F, g, res1, res2 = _F(x, uu, vv, family, sites)
        hist.append(steps[-1])
        if steps[-1] <= tol:
            break
        if len(steps) >= 3 and steps[-1] >= steps[-2] and steps[-2] >= steps[-3]:
            if steps[-1] > 1e4 * tol:
                raise NoConvergence(f"tubular iteration stalled at step {steps[-1]:.2e}")
            break  # rounding floor
    else:
        raise NoConvergence("tubular iteration did not converge")
    ratios = [steps[i + 1] / steps[i] for i in range(len(steps) - 1)
              if steps[i] > 1e3 * tol and steps[i] > 0]
    contraction = max(ratios) if ratios else 0.0
    if contraction >= 1.0:
        raise NoConvergence(f"contraction factor {contraction:.2f} >= 1")
    v2 = u.replace(r=res2[0], p=res2[1])
    v1f = u.replace(r=vv[0], p=vv[1])
    # smallness precondition (C = 1, eta = 0.1)
    size = v1f.norm()
    for a, G in ((1, g[1]), (-1, g[-1])):
        c = x[1] if a > 0 else x[3]
        tau = x[0] if a > 0 else x[2]
        kap = family.wave(abs(c)).kappa_fpu
        m = cutoff_mask(sites, a)
        e = np.exp(np.clip(a * kap / 2 * (sites - tau), -700, 700))
        size += math.sqrt(float(np.sum(e**2 * m * (res2[0] ** 2 + res2[1] ** 2))))
    small_data = size <= eps ** (2.6)
    return TubularCoords(x[0], x[1], x[2], x[3], v1f, v2, F.copy(), eps, it, contraction, small_data, hist)


@dataclass
class WaveCoords:
    tau: float
    c: float
    v: LatticeField
    defects: np.ndarray
    iterations: int = 0
    contraction: float = 0.0


def extract_wave(u: LatticeField, guess, family: WaveFamily, tol: float = 1e-12,
                 max_iter: int = 60) -> WaveCoords:
    """Single-wave version of extract_coordinates for a window holding one wave.

    ``guess`` = (tau, signed c). No cutoff is applied: the window itself plays
    the role of h_alpha.
    """
    eps = family.eps
    sites = u.sites
    uu = (u.r, u.p)
    x = np.array(guess, dtype=float)
    a = 1 if x[1] > 0 else -1

    def F_of(x):
        f = family.sampler(abs(x[1])).fields(x[0], sites, ("u", "dx", "dc"), a)
        res = _sub(uu, f["u"])
        xi1 = (-f["dx"][0], -f["dx"][1])
        return np.array([omega(a, xi1, res), omega(a, f["dc"], res)]), res

    G = wave_geometry(family, x[0], x[1], sites)
    res = _sub(uu, G.u)
    F = np.array([omega(a, G.xi1, res), omega(a, G.xi2, res)])
    DF = -np.array([[omega(a, G.xi1, G.xi1), omega(a, G.xi1, G.xi2)],
                    [omega(a, G.xi2, G.xi1), omega(a, G.xi2, G.xi2)]])
    DF += np.array([[omega(a, G.d_tau_xi1, res), omega(a, G.d_c_xi1, res)],
                    [omega(a, G.d_tau_xi2, res), omega(a, G.d_c_xi2, res)]])
    try:
        J = np.linalg.inv(DF)
    except np.linalg.LinAlgError as exc:
        raise SingularA(str(exc)) from exc
    steps = []
    it = 0
    for it in range(1, max_iter + 1):
        dx = -J @ F
        x = x + dx
        steps.append(math.sqrt(eps**3 * dx[0] ** 2 + eps**-3 * dx[1] ** 2))
        F, res = F_of(x)
        if steps[-1] <= tol:
            break
        if len(steps) >= 3 and steps[-1] >= steps[-2] >= steps[-3]:
            if steps[-1] > 1e4 * tol:
                raise NoConvergence(f"single-wave iteration stalled at step {steps[-1]:.2e}")
            break
    else:
        raise NoConvergence("single-wave iteration did not converge")
    ratios = [steps[i + 1] / steps[i] for i in range(len(steps) - 1) if steps[i] > 1e3 * tol]
    contraction = max(ratios) if ratios else 0.0
    if contraction >= 1.0:
        raise NoConvergence(f"contraction factor {contraction:.2f} >= 1")
    return WaveCoords(x[0], x[1], u.replace(r=res[0], p=res[1]), F.copy(), it, contraction)


# ---------------------------------------------------------------------------
# modulation equations


def _JHprime(V: PotentialSpec, z):
    return apply_J_pair((V.dV(z[0]), z[1]))


def _JHsecond(V: PotentialSpec, u, z):
    return apply_J_pair((V.d2V(u[0]) * z[0], z[1]))


@dataclass
class ModulationRHS:
    taudot: np.ndarray  # (tau+, tau-)
    cdot: np.ndarray  # (c+, c-)
    gammadot: np.ndarray  # tau-dot minus speed
    system: np.ndarray
    A: np.ndarray
    B: dict
    N: dict
    Ntilde: dict
    g: dict


def modulation_rhs(coords: TubularCoords, family: WaveFamily, V: PotentialSpec | None = None) -> ModulationRHS:
    """Time derivatives of the coordinates implied by preserving both
    orthogonality conditions along the exact flow (implicit differentiation)."""
    V = V or family.potential
    x = coords.x
    sites = coords.v2.sites
    g = _geoms(family, x, sites)
    v1 = (coords.v1.r, coords.v1.p)
    v2 = (coords.v2.r, coords.v2.p)
    uh = _add(g[1].u, g[-1].u)
    u = _add(_add(uh, v1), v2)
    v = _add(v1, v2)
    du = _JHprime(V, u)
    dv1 = _JHprime(V, v1)
    A = assemble_A(x, family, sites, geoms=g).A
    M = -A.copy()
    rhs = np.zeros(4)
    B, N, Nt, gg = {}, {}, {}, {}
    for ai, a in enumerate((1, -1)):
        m = cutoff_mask(sites, a)
        G = g[a]
        wa, w2a = _cut(v, m), _cut(v2, m)
        Bm = np.array([[omega(a, G.d_tau_xi1, wa), omega(a, G.d_c_xi1, wa)],
                       [omega(a, G.d_tau_xi2, w2a), omega(a, G.d_c_xi2, w2a)]])
        B[a] = Bm
        M[2 * ai:2 * ai + 2, 2 * ai:2 * ai + 2] += Bm
        rhs[2 * ai] = -omega(a, G.xi1, _cut(du, m))
        rhs[2 * ai + 1] = -omega(a, G.xi2, _cut(_sub(du, dv1), m))
        # diagnostic pieces
        Ha = lambda z: (V.dV(z[0]), z[1])
        ua = G.u
        other = g[-a].u
        Hu = Ha(u)
        gA = (Hu[0] - V.dV(v1[0]) - V.dV(ua[0]) - V.dV(other[0]) - V.d2V(ua[0]) * w2a[0],
              Hu[1] - v1[1] - ua[1] - other[1] - w2a[1])
        gg[a] = gA
        JgA = _cut(apply_J_pair(gA), m)
        Nt[a] = (omega(a, G.xi1, JgA), omega(a, G.xi2, JgA))
        v1a = _cut(v1, m)
        Lv1a = _sub(_cut(dv1, m), _JHsecond(V, ua, v1a))
        N[a] = (-omega(a, G.xi1, Lv1a), -omega(a, G.xi1, w2a))
    speeds = np.array([x[1], x[3]])
    # tau-dot = c + gamma-dot
    rhs_g = rhs - M[:, 0] * speeds[0] - M[:, 2] * speeds[1]
    try:
        sol = np.linalg.solve(M, rhs_g)
    except np.linalg.LinAlgError as exc:
        raise SingularA(str(exc)) from exc
    gd = np.array([sol[0], sol[2]])
    cd = np.array([sol[1], sol[3]])
    return ModulationRHS(speeds + gd, cd, gd, M, A, B, N, Nt, gg)

"""Spectral solitary-wave profiles in the long-wave scaling.

A right-moving wave with speed c > 1 has r_c(x) = eps^2 phi(eps x) where
c^2 = 1 + eps^2 beta / 12 and phi solves the rescaled fixed point

    phi = P N(phi),   P(zeta) = eps^2 s / (1 + eps^2 beta/12 - s),  s = sinc^2(eps zeta / 2),
    N(phi) = eps^-4 (V'(eps^2 phi) - eps^2 phi).

At eps = 0 this reduces to the KdV travelling-wave equation with
P = 12 / (zeta^2 + beta) and solution (beta/4) sech^2(sqrt(beta) x / 2).
The velocity is p_c = -c W r_c with W the lattice multiplier
i theta / (e^{i theta} - 1). W alone has poles inside the resolved band, so
W phi is always formed from the combined symbol W P, which has none.
"""
from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import DomainError, NoConvergence, SingularLinearization, WindowViolation
from .lattice import PERIODIC, LatticeField, PotentialSpec, hamiltonian_energy

DEFAULT_POTENTIAL = PotentialSpec.fpu()


# ---------------------------------------------------------------------------
# grid and symbols


@dataclass(frozen=True)
class SpectralGrid:
    L: float
    M: int = 1024

    def __post_init__(self):
        if self.M < 256 or self.M & (self.M - 1):
            raise DomainError("M must be a power of two >= 256")
        if self.L <= 0:
            raise DomainError("L must be positive")

    @classmethod
    def for_beta(cls, beta: float, M: int = 1024, span: float = 80.0) -> "SpectralGrid":
        # 40/sqrt(beta) leaves ~2e-9 at the edges; 80/sqrt(beta) reaches ~4e-18
        return cls(L=span / math.sqrt(beta), M=M)

    @property
    def x(self) -> np.ndarray:
        return -self.L / 2 + np.arange(self.M) * self.L / self.M

    @property
    def zeta(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.M, d=self.L / self.M)

    def h1_norm(self, f) -> float:
        F = np.fft.fft(f)
        return math.sqrt(self.L / self.M**2 * float(np.sum((1 + self.zeta**2) * np.abs(F) ** 2)))

    def l2_norm(self, f) -> float:
        return math.sqrt(self.L / self.M * float(np.sum(np.asarray(f) ** 2)))


def _one_minus_sinc(y):
    """1 - sin(y)/y without cancellation."""
    y = np.abs(np.asarray(y, dtype=float))
    out = np.empty_like(y)
    big = y >= 0.5
    out[big] = 1 - np.sin(y[big]) / y[big]
    ys = y[~big]
    y2 = ys * ys
    term = y2 / 6
    acc = np.zeros_like(ys)
    for k in range(1, 12):
        acc += term
        term = -term * y2 / ((2 * k + 2) * (2 * k + 3))
    out[~big] = acc
    return out


def _sinc(y):
    return 1 - _one_minus_sinc(y)


def _Q(eps, beta, zeta):
    """Denominator with P = 12 s / Q; Q = beta + 12 (1 - s) / eps^2."""
    zeta = np.asarray(zeta, dtype=float)
    if eps == 0:
        return zeta**2 + beta
    y = eps * zeta / 2
    om = _one_minus_sinc(y)
    one_minus_s = om * (2 - om)
    return beta + 12 * one_minus_s / eps**2


def symbol_p(eps: float, beta: float, xi, d_beta: int = 0):
    """Multiplier of the rescaled fixed point, or its beta-derivative of order d_beta."""
    if beta <= 0:
        raise DomainError("beta must be positive")
    if eps < 0:
        raise DomainError("eps must be non-negative")
    xi = np.asarray(xi, dtype=float)
    s = 1.0 if eps == 0 else _sinc(eps * xi / 2) ** 2
    Q = _Q(eps, beta, xi)
    return (-1) ** d_beta * math.factorial(d_beta) * 12 * s / Q ** (d_beta + 1)


def symbol_wp(eps: float, beta: float, xi, d_beta: int = 0):
    """W times the (beta-differentiated) fixed-point multiplier; pole free."""
    xi = np.asarray(xi, dtype=float)
    th = eps * xi
    Q = _Q(eps, beta, xi)
    sym = (-1) ** d_beta * math.factorial(d_beta) * 12 * _sinc(th / 2) / Q ** (d_beta + 1)
    return np.exp(-0.5j * th) * sym


def kdv_profile(beta: float, grid: SpectralGrid) -> np.ndarray:
    if beta <= 0:
        raise DomainError("beta must be positive")
    return beta / 4 / np.cosh(math.sqrt(beta) * grid.x / 2) ** 2


# ---------------------------------------------------------------------------
# speed relations


def speed_from_beta(eps: float, beta: float) -> float:
    return math.sqrt(1 + eps**2 * beta / 12)


def beta_from_speed(eps: float, c: float) -> float:
    return 12 * (c * c - 1) / eps**2


def _sinhc(x: float) -> float:
    if abs(x) < 1e-3:
        x2 = x * x
        return 1 + x2 / 6 + x2 * x2 / 120
    return math.sinh(x) / x


def kappa_root(c: float, kind: str = "fpu_dispersion") -> float:
    """Decay rate: sinh(k/2)/(k/2) = c (fpu_dispersion) or sinh(k)/k = c (toda)."""
    c = abs(c)
    if c <= 1:
        raise DomainError("need |c| > 1")
    if kind == "toda":
        scale = 1.0
    elif kind == "fpu_dispersion":
        scale = 0.5
    else:
        raise DomainError(f"unknown kappa kind {kind!r}")
    g = lambda k: math.log(_sinhc(scale * k)) - math.log(c)
    hi = 1.0
    while g(hi) < 0:
        hi *= 2
    k = brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    for _ in range(3):
        x = scale * k
        # d/dk log(sinh x / x) = scale (coth x - 1/x)
        if x < 1e-3:
            deriv = scale * (x / 3 - x**3 / 45)
        else:
            deriv = scale * (1 / math.tanh(x) - 1 / x)
        step = g(k) / deriv
        k -= step
        if abs(step) <= 1e-16 * k:
            break
    return k


# ---------------------------------------------------------------------------
# nonlinearity in rescaled variables


def _n_eps(V: PotentialSpec, eps: float, phi):
    """eps^-4 N(eps^2 phi)."""
    if V.kind == "poly":
        return V.cubic * phi**2 / 2 + V.quartic * eps**2 * phi**3 / 6
    x = eps**2 * phi
    out = np.empty_like(phi)
    small = np.abs(x) < 0.5
    xs, ps = x[small], phi[small]
    term = ps * ps / 2
    acc = np.zeros_like(ps)
    for k in range(3, 26):
        acc += term
        term = term * xs / k
    out[small] = acc
    xb = x[~small]
    out[~small] = (np.expm1(xb) - xb) / eps**4
    return out


def _dn_eps(V: PotentialSpec, eps: float, phi):
    """eps^-2 (V''(eps^2 phi) - 1)."""
    if V.kind == "poly":
        return V.cubic * phi + V.quartic * eps**2 * phi**2 / 2
    return np.expm1(eps**2 * phi) / eps**2


def _d2n_eps(V: PotentialSpec, eps: float, phi):
    return V.d3V(eps**2 * phi)


def _sym(f):
    """Even part about x = 0 on the grid x_j = -L/2 + j L / M."""
    return 0.5 * (f + np.roll(f[::-1], 1))


# ---------------------------------------------------------------------------
# solver


@dataclass(frozen=True, eq=False)
class SolitaryWave:
    eps: float
    beta: float
    c: float
    kappa_fpu: float
    phi: np.ndarray
    phi_hat: np.ndarray
    residual: float
    grid: SpectralGrid
    potential: PotentialSpec = DEFAULT_POTENTIAL
    iterations: int = 0

    @property
    def amplitude(self) -> float:
        return self.eps**2 * float(np.max(self.phi))


def _linear_solve(p, m, rhs, tol=1e-11):
    M = rhs.size

    def mv(v):
        # identity on the odd part keeps the operator invertible there
        v = np.real(v)
        e = _sym(v)
        return v - np.fft.ifft(p * np.fft.fft(m * e)).real

    mbar = float(np.mean(m))
    den = 1 - p * mbar
    den = np.where(np.abs(den) < 0.1, 1.0, den)

    def pc(v):
        return np.fft.ifft(np.fft.fft(np.real(v)) / den).real

    A = LinearOperator((M, M), matvec=mv, dtype=float)
    P = LinearOperator((M, M), matvec=pc, dtype=float)
    rhs = _sym(rhs)
    x, info = gmres(A, rhs, rtol=tol, atol=0.0, restart=200, maxiter=5, M=P)
    x = _sym(x)
    err = np.max(np.abs(mv(x) - rhs))
    if info < 0 or err > 1e-8 * max(1.0, float(np.max(np.abs(rhs)))):
        raise SingularLinearization(f"linearized solve failed (info={info}, residual={err:.2e})")
    return x


def _newton(eps, beta, grid, V, phi, max_iter, target=2e-14):
    p = symbol_p(eps, beta, grid.zeta)
    hist = []
    for it in range(max_iter + 1):
        F = phi - np.fft.ifft(p * np.fft.fft(_n_eps(V, eps, phi))).real
        res = float(np.max(np.abs(F)))
        hist.append(res)
        if res <= target or not np.isfinite(res):
            break
        if it >= 4 and res > 0.5 * hist[-4]:
            break  # stagnated at the rounding floor or diverging
        if it == max_iter:
            break
        phi = _sym(phi + _linear_solve(p, _dn_eps(V, eps, phi), -F))
    return phi, hist[-1], len(hist) - 1


def solve_profile(eps: float, beta: float = 1.0, grid: SpectralGrid | None = None,
                  potential: PotentialSpec | None = None, tol: float = 1e-12,
                  initial: np.ndarray | None = None, max_iter: int = 100) -> SolitaryWave:
    if not 0 < eps <= 0.5:
        raise DomainError("eps must lie in (0, 0.5]")
    if beta <= 0:
        raise DomainError("beta must be positive")
    grid = grid or SpectralGrid.for_beta(beta)
    V = potential or DEFAULT_POTENTIAL
    start = kdv_profile(beta, grid) if initial is None else np.asarray(initial, dtype=float)
    phi, res, its = _newton(eps, beta, grid, V, _sym(start), max_iter)
    if not res <= tol:
        # continuation in eps from the KdV limit
        phi = kdv_profile(beta, grid)
        for e in eps * np.array([0.25, 0.5, 0.75, 1.0]):
            phi, res, k = _newton(float(e), beta, grid, V, phi, max_iter)
            its += k
        if not res <= tol:
            raise NoConvergence(f"profile residual {res:.2e} above {tol:.0e} (eps={eps}, beta={beta})")
    c = speed_from_beta(eps, beta)
    return SolitaryWave(eps=eps, beta=beta, c=c, kappa_fpu=kappa_root(c, "fpu_dispersion"),
                        phi=phi, phi_hat=np.fft.fft(phi), residual=res, grid=grid,
                        potential=V, iterations=its)


def fixed_point_residual(w: SolitaryWave) -> float:
    p = symbol_p(w.eps, w.beta, w.grid.zeta)
    F = w.phi - np.fft.ifft(p * np.fft.fft(_n_eps(w.potential, w.eps, w.phi))).real
    return float(np.max(np.abs(F)))


@dataclass(frozen=True, eq=False)
class ProfileDerivatives:
    dphi_dbeta: np.ndarray
    d2phi_dbeta2: np.ndarray | None
    # spectra of W-applied quantities, built from pole-free symbols
    w_phi_hat: np.ndarray
    w_dphi_hat: np.ndarray
    w_d2phi_hat: np.ndarray | None

    def dx(self, f, grid: SpectralGrid) -> np.ndarray:
        F = np.fft.fft(f) * 1j * grid.zeta
        F[grid.M // 2] = 0.0
        return np.fft.ifft(F).real


def profile_derivatives(w: SolitaryWave, order: int = 2) -> ProfileDerivatives:
    """Implicit beta-derivatives of phi from the differentiated fixed point."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if w.residual > 1e-12:
        raise SingularLinearization("profile residual too large to differentiate")
    z, e, b, V = w.grid.zeta, w.eps, w.beta, w.potential
    fft, ifft = np.fft.fft, np.fft.ifft
    p0, p1, p2 = (symbol_p(e, b, z, k) for k in range(3))
    wp0, wp1, wp2 = (symbol_wp(e, b, z, k) for k in range(3))
    Nh = fft(_n_eps(V, e, w.phi))
    m = _dn_eps(V, e, w.phi)
    d1 = _linear_solve(p0, m, ifft(p1 * Nh).real)
    g1 = fft(m * d1)
    w_phi = wp0 * Nh
    w_d1 = wp1 * Nh + wp0 * g1
    d2 = w_d2 = None
    if order == 2:
        n2 = _d2n_eps(V, e, w.phi)
        rhs = ifft(p2 * Nh + 2 * p1 * g1 + p0 * fft(n2 * d1**2)).real
        d2 = _linear_solve(p0, m, rhs)
        w_d2 = wp2 * Nh + 2 * wp1 * g1 + wp0 * fft(n2 * d1**2 + m * d2)
    return ProfileDerivatives(d1, d2, w_phi, w_d1, w_d2)


# ---------------------------------------------------------------------------
# lattice sampling


def _window(window):
    if isinstance(window, LatticeField):
        return window.offset, window.N, window.boundary
    offset, N = window[:2]
    return int(offset), int(N), (window[2] if len(window) > 2 else PERIODIC)


def evaluate_spectra(spectra: np.ndarray, grid: SpectralGrid, X: np.ndarray) -> np.ndarray:
    """Trigonometric interpolants of the given grid spectra at points X.

    Points outside (-L/2, L/2) get 0. ``spectra`` has shape (k, M).
    """
    spectra = np.atleast_2d(spectra)
    out = np.zeros((spectra.shape[0], X.size))
    inside = np.abs(X) < grid.L / 2
    if not np.any(inside):
        return out
    Xi = X[inside] + grid.L / 2
    z = grid.zeta
    for lo in range(0, Xi.size, 512):
        E = np.exp(1j * np.outer(Xi[lo:lo + 512], z))
        out[:, np.flatnonzero(inside)[lo:lo + 512]] = (spectra @ E.T).real / grid.M
    return out


class WaveSampler:
    """Lattice samples of one wave and its tau/c derivatives.

    ``direction`` = -1 gives the left mover with signed speed -c; its r-profile is
    the same even function and p = -c_signed W r covers both directions.
    """

    NAMES = ("u", "dx", "dc", "dcc", "dxx", "dxc")

    def __init__(self, wave: SolitaryWave, derivs: ProfileDerivatives | None = None):
        self.wave = wave
        self.derivs = derivs
        e = wave.eps
        self._R0 = e**2 * wave.phi_hat
        self._WR0 = e**2 * (derivs.w_phi_hat if derivs else
                            symbol_wp(e, wave.beta, wave.grid.zeta) * np.fft.fft(_n_eps(wave.potential, e, wave.phi)))
        self._dxsym = 1j * e * wave.grid.zeta
        self._dxsym[wave.grid.M // 2] = 0.0

    def _base(self, cs: float):
        e = self.wave.eps
        out = {"u": (self._R0, -cs * self._WR0)}
        if self.derivs is not None:
            d = self.derivs
            b1, b2 = 24 * cs / e**2, 24 / e**2
            R1 = e**2 * b1 * np.fft.fft(d.dphi_dbeta)
            WR1 = e**2 * b1 * d.w_dphi_hat
            out["dc"] = (R1, -self._WR0 - cs * WR1)
            if d.d2phi_dbeta2 is not None:
                R2 = e**2 * (b1**2 * np.fft.fft(d.d2phi_dbeta2) + b2 * np.fft.fft(d.dphi_dbeta))
                WR2 = e**2 * (b1**2 * d.w_d2phi_hat + b2 * d.w_dphi_hat)
                out["dcc"] = (R2, -2 * WR1 - cs * WR2)
        return out

    def spectra(self, names, direction: int = 1) -> dict:
        cs = direction * self.wave.c
        base = self._base(cs)
        D = self._dxsym
        res = {}
        for n in names:
            if n in base:
                res[n] = base[n]
            elif n == "dx":
                res[n] = tuple(D * s for s in base["u"])
            elif n == "dxx":
                res[n] = tuple(D * D * s for s in base["u"])
            elif n == "dxc":
                if "dc" not in base:
                    raise ValueError("c-derivatives need profile derivatives")
                res[n] = tuple(D * s for s in base["dc"])
            else:
                raise ValueError(f"unknown or unavailable field {n!r}")
        return res

    def fields(self, tau: float, sites: np.ndarray, names=("u",), direction: int = 1) -> dict:
        """name -> (r, p) sampled at lattice sites k, i.e. profile at k - tau."""
        spec = self.spectra(names, direction)
        stack = np.array([s for n in names for s in spec[n]])
        X = self.wave.eps * (np.asarray(sites, dtype=float) - tau)
        vals = evaluate_spectra(stack, self.wave.grid, X)
        return {n: (vals[2 * i], vals[2 * i + 1]) for i, n in enumerate(names)}


    def table(self, names=("u",), direction: int = 1, per_site: int = 16) -> "ProfileTable":
        """Cubic-spline tables of the fields on a grid of spacing 1/per_site sites."""
        half = self.wave.grid.L / (2 * self.wave.eps)
        x = np.linspace(-half, half, int(2 * half * per_site) + 1)
        vals = self.fields(0.0, x, names, direction)
        return ProfileTable(half, {n: (CubicSpline(x, v[0]), CubicSpline(x, v[1]))
                                   for n, v in vals.items()})


@dataclass
class ProfileTable:
    """Fast evaluation of sampled fields at arbitrary shifts, zero outside the grid."""

    half: float
    splines: dict

    def fields(self, tau: float, sites, names=("u",)) -> dict:
        y = np.asarray(sites, dtype=float) - tau
        inside = np.abs(y) < self.half
        out = {}
        for n in names:
            r = np.zeros(y.size)
            p = np.zeros(y.size)
            r[inside] = self.splines[n][0](y[inside])
            p[inside] = self.splines[n][1](y[inside])
            out[n] = (r, p)
        return out


def sample_lattice_wave(w: SolitaryWave, tau: float, window, direction: int = 1,
                        check: bool = True) -> LatticeField:
    offset, N, boundary = _window(window)
    sites = np.arange(offset, offset + N)
    if check and boundary != PERIODIC:
        reach = 32.2 / w.kappa_fpu  # e^{-kappa margin} <= 1e-14
        if tau - reach < offset or tau + reach > offset + N - 1:
            raise WindowViolation("window too small for the wave tail")
    r, p = WaveSampler(w).fields(tau, sites, ("u",), direction)["u"]
    return LatticeField(offset, r, p, boundary)


def wave_window(w: SolitaryWave, tau: float = 0.0, margin: float = 40.0, boundary: str = PERIODIC):
    """A window centred on tau wide enough that the tails fall below e^{-margin}."""
    half = int(math.ceil(margin / w.kappa_fpu)) + 2
    c = int(round(tau))
    return (c - half, 2 * half + 1, boundary)


# ---------------------------------------------------------------------------
# families with caching


class WaveFamily:
    """Profiles of one potential at fixed eps, cached by speed with warm starts."""

    def __init__(self, eps: float, beta_ref: float = 1.0, potential: PotentialSpec | None = None,
                 M: int = 1024, cache_size: int = 64):
        self.eps = eps
        self.potential = potential or DEFAULT_POTENTIAL
        # a little extra span so modulated speeds keep the edge decay
        self.grid = SpectralGrid.for_beta(0.8 * beta_ref, M=M)
        self._cache: OrderedDict = OrderedDict()
        self.cache_size = cache_size

    def sampler(self, c: float) -> WaveSampler:
        c = abs(float(c))
        if c in self._cache:
            self._cache.move_to_end(c)
            return self._cache[c]
        beta = beta_from_speed(self.eps, c)
        init = None
        if self._cache:
            near = min(self._cache, key=lambda k: abs(k - c))
            init = self._cache[near].wave.phi
        w = solve_profile(self.eps, beta, self.grid, self.potential, initial=init)
        s = WaveSampler(w, profile_derivatives(w, 2))
        self._cache[c] = s
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return s

    def wave(self, c: float) -> SolitaryWave:
        return self.sampler(c).wave


# ---------------------------------------------------------------------------
# diagnostics


def energy_slope(eps: float, beta: float = 1.0, potential: PotentialSpec | None = None,
                 M: int = 1024) -> float:
    """dH(u_c)/dc by a central difference with step eps^2 * 1e-3."""
    V = potential or DEFAULT_POTENTIAL
    c = speed_from_beta(eps, beta)
    dc = eps**2 * 1e-3
    grid = SpectralGrid.for_beta(beta * 0.9, M=M)
    w0 = solve_profile(eps, beta, grid, V)
    win = wave_window(w0, 0.0, margin=45.0)
    H = []
    for cc in (c - dc, c + dc):
        w = solve_profile(eps, beta_from_speed(eps, cc), grid, V, initial=w0.phi)
        H.append(hamiltonian_energy(sample_lattice_wave(w, 0.0, win), V))
    return (H[1] - H[0]) / (2 * dc)


def save_profile(w: SolitaryWave, stem) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    head = {"eps": w.eps, "beta": w.beta, "c": w.c, "kappa": w.kappa_fpu, "L": w.grid.L,
            "M": w.grid.M, "residual": w.residual, "potential": w.potential.as_dict()}
    jp, cp = stem.with_suffix(".json"), stem.with_suffix(".csv")
    jp.write_text(json.dumps(head, indent=2, default=lambda v: format(v, ".17g")))
    with cp.open("w") as fh:
        fh.write("x,phi\n")
        for x, f in zip(w.grid.x, w.phi):
            fh.write(f"{x:.17g},{f:.17g}\n")
    return jp, cp


def load_profile(stem) -> SolitaryWave:
    stem = Path(stem)
    head = json.loads(stem.with_suffix(".json").read_text())
    data = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1)
    grid = SpectralGrid(float(head["L"]), int(head["M"]))
    V = PotentialSpec(**head["potential"])
    eps, beta = float(head["eps"]), float(head["beta"])
    phi = data[:, 1]
    c = speed_from_beta(eps, beta)
    w = SolitaryWave(eps, beta, c, kappa_root(c), phi, np.fft.fft(phi), 0.0, grid, V)
    res = fixed_point_residual(w)
    if res > 1e-12:
        raise NoConvergence(f"loaded profile fails residual check ({res:.2e})")
    return SolitaryWave(eps, beta, c, w.kappa_fpu, phi, w.phi_hat, res, grid, V)

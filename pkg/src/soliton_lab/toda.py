"""Toda solitons, Backlund operators and the linearized Toda flows.

Conventions. With V(x) = e^x - 1 - x the soliton of speed c > 1 has
displacement q_n(t) = -Q_c(n, t),

    Q_c(n, t) = log( cosh(k(n - ct)) / cosh(k(n - ct + 1)) ),   sinh k = k c,

so r_n = Q_c(n) - Q_c(n+1) and p_n = -dQ_c/dt. In terms of the even profile
R(x) = log(1 + sinh^2 k sech^2 kx) this is r_n(t) = R(n - (ct - 1)).

The Backlund coefficient is A = e^{Q_c(., t)}, i.e. A_n = q_n / q_{n+1} with
q_n = cosh k(n - ct). Operators act on window arrays; sequences that tend to
a constant at -infinity (images of the summation operator) are extended by
their first entry, everything else by zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (ConsistencyViolation, DegeneratePairing, ProjectionFailure,
                     StepTooLarge, WindowViolation)
from .lattice import composition_weights
from .profiles import kappa_root


def lncosh(x):
    ax = np.abs(np.asarray(x, dtype=float))
    return ax + np.log1p(np.exp(-2 * ax)) - math.log(2.0)


def _cosh_minus_sinhc(k: float) -> float:
    """cosh k - sinh k / k, accurate for small k."""
    if k > 0.1:
        return math.cosh(k) - math.sinh(k) / k
    acc, term = 0.0, 1.0
    for n in range(1, 10):
        term = k ** (2 * n) / math.factorial(2 * n)
        acc += term * (1 - 1 / (2 * n + 1))
    return acc


class TodaSoliton:
    def __init__(self, c: float):
        if c <= 1:
            raise ValueError("Toda soliton needs c > 1")
        self.c = float(c)
        self.kappa = kappa_root(self.c, "toda")
        self.dkappa_dc = self.kappa / _cosh_minus_sinhc(self.kappa)

    def Q(self, n, t: float = 0.0):
        y = self.kappa * (np.asarray(n, dtype=float) - self.c * t)
        return lncosh(y) - lncosh(y + self.kappa)

    def center(self, t: float = 0.0) -> float:
        return self.c * t - 1.0

    # profiles about their centre
    def R(self, x):
        k = self.kappa
        x = np.asarray(x, dtype=float)
        return lncosh(k * (x - 1)) + lncosh(k * (x + 1)) - 2 * lncosh(k * x)

    def P(self, x):
        k, x = self.kappa, np.asarray(x, dtype=float)
        return self.c * k * (np.tanh(k * (x - 1)) - np.tanh(k * x))

    def state(self, sites, t: float = 0.0, shift: float = 0.0):
        x = np.asarray(sites, dtype=float) - self.center(t) - shift
        return self.R(x), self.P(x)

    def coefficient(self, sites, t: float = 0.0):
        """V''(r) along the soliton, 1 + sinh^2 k sech^2 k(n - centre)."""
        x = np.asarray(sites, dtype=float) - self.center(t)
        return 1 + math.sinh(self.kappa) ** 2 / np.cosh(self.kappa * x) ** 2

    def tangent_vectors(self, sites, t: float = 0.0):
        """xi1 = d/dtau of the translated state (= -d/dx), xi2 = d/dc."""
        k, c = self.kappa, self.c
        x = np.asarray(sites, dtype=float) - self.center(t)
        tm, t0, tp = np.tanh(k * (x - 1)), np.tanh(k * x), np.tanh(k * (x + 1))
        sm, s0 = 1 - tm**2, 1 - t0**2
        Rx = k * (tm + tp - 2 * t0)
        Px = c * k * k * (sm - s0)
        Rk = (x - 1) * tm + (x + 1) * tp - 2 * x * t0
        Pk = c * (tm - t0) + c * k * ((x - 1) * sm - x * s0)
        kp = self.dkappa_dc
        xi1 = (-Rx, -Px)
        xi2 = (Rk * kp, k * (tm - t0) + Pk * kp)
        return xi1, xi2


# ---------------------------------------------------------------------------
# elementary operators


def delta(x):
    """(S - I) x with zero beyond the right edge."""
    x = np.asarray(x, dtype=float)
    out = -x.copy()
    out[:-1] += x[1:]
    return out


def delta_inverse(y):
    """z with (S - I) z = y and z -> 0 at +infinity: z_n = -sum_{k >= n} y_k."""
    y = np.asarray(y, dtype=float)
    return -np.cumsum(y[::-1])[::-1]


def _fwd(x):
    out = np.empty_like(x)
    out[:-1] = x[1:]
    out[-1] = 0.0
    return out


def _back(x):
    out = np.empty_like(x)
    out[1:] = x[:-1]
    out[0] = x[0]
    return out


class BacklundOperators:
    def __init__(self, c: float, sites, t: float = 0.0):
        self.sol = TodaSoliton(c)
        self.c, self.kappa, self.t = self.sol.c, self.sol.kappa, float(t)
        self.sites = np.asarray(sites)
        y = self.kappa * (self.sites - self.c * self.t)
        self.log_q = lncosh(y) + math.log(2.0)  # log cosh k(n - ct)
        self.A = np.exp(self.sol.Q(self.sites, self.t))
        self.Ainv = 1.0 / self.A
        # next-site values, needed at the right edge
        self._Ainv_next = np.exp(-self.sol.Q(self.sites + 1, self.t))
        self.split = int(np.searchsorted(-self.A, -1.0))  # first index with A < 1

    @property
    def q(self):
        return np.exp(self.log_q)

    def apply_A(self, x):
        return self.A * x

    def apply_Ainv(self, x):
        return self.Ainv * x

    def apply_C(self, x):
        """(A - A^-1 S^-1) x."""
        return self.A * x - self.Ainv * _back(x)

    def apply_Chat(self, x):
        """(A - S A^-1) x."""
        return self.A * x - self._Ainv_next * _fwd(x)

    def apply_Ctilde(self, x):
        """(A - S A^-1 S^-1) x."""
        return (self.A - self._Ainv_next) * x

    def apply_Cbar(self, x):
        """(A - A^-1) x."""
        return (self.A - self.Ainv) * x

    def consistency_weight(self):
        """1/(q_n q_{n+1}); y is in the range of C iff sum y_n w_n = 0."""
        y1 = self.kappa * (self.sites + 1 - self.c * self.t)
        return np.exp(-self.log_q - (lncosh(y1) + math.log(2.0)))

    def consistency_defect(self, y) -> float:
        """Relative cancellation defect of the solvability condition of C."""
        terms = self.consistency_weight() * np.asarray(y, dtype=float)
        scale = math.fsum(np.abs(terms))
        return abs(math.fsum(terms)) / scale if scale > 0 else 0.0

    # -- inversions ---------------------------------------------------------

    def _solve_C(self, y):
        """z with C z = y, z -> 0 at +inf and bounded at -inf. Returns (z, mismatch)."""
        A, N, m = self.A, y.size, self.split
        zr = np.zeros(N + 1)  # zr[i] = z_{i-1} from the right recursion
        for i in range(N - 1, max(m - 2, 0) - 1, -1):
            zr[i] = A[i] ** 2 * zr[i + 1] - A[i] * y[i]
        z = np.empty(N)
        z[max(m - 1, 0):] = zr[max(m - 1, 0) + 1:]
        if m <= 1:
            return z, 0.0
        prev = y[0] * A[0] / (A[0] ** 2 - 1)  # constant state at -infinity
        for i in range(0, m - 1):
            prev = (prev + A[i] * y[i]) / A[i] ** 2
            z[i] = prev
        # left recursion continued one more site for the junction mismatch
        left = (prev + A[m - 1] * y[m - 1]) / A[m - 1] ** 2
        return z, left - z[m - 1]

    def invert_C(self, y, tol: float = 1e-8):
        """r' = S z - z where C z = y. Raises if y violates the solvability condition."""
        y = np.asarray(y, dtype=float)
        if not np.any(y):
            return np.zeros_like(y)
        d = self.consistency_defect(y)
        if d > tol:
            raise ConsistencyViolation(f"solvability defect {d:.2e} exceeds {tol:.0e}")
        z, mis = self._solve_C(y)
        err = np.max(np.abs(self.apply_C(z) - y))
        if err > 1e-10 * np.max(np.abs(y)) + 4 * abs(mis) * np.max(self.A):
            raise ConsistencyViolation(f"C solve residual {err:.2e}")
        return delta(z)

    def kernel_Chat(self):
        """Decaying kernel of C-hat, proportional to 1/(q_n q_{n+1}), unit peak."""
        w = self.consistency_weight()
        return w / np.max(w)

    def _solve_Chat_particular(self, y):
        A, N = self.A, y.size
        m = min(max(self.split, 1), N - 1)
        z = np.zeros(N)
        for i in range(m, N - 1):
            z[i + 1] = A[i + 1] * (A[i] * z[i] - y[i])
        for i in range(m - 1, -1, -1):
            z[i] = (y[i] + z[i + 1] / A[i + 1]) / A[i]
        return z

    def invert_Chat(self, y, pairing, tol: float = 1e-12):
        """z with C-hat z = y; the kernel multiple is fixed by pairing(z) = 0.

        ``pairing`` must be affine in z.
        """
        y = np.asarray(y, dtype=float)
        zp = self._solve_Chat_particular(y)
        k = self.kernel_Chat()
        f0 = pairing(zp)
        coef = pairing(zp + k) - f0
        if abs(coef) < tol:
            raise DegeneratePairing(f"kernel pairing coefficient {coef:.2e}")
        z = zp - (f0 / coef) * k
        err = np.max(np.abs(self.apply_Chat(z) - y))
        if err > 1e-10 * max(np.max(np.abs(y)), 1e-300):
            raise DegeneratePairing(f"C-hat solve residual {err:.2e}")
        return z

    # -- the transformation and its inverse ---------------------------------

    def forward(self, r, p, tol: float = 1e-8):
        """(r, p) -> (r', p'):  C D r' = p + Cbar D r,  p' = Ctilde D r' - Chat D r, D = delta^-1."""
        r, p = np.asarray(r, dtype=float), np.asarray(p, dtype=float)
        x = delta_inverse(r)
        rp = self.invert_C(p + self.apply_Cbar(x), tol)
        xp = delta_inverse(rp)
        pp = self.apply_Ctilde(xp) - self.apply_Chat(x)
        return rp, pp

    def inverse(self, rp, pp, xi2, alpha: int = 1):
        """(r', p') -> (r, p) with the free translation fixed by omega(xi2, (r, p)) = 0."""
        from .modulation import omega  # local import: modulation depends on this module

        rp, pp = np.asarray(rp, dtype=float), np.asarray(pp, dtype=float)
        xp = delta_inverse(rp)
        y = self.apply_Ctilde(xp) - pp
        Cxp = self.apply_C(xp)

        def rebuild(z):
            return delta(z), Cxp - self.apply_Cbar(z)

        z = self.invert_Chat(y, lambda z: omega(alpha, xi2, rebuild(z)))
        return rebuild(z)


# ---------------------------------------------------------------------------
# linearized flows


@njit(cache=True)
def _lin_run(r, p, weights, dt, nsteps, t0, c, s2, kappa, off, about):
    """Linear flow r' = (S-1)p, p' = (1-S^-1)(m r), zero beyond both edges.

    m = 1 + s2 sech^2(kappa (n - (c t - 1))) frozen at each substep midpoint.
    """
    N = r.size
    m = np.ones(N)
    t = t0
    for s in range(nsteps):
        for w in weights:
            h = w * dt
            if about:
                cen = c * (t + 0.5 * h) - 1.0 - off
                for i in range(N):
                    y = kappa * (i - cen)
                    if abs(y) < 30.0:
                        ch = math.cosh(y)
                        m[i] = 1.0 + s2 / (ch * ch)
                    else:
                        m[i] = 1.0
            prev = 0.0
            for i in range(N):
                f = m[i] * r[i]
                p[i] += 0.5 * h * (f - prev)
                prev = f
            for i in range(N - 1):
                r[i] += h * (p[i + 1] - p[i])
            r[N - 1] -= h * p[N - 1]
            prev = 0.0
            for i in range(N):
                f = m[i] * r[i]
                p[i] += 0.5 * h * (f - prev)
                prev = f
            t += h


@dataclass
class LinearTrajectory:
    times: np.ndarray
    offsets: list
    r: list
    p: list


def toda_linearized_evolve(w, c: float, T: float, dt: float = 0.05, about: str = "soliton",
                           offset: int = 0, t0: float = 0.0, order: int = 2, stride: int | None = None,
                           margin: int = 0) -> LinearTrajectory:
    """Evolve a perturbation (r, p) on the window starting at site ``offset``.

    about = "soliton" linearizes at the Toda soliton of speed c (centre c t - 1),
    about = "zero" at the rest state.
    """
    if about not in ("soliton", "zero"):
        raise ValueError("about must be 'soliton' or 'zero'")
    nsteps = int(math.ceil(abs(T) / dt - 1e-12)) if T else 0
    h = T / nsteps if nsteps else dt
    wts = composition_weights(order)
    if abs(h) >= 1 or np.max(np.abs(wts)) * abs(h) >= 1:
        raise StepTooLarge("linear flow step too large")
    sol = TodaSoliton(c)
    r, p = np.array(w[0], dtype=float), np.array(w[1], dtype=float)
    stride = stride or max(nsteps, 1)
    times, rs, ps = [t0], [r.copy()], [p.copy()]
    done = 0
    while done < nsteps:
        k = min(stride, nsteps - done)
        _lin_run(r, p, wts, h, k, t0 + done * h, sol.c, math.sinh(sol.kappa) ** 2, sol.kappa,
                 float(offset), about == "soliton")
        done += k
        if margin:
            edge = max(np.max(np.abs(r[:margin])), np.max(np.abs(r[-margin:])))
            if edge > 1e-12 * max(np.max(np.abs(r)), 1e-300):
                raise WindowViolation("linear flow reached the window edge")
        times.append(t0 + done * h)
        rs.append(r.copy())
        ps.append(p.copy())
    return LinearTrajectory(np.array(times), [offset] * len(rs), rs, ps)


# ---------------------------------------------------------------------------
# decay of the linearized flow in the comoving weight


def smooth_random_data(rng, sites, centre: float, width: float, n_bumps: int = 6):
    """Random sums of Gaussian bumps of size ~width near centre, for both components."""
    out = []
    for _ in range(2):
        f = np.zeros(sites.size)
        for _ in range(n_bumps):
            x0 = centre + rng.uniform(-2.0, 2.0) * width
            s = width * rng.uniform(0.5, 1.5)
            f += rng.standard_normal() * np.exp(-((sites - x0) / s) ** 2)
        out.append(f)
    return out


def project_toda(sol: TodaSoliton, sites, v, t: float = 0.0, alpha: int = 1):
    from .modulation import project_Q

    xi1, xi2 = sol.tangent_vectors(sites, t)
    return project_Q(alpha, v, xi1, xi2)


@dataclass
class DecayFit:
    c: float
    a: float
    b_fit: float
    K_fit: float
    r2: float
    b_trials: list
    K_trials: list
    series: list  # per trial (times, norms)


def comoving_norm(r, p, sites, a, centre):
    e = np.exp(a * (sites - centre))
    return math.sqrt(float(np.sum(e * e * (r * r + p * p))))


def decay_rate_estimate(c: float, a: float | None = None, trials: int = 3, T: float | None = None,
                        dt: float = 0.5, seed: int = 0, n_samples: int = 200,
                        width: float | None = None, order: int = 4,
                        reproject: bool = True) -> DecayFit:
    """Fit b, K in |e^{a(.-ct)} w(t)| ~ K e^{-bt} |e^{a(.-ct0)} w(t0)| over the tail half.

    The window moves with the soliton: sites far behind carry weight below
    e^{-30} and are dropped, zeros are appended ahead. The exact flow keeps
    the symplectic orthogonality to the moving tangent vectors; the discrete
    flow leaks slightly into the neutral directions, so the state is
    re-projected at every sample.
    """
    from .modulation import omega

    sol = TodaSoliton(c)
    k = sol.kappa
    a = a if a is not None else k / 2
    if not 0 < a < k:
        raise ValueError("need 0 < a < kappa")
    width = width or 2.0 / k
    b_guess = a * c - 2 * math.sinh(a / 2)
    T = T or 3.0 / b_guess
    behind = int(math.ceil(30.0 / a))
    ahead = int(math.ceil(6 * width + 20 / k))
    N = behind + ahead
    rng = np.random.default_rng(seed)
    wts = composition_weights(order)
    s2 = math.sinh(k) ** 2
    out_b, out_K, series = [], [], []
    for _ in range(trials):
        off = -behind
        sites = np.arange(off, off + N)
        v = smooth_random_data(rng, sites, sol.center(0.0) + 2 * width, width)
        v = project_toda(sol, sites, v)
        xi1, xi2 = sol.tangent_vectors(sites)
        scale = math.sqrt(np.sum(v[0] ** 2 + v[1] ** 2))
        for xi in (xi1, xi2):
            den = math.sqrt(np.sum(xi[0] ** 2 + xi[1] ** 2)) * scale
            if abs(omega(1, xi, v)) > 1e-8 * den:
                raise ProjectionFailure("projected data not orthogonal")
        r, p = np.array(v[0]), np.array(v[1])
        n0 = comoving_norm(r, p, sites, a, 0.0)
        nsteps = int(math.ceil(T / dt))
        chunk = max(1, nsteps // n_samples)
        recentre = max(1, int(2 * width / (c * dt)))
        ts, ns = [0.0], [1.0]
        done = 0
        while done < nsteps:
            target = min(done + chunk, nsteps)
            while done < target:
                # recentre often enough that nothing reaches the zero edge ahead
                kk = min(recentre, target - done)
                _lin_run(r, p, wts, dt, kk, done * dt, sol.c, s2, k, float(off), True)
                done += kk
                t = done * dt
                shift = int(math.floor(sol.center(t) - behind - off))
                if shift > 0:
                    r = np.concatenate([r[shift:], np.zeros(shift)])
                    p = np.concatenate([p[shift:], np.zeros(shift)])
                    off += shift
            sites = np.arange(off, off + N)
            if reproject:
                r, p = project_toda(sol, sites, (r, p), t)
                r, p = np.array(r), np.array(p)
            ts.append(t)
            ns.append(comoving_norm(r, p, sites, a, c * t) / n0)
        ts, ns = np.array(ts), np.array(ns)
        tail = ts >= ts[-1] / 2
        slope, icpt = np.polyfit(ts[tail], np.log(ns[tail]), 1)
        out_b.append(-slope)
        out_K.append(math.exp(icpt))
        series.append((ts, ns))
    tt = np.concatenate([s[0][s[0] >= s[0][-1] / 2] for s in series])
    ll = np.concatenate([np.log(s[1][s[0] >= s[0][-1] / 2]) for s in series])
    slope, icpt = np.polyfit(tt, ll, 1)
    pred = slope * tt + icpt
    r2 = 1 - np.sum((ll - pred) ** 2) / max(np.sum((ll - ll.mean()) ** 2), 1e-300)
    return DecayFit(c, a, float(np.median(out_b)), float(np.median(out_K)), float(r2),
                    out_b, out_K, series)


def operator_norm_band(c: float, a: float | None = None, N: int | None = None):
    """l2_a operator norms of the diagonal operators Cbar and Ctilde, divided by kappa.

    Diagonal operators commute with the weight, so the norm is the sup of |diagonal|.
    """
    sol = TodaSoliton(c)
    k = sol.kappa
    N = N or int(80 / k)
    sites = np.arange(-N, N)
    ops = BacklundOperators(c, sites)
    cbar = np.max(np.abs(ops.A - ops.Ainv))
    ctil = np.max(np.abs(ops.A - ops._Ainv_next))
    return cbar / k, ctil / k

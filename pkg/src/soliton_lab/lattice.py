"""Lattice state, potentials, Hamiltonian and the symplectic time stepper.

Dynamics of the nearest-neighbour chain in relative coordinates:

    r' = (S - 1) p,        p' = (1 - S^-1) V'(r),      (S x)_n = x_{n+1}.

Fields live on a finite window of sites ``offset .. offset+N-1``. Outside a
zero-padded window every entry is exactly zero; a periodic window wraps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .errors import DomainError, OverflowGuard, StepTooLarge, WindowViolation

PERIODIC = "periodic"
ZERO = "zero"

# ---------------------------------------------------------------------------
# potentials

_TODA, _POLY = 0, 1


def _toda_V(x):
    x = np.asarray(x, dtype=float)
    out = np.expm1(x) - x
    small = np.abs(x) < 0.5
    if np.any(small):
        xs = x[small]
        # e^x - 1 - x by its Taylor series; avoids cancellation near 0
        acc = np.zeros_like(xs)
        term = xs * xs / 2.0
        for k in range(3, 24):
            acc += term
            term = term * xs / k
        out[small] = acc
    return out


@dataclass(frozen=True)
class PotentialSpec:
    """Interaction potential normalized so that V''(0) = V'''(0) = 1.

    kind "toda":  V(x) = e^x - 1 - x.
    kind "poly":  V(x) = x^2/2 + cubic x^3/6 + quartic x^4/24  (cubic must be 1).
    """

    kind: str = "poly"
    cubic: float = 1.0
    quartic: float = 0.0

    def __post_init__(self):
        if self.kind not in ("toda", "poly"):
            raise DomainError(f"unknown potential kind {self.kind!r}")
        self._check_normalization()

    @classmethod
    def toda(cls) -> "PotentialSpec":
        return cls(kind="toda")

    @classmethod
    def fpu(cls, quartic: float = 0.0) -> "PotentialSpec":
        return cls(kind="poly", cubic=1.0, quartic=quartic)

    @property
    def code(self) -> int:
        return _TODA if self.kind == "toda" else _POLY

    def V(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "toda":
            return _toda_V(x)
        return x * x / 2 + self.cubic * x**3 / 6 + self.quartic * x**4 / 24

    def dV(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "toda":
            return np.expm1(x)
        return x + self.cubic * x * x / 2 + self.quartic * x**3 / 6

    def d2V(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "toda":
            return np.exp(x)
        return 1.0 + self.cubic * x + self.quartic * x * x / 2

    def d3V(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "toda":
            return np.exp(x)
        return self.cubic + self.quartic * x

    def d4V(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "toda":
            return np.exp(x)
        return np.full_like(x, self.quartic)

    def nonlinearity(self, x):
        """N(r) = V'(r) - r."""
        x = np.asarray(x, dtype=float)
        if self.kind == "toda":
            return np.expm1(x) - x
        return self.cubic * x * x / 2 + self.quartic * x**3 / 6

    def _check_normalization(self, h=1e-3, tol=1e-6):
        V = lambda t: float(self.V(np.array([t]))[0])
        dV = lambda t: float(self.dV(np.array([t]))[0])
        checks = {
            "V(0)": (V(0.0), 0.0),
            "V'(0)": ((V(h) - V(-h)) / (2 * h), 0.0),
            "V''(0)": ((V(h) - 2 * V(0.0) + V(-h)) / h**2, 1.0),
            "V'''(0)": ((dV(h) - 2 * dV(0.0) + dV(-h)) / h**2, 1.0),
        }
        for name, (got, want) in checks.items():
            if abs(got - want) > tol:
                raise DomainError(f"potential fails normalization: {name} = {got:.3e}, expected {want}")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "cubic": self.cubic, "quartic": self.quartic}


def normalize_potential(a2: float, a3: float, a4: float = 0.0):
    """Rescale V(x) = a2 x^2/2 + a3 x^3/6 + a4 x^4/24 to normalized form.

    With r = s R and time/amplitude rescaled so that V''(0) = V'''(0) = 1, the
    normalized quartic coefficient is a4 a2 / a3^2. Returns (spec, s, time_scale)
    where r_physical = s * r_normalized and t_physical = time_scale * t_normalized.
    """
    if a2 <= 0 or a3 == 0:
        raise DomainError("need a2 > 0 and a3 != 0 to normalize")
    s = a2 / a3
    time_scale = 1.0 / math.sqrt(a2)
    return PotentialSpec.fpu(quartic=a4 * a2 / a3**2), s, time_scale


# ---------------------------------------------------------------------------
# fields


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LatticeField:
    offset: int
    r: np.ndarray
    p: np.ndarray
    boundary: str = PERIODIC

    def __post_init__(self):
        r, p = _frozen(self.r), _frozen(self.p)
        if r.ndim != 1 or r.shape != p.shape or r.size < 2:
            raise ValueError("r and p must be 1-d arrays of equal length >= 2")
        if self.boundary not in (PERIODIC, ZERO):
            raise ValueError(f"boundary must be {PERIODIC!r} or {ZERO!r}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "offset", int(self.offset))

    @classmethod
    def zeros(cls, offset: int, N: int, boundary: str = PERIODIC) -> "LatticeField":
        return cls(offset, np.zeros(N), np.zeros(N), boundary)

    @property
    def N(self) -> int:
        return self.r.size

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.N)

    def replace(self, **kw) -> "LatticeField":
        d = dict(offset=self.offset, r=self.r, p=self.p, boundary=self.boundary)
        d.update(kw)
        return LatticeField(**d)

    def _check_same(self, other):
        if other.offset != self.offset or other.N != self.N:
            raise ValueError("fields live on different windows")

    def __add__(self, other):
        self._check_same(other)
        return self.replace(r=self.r + other.r, p=self.p + other.p)

    def __sub__(self, other):
        self._check_same(other)
        return self.replace(r=self.r - other.r, p=self.p - other.p)

    def __neg__(self):
        return self.replace(r=-self.r, p=-self.p)

    def __mul__(self, s: float):
        return self.replace(r=s * self.r, p=s * self.p)

    __rmul__ = __mul__

    def norm(self) -> float:
        return math.sqrt(math.fsum(self.r**2) + math.fsum(self.p**2))

    def sup(self) -> float:
        return float(max(np.max(np.abs(self.r)), np.max(np.abs(self.p))))

    def on_window(self, offset: int, N: int) -> "LatticeField":
        """Copy onto another window, zero filling new sites and dropping lost ones."""
        r, p = np.zeros(N), np.zeros(N)
        lo, hi = max(offset, self.offset), min(offset + N, self.offset + self.N)
        if hi > lo:
            r[lo - offset:hi - offset] = self.r[lo - self.offset:hi - self.offset]
            p[lo - offset:hi - offset] = self.p[lo - self.offset:hi - self.offset]
        return LatticeField(offset, r, p, self.boundary)


def shift_fwd(x: np.ndarray, boundary: str) -> np.ndarray:
    """(S x)_n = x_{n+1}."""
    if boundary == PERIODIC:
        return np.roll(x, -1)
    out = np.empty_like(x)
    out[:-1] = x[1:]
    out[-1] = 0.0
    return out


def shift_back(x: np.ndarray, boundary: str) -> np.ndarray:
    """(S^-1 x)_n = x_{n-1}."""
    if boundary == PERIODIC:
        return np.roll(x, 1)
    out = np.empty_like(x)
    out[1:] = x[:-1]
    out[0] = 0.0
    return out


def hamiltonian_energy(u: LatticeField, V: PotentialSpec) -> float:
    return math.fsum(0.5 * u.p**2) + math.fsum(V.V(u.r))


def apply_J(u: LatticeField) -> LatticeField:
    b = u.boundary
    return u.replace(r=shift_fwd(u.p, b) - u.p, p=u.r - shift_back(u.r, b))


def vector_field(u: LatticeField, V: PotentialSpec) -> LatticeField:
    b = u.boundary
    f = V.dV(u.r)
    return u.replace(r=shift_fwd(u.p, b) - u.p, p=f - shift_back(f, b))


# ---------------------------------------------------------------------------
# integrator


@njit(cache=True)
def _dV_nb(kind, c3, c4, x):
    if kind == 0:
        return math.expm1(x)
    return x + c3 * x * x / 2.0 + c4 * x * x * x / 6.0


@njit(cache=True)
def _kick(r, p, h, kind, c3, c4, periodic):
    N = r.size
    prev = _dV_nb(kind, c3, c4, r[N - 1]) if periodic else 0.0
    for n in range(N):
        f = _dV_nb(kind, c3, c4, r[n])
        p[n] += h * (f - prev)
        prev = f


@njit(cache=True)
def _drift(r, p, h, periodic):
    N = r.size
    for n in range(N - 1):
        r[n] += h * (p[n + 1] - p[n])
    last = p[0] if periodic else 0.0
    r[N - 1] += h * (last - p[N - 1])


@njit(cache=True)
def _run(r, p, kicks, drifts, dt, nsteps, kind, c3, c4, periodic):
    """nsteps of a kick-drift composition; adjacent boundary kicks are merged."""
    m = drifts.size
    if nsteps == 0:
        return
    _kick(r, p, kicks[0] * dt, kind, c3, c4, periodic)
    for s in range(nsteps):
        for i in range(m):
            _drift(r, p, drifts[i] * dt, periodic)
            k = kicks[i + 1]
            if i == m - 1 and s < nsteps - 1:
                k += kicks[0]
            _kick(r, p, k * dt, kind, c3, c4, periodic)


def _triple_jump(weights, order):
    g = 2.0 ** (1.0 / order)
    w1 = 1.0 / (2.0 - g)
    w0 = -g / (2.0 - g)
    return [w1 * w for w in weights] + [w0 * w for w in weights] + [w1 * w for w in weights]


def composition_weights(order: int) -> np.ndarray:
    """Substep weights of symmetric compositions of the Strang step."""
    if order == 2:
        return np.array([1.0])
    if order == 4:
        return np.array(_triple_jump([1.0], 3))
    if order == 6:
        return np.array(_triple_jump(_triple_jump([1.0], 3), 5))
    raise ValueError("order must be 2, 4 or 6")


def _kick_drift(order: int):
    w = composition_weights(order)
    kicks = np.empty(w.size + 1)
    kicks[0] = w[0] / 2
    kicks[-1] = w[-1] / 2
    kicks[1:-1] = (w[:-1] + w[1:]) / 2
    return kicks, w.copy()


def _check_dt(dt: float, order: int):
    if abs(dt) >= 1.0:
        raise StepTooLarge(f"|dt| = {abs(dt)} must be < 1")
    big = float(np.max(np.abs(composition_weights(order)))) * abs(dt)
    if big >= 1.0:
        raise StepTooLarge(f"largest composition substep {big:.3f} must be < 1")


def advance_arrays(r: np.ndarray, p: np.ndarray, V: PotentialSpec, dt: float, nsteps: int,
                   boundary: str = PERIODIC, order: int = 2) -> None:
    """In-place advance of raw arrays; the hot path used by experiments."""
    _check_dt(dt, order)
    kicks, drifts = _kick_drift(order)
    _run(r, p, kicks, drifts, float(dt), int(nsteps), V.code, float(V.cubic), float(V.quartic),
         boundary == PERIODIC)


def step_strang(u: LatticeField, V: PotentialSpec, dt: float) -> LatticeField:
    """One kick-drift-kick step. Symplectic and time reversible."""
    r, p = u.r.copy(), u.p.copy()
    advance_arrays(r, p, V, dt, 1, u.boundary, order=2)
    return u.replace(r=r, p=p)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    observed: dict = field(default_factory=dict)

    @property
    def final(self) -> LatticeField:
        return self.states[-1]


def check_margin(u: LatticeField, margin: int, thresh: float = 1e-12):
    if u.boundary != ZERO or not margin:
        return
    m = min(margin, u.N // 2)
    edge = np.concatenate([u.r[:m], u.r[-m:], u.p[:m], u.p[-m:]])
    if np.max(np.abs(edge)) > thresh:
        raise WindowViolation(f"field exceeds {thresh:g} within {m} sites of the window edge")


def evolve(u: LatticeField, V: PotentialSpec, T: float, dt: float = 0.05,
           observers: dict[str, Callable] | None = None, stride: int = 1,
           keep_states: bool = True, order: int = 2, margin: int | None = None) -> Trajectory:
    """Integrate to time T. The step is shrunk slightly so the run ends exactly at T.

    Observers are called as fn(t, u) at t = 0, every ``stride`` steps and at T.
    ``margin`` (zero-padded windows only) is the number of edge sites that must
    stay below 1e-12.
    """
    observers = observers or {}
    nsteps = int(math.ceil(abs(T) / abs(dt) - 1e-12)) if T != 0 else 0
    h = T / nsteps if nsteps else dt
    _check_dt(h, order)
    traj = Trajectory(observed={k: [] for k in observers})
    r, p = u.r.copy(), u.p.copy()

    def record(t, state):
        if margin:
            check_margin(state, margin)
        traj.times.append(t)
        if keep_states or not traj.states:
            traj.states.append(state)
        else:
            traj.states[-1] = state
        for name, fn in observers.items():
            traj.observed[name].append(fn(t, state))

    record(0.0, u)
    done = 0
    while done < nsteps:
        k = min(stride, nsteps - done)
        advance_arrays(r, p, V, h, k, u.boundary, order)
        done += k
        record(done * h, u.replace(r=r.copy(), p=p.copy()))
    return traj


# ---------------------------------------------------------------------------
# weighted norms and cutoffs


@dataclass(frozen=True)
class WeightSpec:
    a: float = 0.1
    abar: float = 0.01
    tau: float = 0.0
    alpha: int = 1

    def __post_init__(self):
        if self.a <= 0 or self.abar <= 0:
            raise DomainError("weight rates must be positive")
        if self.alpha not in (1, -1):
            raise DomainError("alpha must be +1 or -1")


def _components(x, offset):
    if isinstance(x, LatticeField):
        return [x.r, x.p], x.offset
    return [np.asarray(x, dtype=float)], offset


def weighted_norm(x, w: WeightSpec, mode: str = "plain", offset: int = 0) -> float:
    """Plain, one-sided exponential or two-sided exponential l2 norm.

    ``x`` is a LatticeField (both components enter) or a sequence whose first
    entry sits at site ``offset``.
    """
    comps, off = _components(x, offset)
    k = off + np.arange(comps[0].size)
    if mode == "plain":
        expo = np.zeros(k.size)
    elif mode == "one_sided":
        expo = 2 * w.alpha * w.a * (k - w.tau)
    elif mode == "two_sided":
        expo = -2 * w.abar * np.abs(k - w.tau)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    top = float(np.max(expo))
    if top > 700:
        raise OverflowGuard(f"weight exponent {top:.1f} exceeds 700")
    sq = sum(c**2 for c in comps)
    terms = np.exp(expo - top) * sq
    terms = terms[np.argsort(-expo, kind="stable")]
    return math.exp(top / 2) * math.sqrt(math.fsum(terms))


def cutoff_mask(sites: np.ndarray, alpha: int) -> np.ndarray:
    """h_+ = indicator of k >= 0, h_- = indicator of k < 0."""
    return sites >= 0 if alpha > 0 else sites < 0


def localize(u, alpha: int, offset: int = 0):
    if isinstance(u, LatticeField):
        m = cutoff_mask(u.sites, alpha)
        return u.replace(r=np.where(m, u.r, 0.0), p=np.where(m, u.p, 0.0))
    x = np.asarray(u, dtype=float)
    m = cutoff_mask(offset + np.arange(x.size), alpha)
    return np.where(m, x, 0.0)

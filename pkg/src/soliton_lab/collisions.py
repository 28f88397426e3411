"""Two-wave collision, stability and diagnostic experiments.

Geometry. ``build_collision_state`` returns the outgoing configuration: the
right mover (speed c_+) at +tau0 and the left mover (speed c_-) at -tau0, the
layout in which the orthogonality conditions with the cut at site 0 make
sense. ``run_collision`` negates p (FPU is reversible under (r, p, t) ->
(r, -p, -t)), so the waves approach, cross near t = 0 and separate again.
Before the crossing the coordinates are read from the time-reversed state,
after it from the state itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, InteractionWindowTooLong, NoConvergence, SeparationTooSmall,
                     SingularA, SolitonLabError, SpeedViolation)
from .lattice import (ZERO, LatticeField, PotentialSpec, advance_arrays, cutoff_mask,
                      hamiltonian_energy)
from .modulation import (T0, extract_coordinates, extract_wave, localized_perturbation,
                         synthesize)
from .profiles import DEFAULT_POTENTIAL, WaveFamily, beta_from_speed


def kdv_speed(eps: float, beta: float) -> float:
    """1 + eps^2 beta / 12, the speed parametrisation used for collisions."""
    return 1.0 + eps**2 * beta / 12.0


@dataclass
class CollisionConfig:
    eps: float
    beta_plus: float = 1.0
    beta_minus: float = 1.0
    tau0: float | None = None  # default 1.5 T0
    T_pre: float | None = None  # default: time to the crossing
    T_post: float | None = None  # default: T_pre
    dt: float = 0.05
    window: int | None = None  # half width in sites
    seed: int = 0
    perturbation: float = 0.0  # l2 size of an injected localized perturbation
    stride: float = 1.0  # time between extractions
    order: int = 4
    t0_factor: float = 5.0
    M: int = 1024
    potential: PotentialSpec = field(default_factory=lambda: DEFAULT_POTENTIAL)

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ConfigError(f"eps must lie in (0, 1), got {self.eps}")
        for name in ("beta_plus", "beta_minus"):
            b = getattr(self, name)
            if not 0 <= b <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {b}")
        if self.tau0 is None:
            self.tau0 = 1.5 * self.T0
        if self.tau0 <= self.T0:
            raise ConfigError(f"tau0 = {self.tau0} must exceed T0 = {self.T0:.2f}")
        cmax = max(self.c_plus, -self.c_minus)
        if self.T_pre is None:
            self.T_pre = self.tau0 / cmax if self.beta_plus and self.beta_minus else 0.0
        if self.T_post is None:
            self.T_post = self.T_pre

    @property
    def T0(self) -> float:
        return T0(self.eps, self.t0_factor)

    @property
    def c_plus(self) -> float:
        return kdv_speed(self.eps, self.beta_plus) if self.beta_plus else 0.0

    @property
    def c_minus(self) -> float:
        return -kdv_speed(self.eps, self.beta_minus) if self.beta_minus else 0.0

    def family(self) -> WaveFamily:
        betas = [beta_from_speed(self.eps, abs(c)) for c in (self.c_plus, self.c_minus) if c]
        return WaveFamily(self.eps, min(betas), self.potential, self.M)

    def half_width(self, family: WaveFamily) -> int:
        if self.window:
            return int(self.window)
        kap = min(family.wave(abs(c)).kappa_fpu for c in (self.c_plus, self.c_minus) if c)
        reach = max(self.tau0, abs(self.c_plus or self.c_minus) * max(self.T_pre, self.T_post))
        return int(math.ceil(reach + 45.0 / kap + 10))

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("eps", "beta_plus", "beta_minus", "tau0", "T_pre",
                                           "T_post", "dt", "window", "seed", "perturbation",
                                           "stride", "order", "t0_factor", "M")}
        d["potential"] = self.potential.as_dict()
        return d


def reverse_momenta(u: LatticeField) -> LatticeField:
    return u.replace(p=-u.p)


def reflect_sites(u: LatticeField) -> LatticeField:
    """(R_n, P_n) = (r_{-n}, -p_{1-n}): maps solutions to solutions, right movers to left movers."""
    p = u.p
    P = -np.concatenate(([0.0], p[:0:-1]))
    return LatticeField(-(u.offset + u.N - 1), u.r[::-1].copy(), P, u.boundary)


def build_collision_state(cfg: CollisionConfig, family: WaveFamily | None = None):
    """Exact superposition u_{c+}(. - tau0) + u_{c-}(. + tau0), plus an optional
    localized perturbation satisfying the orthogonality conditions.

    Returns (state, x0) with x0 = (tau+, c+, tau-, c-).
    """
    family = family or cfg.family()
    W = cfg.half_width(family)
    sites = np.arange(-W, W + 1)
    x0 = np.array([cfg.tau0, cfg.c_plus, -cfg.tau0, cfg.c_minus])
    r, p = synthesize(family, x0, sites)
    if cfg.perturbation > 0:
        rng = np.random.default_rng(cfg.seed)
        dr, dp = localized_perturbation(family, x0, sites, cfg.perturbation, rng)
        r, p = r + dr, p + dp
    return LatticeField(-W, r, p, ZERO), x0


# ---------------------------------------------------------------------------
# residual channels


def _kappa(family, c):
    return family.wave(abs(c)).kappa_fpu


def residual_channels(v: LatticeField, x, family: WaveFamily, core: float = 10.0,
                      reach: float = 20.0) -> dict:
    """Norms of a residual v around the waves at x = (tau+, c+, tau-, c-).

    total: l2 norm. localized: l2 norm on the wave cores |k - tau| <= core/kappa.
    nonlocalized: l2 norm off the cores. weighted_plus/minus: the comoving
    weighted norms (a = kappa/2, cut at site 0) restricted to |k - tau| <= reach/kappa,
    since the weight would otherwise amplify roundoff far ahead of the wave.
    """
    sites = v.sites
    sq = v.r**2 + v.p**2
    out = {"total": math.sqrt(math.fsum(sq))}
    in_core = np.zeros(sites.size, dtype=bool)
    for a, tau, c in ((1, x[0], x[1]), (-1, x[2], x[3])):
        if c == 0:
            continue
        k = _kappa(family, c)
        near = np.abs(sites - tau) <= reach / k
        m = cutoff_mask(sites, a) & near
        e = np.clip(a * k * (sites - tau), -700.0, 700.0)
        out["weighted_plus" if a > 0 else "weighted_minus"] = math.sqrt(math.fsum(np.exp(e) * sq * m))
        in_core |= np.abs(sites - tau) <= core / k
    out["localized"] = math.sqrt(math.fsum(sq * in_core))
    out["nonlocalized"] = math.sqrt(math.fsum(sq * ~in_core))
    return out


def wave_norm(family: WaveFamily, c: float) -> float:
    w = family.sampler(abs(c))
    half = int(45.0 / w.wave.kappa_fpu) + 2
    r, p = w.fields(0.0, np.arange(-half, half + 1), ("u",), 1 if c > 0 else -1)["u"]
    return math.sqrt(math.fsum(r * r + p * p))


# ---------------------------------------------------------------------------
# the collision run


@dataclass
class CollisionRow:
    t: float
    phase: str  # "pre", "interaction" or "post"
    x: np.ndarray | None  # (tau+, c+, tau-, c-) in the frame where the waves separate
    channels: dict | None
    defects: np.ndarray | None
    energy: float
    ok: bool = True
    message: str = ""


@dataclass
class CollisionRecord:
    config: CollisionConfig
    rows: list
    wave_norm: float
    energy_drift: float
    pre_speeds: tuple  # (c+, c-) of the waves that start at +tau0 and -tau0
    post_speeds: tuple
    final: LatticeField | None = None
    initial: LatticeField | None = None

    def phase_rows(self, phase: str):
        return [r for r in self.rows if r.phase == phase and r.ok]

    @property
    def pre_residual(self) -> float:
        """Total residual at the last pre-crossing extraction (separation >= 2 T0)."""
        rows = self.phase_rows("pre")
        return rows[-1].channels["total"] if rows else float("nan")

    @property
    def post_residual(self) -> float:
        rows = self.phase_rows("post")
        return rows[-1].channels["total"] if rows else float("nan")

    def post_channel(self, name: str) -> float:
        rows = self.phase_rows("post")
        return rows[-1].channels[name] if rows else float("nan")

    @property
    def speed_shift(self) -> tuple:
        return tuple(abs(b) - abs(a) for a, b in zip(self.pre_speeds, self.post_speeds))

    def series(self) -> list[dict]:
        out = []
        for r in self.rows:
            row = {"t": r.t, "phase": r.phase, "ok": int(r.ok), "energy": r.energy}
            if r.x is not None:
                row.update(tau_plus=r.x[0], c_plus=r.x[1], tau_minus=r.x[2], c_minus=r.x[3])
                row.update({f"v_{k}": v for k, v in r.channels.items()})
                row.update({f"defect_{i}": d for i, d in enumerate(r.defects)})
            out.append(row)
        return out


def _centroid(u: LatticeField, guess: float, width: float) -> float:
    s = u.sites
    m = np.abs(s - guess) <= width
    w = u.r[m] ** 2
    if w.sum() <= 0:
        return guess
    return float(np.sum(s[m] * w) / np.sum(w))


def run_collision(cfg: CollisionConfig, family: WaveFamily | None = None,
                  keep_final: bool = True, progress=None) -> CollisionRecord:
    """Evolve through the crossing, extracting coordinates while |tau| > T0."""
    family = family or cfg.family()
    V = cfg.potential
    built, x_built = build_collision_state(cfg, family)
    u = reverse_momenta(built)
    T0e = cfg.T0
    n_out = int(math.ceil((cfg.T_pre + cfg.T_post) / cfg.stride - 1e-9))
    h_out = (cfg.T_pre + cfg.T_post) / n_out if n_out else 0.0
    nsub = max(1, int(math.ceil(h_out / cfg.dt - 1e-9))) if n_out else 0
    h = h_out / nsub if nsub else cfg.dt
    r, p = u.r.copy(), u.p.copy()
    rows = []
    # pre-crossing coordinates live in the time-reversed frame
    x_pre = x_built.copy()
    t_pre = -cfg.T_pre
    x_post = None
    t_last_pre = None
    seed_failed = None
    E0 = hamiltonian_energy(u, V)
    for i in range(n_out + 1):
        t = -cfg.T_pre + i * h_out
        if i > 0:
            advance_arrays(r, p, V, h, nsub, ZERO, cfg.order)
        state = u.replace(r=r.copy(), p=p.copy())
        E = hamiltonian_energy(state, V)
        if progress:
            progress(t)
        dt_ = t - t_pre
        # ballistic positions in the reversed frame: the waves move toward 0
        ballistic_pre = x_pre + np.array([-abs(x_pre[1]) * dt_, 0.0, abs(x_pre[3]) * dt_, 0.0])
        if x_post is None and ballistic_pre[0] > T0e and ballistic_pre[2] < -T0e:
            try:
                co = extract_coordinates(reverse_momenta(state), None, ballistic_pre, family,
                                         t0_factor=cfg.t0_factor)
                x_pre, t_pre, t_last_pre = co.x, t, t
                rows.append(CollisionRow(t, "pre", co.x, residual_channels(co.v2, co.x, family),
                                         co.defects, E))
            except SolitonLabError as exc:
                rows.append(CollisionRow(t, "pre", None, None, None, E, False, str(exc)))
            continue
        if x_post is None:
            # the wave from +tau0 now moves left and the one from -tau0 moves right
            dtl = t - t_pre
            guess = np.array([x_pre[2] + abs(x_pre[3]) * dtl, abs(x_pre[3]),
                              x_pre[0] - abs(x_pre[1]) * dtl, -abs(x_pre[1])])
            if guess[0] <= T0e or guess[2] >= -T0e:
                rows.append(CollisionRow(t, "interaction", None, None, None, E, False,
                                         "extraction suspended"))
                continue
            # re-seed: ballistic guess corrected by the centroid of r^2 near each wave
            for j in (0, 2):
                k = _kappa(family, guess[j + 1])
                guess[j] = _centroid(state, guess[j], 4.0 / k)
            try:
                co = extract_coordinates(state, None, guess, family, t0_factor=cfg.t0_factor)
            except (NoConvergence, SingularA, SeparationTooSmall) as exc:
                seed_failed = str(exc)
                rows.append(CollisionRow(t, "post", None, None, None, E, False, seed_failed))
                continue
            x_post, t_post = co.x, t
            rows.append(CollisionRow(t, "post", co.x, residual_channels(co.v2, co.x, family),
                                     co.defects, E))
            continue
        dtp = t - t_post
        guess = x_post + np.array([x_post[1] * dtp, 0.0, x_post[3] * dtp, 0.0])
        try:
            co = extract_coordinates(state, None, guess, family, t0_factor=cfg.t0_factor)
            x_post, t_post = co.x, t
            rows.append(CollisionRow(t, "post", co.x, residual_channels(co.v2, co.x, family),
                                     co.defects, E))
        except SolitonLabError as exc:
            rows.append(CollisionRow(t, "post", None, None, None, E, False, str(exc)))
    if x_post is None and cfg.T_post > 0 and all(c for c in (cfg.c_plus, cfg.c_minus)):
        raise InteractionWindowTooLong(
            "no valid coordinates after the crossing" + (f": {seed_failed}" if seed_failed else ""))
    energies = np.array([row.energy for row in rows])
    drift = float(np.max(np.abs(energies - E0)) / abs(E0)) if abs(E0) > 0 else 0.0
    pre_speeds = (x_pre[1], x_pre[3])
    post_speeds = (x_post[3], x_post[1]) if x_post is not None else (float("nan"),) * 2
    return CollisionRecord(cfg, rows, wave_norm(family, cfg.c_plus or cfg.c_minus), drift,
                           pre_speeds, post_speeds,
                           final=state if keep_final else None, initial=u if keep_final else None)


def time_reversal_defect(rec: CollisionRecord) -> float:
    """Run from the final state back to the start; sup-norm distance to the initial state."""
    cfg = rec.config
    u = reverse_momenta(rec.final)
    n_out = int(math.ceil((cfg.T_pre + cfg.T_post) / cfg.stride - 1e-9))
    h_out = (cfg.T_pre + cfg.T_post) / n_out
    nsub = max(1, int(math.ceil(h_out / cfg.dt - 1e-9)))
    r, p = u.r.copy(), u.p.copy()
    for _ in range(n_out):
        advance_arrays(r, p, cfg.potential, h_out / nsub, nsub, ZERO, cfg.order)
    back = LatticeField(u.offset, r, -p, ZERO)
    return float(max(np.max(np.abs(back.r - rec.initial.r)), np.max(np.abs(back.p - rec.initial.p))))


# ---------------------------------------------------------------------------
# epsilon scans


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float

    @classmethod
    def of(cls, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        s, i = np.polyfit(x, y, 1)
        pred = s * x + i
        ss = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 1.0
        return cls(float(s), float(i), r2)


@dataclass
class ScalingReport:
    rows: list  # one dict per eps
    total: LinearFit
    localized: LinearFit
    nonlocalized: LinearFit
    pre_vs_inverse_eps: LinearFit
    records: list = field(default_factory=list, repr=False)

    def fits(self) -> dict:
        return {k: vars(getattr(self, k)) for k in
                ("total", "localized", "nonlocalized", "pre_vs_inverse_eps")}


def _run_quiet(cfg):
    return run_collision(cfg, keep_final=False)


def scan_epsilon(cfgs: list, progress=None, keep_records: bool = False,
                 jobs: int = 1) -> ScalingReport:
    """Run collisions across eps and fit log residual against log eps.

    With jobs > 1 the runs go to a process pool; each run is sequential, so
    the results do not depend on the pool size."""
    eps = sorted({c.eps for c in cfgs})
    if len(eps) < 4:
        raise ConfigError(f"a scaling fit needs at least 4 eps values, got {len(eps)}")
    cfgs = sorted(cfgs, key=lambda c: -c.eps)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_quiet, cfgs))
    else:
        results = (_run_quiet(c) for c in cfgs)
    rows, recs = [], []
    for cfg, rec in zip(cfgs, results):
        shift = rec.speed_shift
        rows.append({"eps": cfg.eps, "residual_total": rec.post_residual,
                     "residual_loc": rec.post_channel("localized"),
                     "residual_nonloc": rec.post_channel("nonlocalized"),
                     "c_shift_plus": shift[0], "c_shift_minus": shift[1],
                     "residual_pre": rec.pre_residual, "wave_norm": rec.wave_norm,
                     "energy_drift": rec.energy_drift})
        if keep_records:
            recs.append(rec)
        if progress:
            progress(cfg.eps, rows[-1])
    le = np.log([r["eps"] for r in rows])

    def fit(key):
        return LinearFit.of(le, np.log([max(r[key], 1e-300) for r in rows]))

    pre = LinearFit.of([1.0 / r["eps"] for r in rows],
                       np.log([max(r["residual_pre"], 1e-300) for r in rows]))
    return ScalingReport(rows, fit("residual_total"), fit("residual_loc"), fit("residual_nonloc"),
                         pre, recs)


# ---------------------------------------------------------------------------
# stability of separating waves


@dataclass
class StabilityConfig:
    eps: float
    beta_plus: float = 1.0
    beta_minus: float = 1.0
    tau0: float | None = None
    perturbation: float | None = None  # l2 size of v2, default eps^3.5
    T: float | None = None  # default 3 / b_free
    dt: float = 0.1
    n_samples: int = 60
    seed: int = 0
    order: int = 4
    t0_factor: float = 5.0
    M: int = 1024
    potential: PotentialSpec = field(default_factory=lambda: DEFAULT_POTENTIAL)

    def __post_init__(self):
        if self.tau0 is None:
            self.tau0 = 1.5 * T0(self.eps, self.t0_factor)
        if self.perturbation is None:
            self.perturbation = self.eps**3.5

    def collision_config(self) -> CollisionConfig:
        return CollisionConfig(self.eps, self.beta_plus, self.beta_minus, tau0=self.tau0,
                               T_pre=0.0, T_post=0.0, seed=self.seed,
                               perturbation=self.perturbation, t0_factor=self.t0_factor,
                               M=self.M, potential=self.potential)


@dataclass
class WaveRun:
    times: np.ndarray
    tau: np.ndarray
    c: np.ndarray
    weighted: np.ndarray  # comoving weighted norm of the residual, a = kappa/2
    l2: np.ndarray  # l2 norm of the residual inside the comoving window
    b_fit: float
    r2: float
    a: float


@dataclass
class StabilityRecord:
    config: StabilityConfig
    x0: np.ndarray
    waves: dict  # +1 / -1 -> WaveRun
    v2_weighted0: dict
    speed_constant: dict  # |c(t) - c(0)| max over the run / (eps^-1 |v2(0)|_alpha^2)


def _fit_tail(ts, ns):
    tail = ts >= ts[-1] / 2
    fit = LinearFit.of(ts[tail], np.log(ns[tail]))
    return -fit.slope, fit.r2


def _comoving_run(u: LatticeField, tau: float, c: float, family: WaveFamily, cfg: StabilityConfig):
    """Evolve a single right-moving wave plus residual in a window that moves with it."""
    V = cfg.potential
    k = _kappa(family, c)
    a = k / 2
    b_free = a * c - 2 * math.sinh(a / 2)
    T = cfg.T or 3.0 / b_free
    behind = int(math.ceil(30.0 / a))
    ahead = int(math.ceil(45.0 / k + 10))
    N = behind + ahead
    off = int(math.floor(tau)) - behind
    sites = np.arange(off, off + N)
    r = np.interp(sites, u.sites, u.r, left=0.0, right=0.0)
    p = np.interp(sites, u.sites, u.p, left=0.0, right=0.0)
    nsteps = int(math.ceil(T / cfg.dt))
    h = T / nsteps
    chunk = max(1, nsteps // cfg.n_samples)
    recentre = max(1, int(5.0 / k / (c * h)))
    times, taus, cs, wn, l2 = [], [], [], [], []
    x = np.array([tau, c])
    done = 0
    t_last = 0.0

    def sample(t):
        nonlocal x, t_last
        field_ = LatticeField(off, r.copy(), p.copy(), ZERO)
        guess = x + np.array([x[1] * (t - t_last), 0.0])
        co = extract_wave(field_, guess, family)
        x, t_last = np.array([co.tau, co.c]), t
        sq = co.v.r**2 + co.v.p**2
        e = np.exp(np.clip(2 * a * (co.v.sites - co.tau), -700, 700))
        times.append(t)
        taus.append(co.tau)
        cs.append(co.c)
        wn.append(math.sqrt(math.fsum(e * sq)))
        l2.append(math.sqrt(math.fsum(sq)))

    sample(0.0)
    while done < nsteps:
        target = min(done + chunk, nsteps)
        while done < target:
            kk = min(recentre, target - done)
            advance_arrays(r, p, V, h, kk, ZERO, cfg.order)
            done += kk
            centre = x[0] + x[1] * (done * h - t_last)
            shift = int(math.floor(centre)) - behind - off
            if shift > 0:
                r = np.concatenate([r[shift:], np.zeros(shift)])
                p = np.concatenate([p[shift:], np.zeros(shift)])
                off += shift
        sample(done * h)
    ts, ns = np.array(times), np.array(wn)
    b, r2 = _fit_tail(ts, ns / ns[0])
    return WaveRun(ts, np.array(taus), np.array(cs), ns, np.array(l2), b, r2, a)


def stability_run(cfg: StabilityConfig, family: WaveFamily | None = None) -> StabilityRecord:
    """Separating waves with a localized perturbation; each wave is followed in
    its own comoving window (their mutual influence is below e^{-kappa 2 tau0})."""
    ccfg = cfg.collision_config()
    family = family or ccfg.family()
    u, x0 = build_collision_state(ccfg, family)
    co = extract_coordinates(u, None, x0, family, t0_factor=cfg.t0_factor)
    v2 = co.v2
    waves, w0, K = {}, {}, {}
    for a in (1, -1):
        m = cutoff_mask(u.sites, a)
        part = u.replace(r=np.where(m, u.r, 0.0), p=np.where(m, u.p, 0.0))
        tau, c = (co.x[0], co.x[1]) if a > 0 else (co.x[2], co.x[3])
        if a < 0:
            part = reflect_sites(part)
            tau, c = -tau, -c
        run = _comoving_run(part, tau, c, family, cfg)
        if a < 0:
            run.tau = -run.tau
            run.c = -run.c
        waves[a] = run
        kap = _kappa(family, c)
        e = np.clip(a * kap * (v2.sites - (co.x[0] if a > 0 else co.x[2])), -700, 700)
        sq = (v2.r**2 + v2.p**2) * cutoff_mask(v2.sites, a)
        w0[a] = math.sqrt(math.fsum(np.exp(e) * sq))
        scale = w0[a] ** 2 / cfg.eps
        K[a] = float(np.max(np.abs(run.c - run.c[0]))) / scale if scale > 0 else float("nan")
    return StabilityRecord(cfg, co.x, waves, w0, K)


def track_separating(cfg: CollisionConfig, T: float, n_snapshots: int = 20,
                     family: WaveFamily | None = None):
    """Evolve the built (outgoing) state in a fixed window and extract the
    coordinates at equally spaced times. Returns (times, coords)."""
    family = family or cfg.family()
    u, x = build_collision_state(cfg, family)
    kap = min(_kappa(family, c) for c in (cfg.c_plus, cfg.c_minus) if c)
    cmax = max(abs(cfg.c_plus), abs(cfg.c_minus))
    W = int(math.ceil(cfg.tau0 + cmax * T + 45.0 / kap + 10))
    sites = np.arange(-W, W + 1)
    r = np.interp(sites, u.sites, u.r, left=0.0, right=0.0)
    p = np.interp(sites, u.sites, u.p, left=0.0, right=0.0)
    state = LatticeField(-W, r, p, ZERO)
    h_out = T / n_snapshots
    nsub = max(1, int(math.ceil(h_out / cfg.dt - 1e-9)))
    times, coords = [], []
    t_last = 0.0
    for i in range(n_snapshots + 1):
        t = i * h_out
        if i > 0:
            advance_arrays(r, p, cfg.potential, h_out / nsub, nsub, ZERO, cfg.order)
        guess = x + np.array([x[1] * (t - t_last), 0.0, x[3] * (t - t_last), 0.0])
        co = extract_coordinates(state.replace(r=r.copy(), p=p.copy()), None, guess, family,
                                 t0_factor=cfg.t0_factor)
        x, t_last = co.x, t
        times.append(t)
        coords.append(co)
    return np.array(times), coords


# ---------------------------------------------------------------------------
# virial functional


@dataclass
class VirialSeries:
    times: np.ndarray
    M: np.ndarray  # sum psi e_j with e_j = p_j^2 / 2 + V(r_j)
    D: np.ndarray  # sum psi' e_j
    dissipation: np.ndarray  # running integral of D
    abar: float

    def lyapunov(self, C2: float) -> np.ndarray:
        return (C2 / self.abar) * self.M + self.dissipation

    def fit_C2(self, upto: float = 1.0) -> float:
        """Smallest C2 making the combined quantity non-increasing over the leading fraction `upto` of the run."""
        n = max(2, int(len(self.times) * upto))
        dM = -np.diff(self.M[:n])
        dI = np.diff(self.dissipation[:n])
        if np.any(dM <= 0):
            return float("inf")
        return float(np.max(self.abar * dI / dM))


def virial_series(states, times, tau, abar: float, V: PotentialSpec | None = None,
                  C0: float = 10.0) -> VirialSeries:
    """Weighted energy M(t) = sum_j psi(j,t) (p_j^2/2 + V(r_j)) with psi = 1 + tanh(abar(x - tau(t)))
    and the dissipation integral of sum_j psi'(j,t) (p_j^2/2 + V(r_j)).

    The energy density is used in place of r^2 + p^2: the weighted energy is
    the quantity whose flux identity yields the monotone bound.
    """
    V = V or DEFAULT_POTENTIAL
    times = np.asarray(times, dtype=float)
    taus = np.array([tau(t) for t in times])
    if len(times) > 1:
        speed = np.diff(taus) / np.diff(times)
        if np.any(speed <= 1 + C0 * abar):
            raise SpeedViolation(f"tau-dot {speed.min():.6f} <= 1 + C0 abar = {1 + C0 * abar:.6f}")
    Ms, Ds = [], []
    for u, tt in zip(states, taus):
        e = 0.5 * u.p**2 + V.V(u.r)
        y = abar * (u.sites - tt)
        Ms.append(math.fsum((1 + np.tanh(y)) * e))
        Ds.append(math.fsum(abar / np.cosh(y) ** 2 * e))
    M, D = np.array(Ms), np.array(Ds)
    diss = np.concatenate(([0.0], np.cumsum(0.5 * (D[1:] + D[:-1]) * np.diff(times))))
    return VirialSeries(times, M, D, diss, abar)


@dataclass
class VirialConfig:
    eps: float
    size: float = 0.1  # |v(t0)| in units of abar
    abar: float | None = None  # default eps^2 / 10
    speed_factor: float = 1.5  # tau-dot = 1 + speed_factor * C0 * abar
    C0: float = 10.0
    T: float = 400.0
    dt: float = 0.1
    n_samples: int = 200
    width: float = 10.0
    seed: int = 0
    potential: PotentialSpec = field(default_factory=lambda: DEFAULT_POTENTIAL)

    def __post_init__(self):
        if self.abar is None:
            self.abar = self.eps**2 / 10


def virial_experiment(cfg: VirialConfig) -> VirialSeries:
    """Small random localized data, evolved exactly; the weight front starts at the data."""
    rng = np.random.default_rng(cfg.seed)
    W = int(cfg.T + 6 * cfg.width + 20)
    sites = np.arange(-W, W + 1)
    r = np.zeros(sites.size)
    p = np.zeros(sites.size)
    for arr in (r, p):
        for _ in range(4):
            x0 = rng.uniform(-1, 1) * cfg.width
            arr += rng.standard_normal() * np.exp(-(((sites - x0) / cfg.width) ** 2))
    nrm = math.sqrt(float(np.sum(r * r + p * p)))
    scale = cfg.size * cfg.abar / nrm
    u = LatticeField(-W, r * scale, p * scale, ZERO)
    speed = 1 + cfg.speed_factor * cfg.C0 * cfg.abar
    nsteps = int(math.ceil(cfg.T / cfg.dt))
    h = cfg.T / nsteps
    chunk = max(1, nsteps // cfg.n_samples)
    rr, pp = u.r.copy(), u.p.copy()
    states, times = [u], [0.0]
    done = 0
    while done < nsteps:
        k = min(chunk, nsteps - done)
        advance_arrays(rr, pp, cfg.potential, h, k, ZERO, 4)
        done += k
        states.append(u.replace(r=rr.copy(), p=pp.copy()))
        times.append(done * h)
    return virial_series(states, times, lambda t: speed * t, cfg.abar, cfg.potential, cfg.C0)


# ---------------------------------------------------------------------------
# energy estimate and convexity


@dataclass
class EnergyEstimate:
    K: np.ndarray  # smallest admissible K per snapshot pair
    lhs: np.ndarray
    rhs: np.ndarray


def energy_estimate_check(coords: list, family: WaveFamily) -> EnergyEstimate:
    """For the pairs (first, i): |v(t_i)|^2 against |v(t_0)|^2 + sum eps |dc| + tail terms."""
    eps = family.eps

    def tails(co):
        out = 0.0
        for a, tau, c in ((1, co.tau_plus, co.c_plus), (-1, co.tau_minus, co.c_minus)):
            k = _kappa(family, c)
            m = cutoff_mask(co.v2.sites, a)
            va = math.sqrt(float(np.sum((co.v2.r**2 + co.v2.p**2) * m)))
            out += math.exp(-k * a * tau) * (1 + va)
        return out

    first = coords[0]
    n0 = first.v1.norm() ** 2 + first.v2.norm() ** 2
    Ks, L, R = [], [], []
    for co in coords:
        lhs = co.v1.norm() ** 2 + co.v2.norm() ** 2
        rhs = (n0 + eps * (abs(co.c_plus - first.c_plus) + abs(co.c_minus - first.c_minus))
               + tails(first) + tails(co))
        L.append(lhs)
        R.append(rhs)
        Ks.append(lhs / rhs if rhs > 0 else 0.0)
    return EnergyEstimate(np.array(Ks), np.array(L), np.array(R))


def convexity_ratio(uhat: LatticeField, x: LatticeField, V: PotentialSpec | None = None) -> float:
    """(H(uhat + x) - H(uhat) - <H'(uhat), x>) / |x|^2."""
    V = V or DEFAULT_POTENTIAL
    full = uhat + x
    d = (math.fsum(V.V(full.r)) - math.fsum(V.V(uhat.r)) - math.fsum(V.dV(uhat.r) * x.r)
         + math.fsum(0.5 * x.p**2))
    return d / x.norm() ** 2


# ---------------------------------------------------------------------------
# driven correction fields


@dataclass
class InteractionConfig:
    eps: float
    beta_plus: float = 1.0
    beta_minus: float = 1.0
    eta0: float = 0.25
    eta1: float = 0.1
    C1: float = 20.0
    dt: float = 0.1
    n_samples: int = 200
    M: int = 1024
    potential: PotentialSpec = field(default_factory=lambda: DEFAULT_POTENTIAL)

    @property
    def horizon(self) -> float:
        return self.C1 * self.eps ** (-1 - self.eta1)


@dataclass
class InteractionRecord:
    config: InteractionConfig
    times: np.ndarray
    phi: np.ndarray  # l2 norm of phi
    phi_plus: np.ndarray  # comoving weighted norms of phi
    phi_minus: np.ndarray
    psi: np.ndarray
    source: np.ndarray  # eps^{eta0 - 7/2} |(I - S^-1)(r+ r-)|_alpha, max over alpha
    source_constant: float  # max source / eps^{1 + eta0}


def _diff_back(x):
    out = x.copy()
    out[1:] -= x[:-1]
    return out


def _diff_fwd(x):
    out = -x.copy()
    out[:-1] += x[1:]
    return out


def interaction_correction_run(cfg: InteractionConfig, zero_drive: bool = False) -> InteractionRecord:
    """Integrate the two driven linear lattice systems alongside free waves that
    start at -/+ c H/2, cross at t = H/2 and end at +/- c H/2 (H the horizon).

    phi' = ((S - I) phi_2, (I - S^-1)[phi_1 + 2 eps^{eta0 - 7/2} r+ r-])
    psi' = ((S - I) psi_2, (I - S^-1)[psi_1 + 2 eps^{eta0 - 1} (r+ + r-) phi_1])
    With ``zero_drive`` the waves are removed (infinite separation).
    """
    eps = cfg.eps
    cp = kdv_speed(eps, cfg.beta_plus)
    cm = -kdv_speed(eps, cfg.beta_minus)
    betas = [beta_from_speed(eps, abs(c)) for c in (cp, cm)]
    family = WaveFamily(eps, min(betas), cfg.potential, cfg.M)
    kp, km = _kappa(family, cp), _kappa(family, cm)
    tab_p = family.sampler(cp).table(("u",), 1)
    tab_m = family.sampler(-cm).table(("u",), -1)
    H = cfg.horizon
    start_p, start_m = -cp * H / 2, -cm * H / 2
    W = int(math.ceil(max(abs(start_p), abs(start_m)) + 45.0 / min(kp, km) + 10))
    sites = np.arange(-W, W + 1)
    A = 2 * eps ** (cfg.eta0 - 3.5)
    B = 2 * eps ** (cfg.eta0 - 1)

    def waves(t):
        if zero_drive:
            z = np.zeros(sites.size)
            return z, z, start_p + cp * t, start_m + cm * t
        tp, tm = start_p + cp * t, start_m + cm * t
        return (tab_p.fields(tp, sites)["u"][0], tab_m.fields(tm, sites)["u"][0], tp, tm)

    f1, f2 = np.zeros(sites.size), np.zeros(sites.size)
    g1, g2 = np.zeros(sites.size), np.zeros(sites.size)
    nsteps = int(math.ceil(H / cfg.dt))
    h = H / nsteps
    every = max(1, nsteps // cfg.n_samples)
    ap, am = kp / 2, km / 2
    rec = {k: [] for k in ("t", "phi", "phip", "phim", "psi", "src")}

    def observe(t, rp, rm, tp, tm):
        sq = f1**2 + f2**2
        rec["t"].append(t)
        rec["phi"].append(math.sqrt(math.fsum(sq)))
        rec["phip"].append(math.sqrt(math.fsum(np.exp(np.clip(2 * ap * (sites - tp), -700, 700)) * sq)))
        rec["phim"].append(math.sqrt(math.fsum(np.exp(np.clip(-2 * am * (sites - tm), -700, 700)) * sq)))
        rec["psi"].append(math.sqrt(math.fsum(g1**2 + g2**2)))
        s = _diff_back(rp * rm) ** 2
        sp = math.sqrt(math.fsum(np.exp(np.clip(2 * ap * (sites - tp), -700, 700)) * s))
        sm = math.sqrt(math.fsum(np.exp(np.clip(-2 * am * (sites - tm), -700, 700)) * s))
        rec["src"].append(eps ** (cfg.eta0 - 3.5) * max(sp, sm))

    rp, rm, tp, tm = waves(0.0)
    observe(0.0, rp, rm, tp, tm)
    for n in range(nsteps):
        t = n * h
        # kick-drift-kick with the drive evaluated at the kick times
        f2 += 0.5 * h * _diff_back(f1 + A * rp * rm)
        g2 += 0.5 * h * _diff_back(g1 + B * (rp + rm) * f1)
        f1 += h * _diff_fwd(f2)
        g1 += h * _diff_fwd(g2)
        rp, rm, tp, tm = waves(t + h)
        f2 += 0.5 * h * _diff_back(f1 + A * rp * rm)
        g2 += 0.5 * h * _diff_back(g1 + B * (rp + rm) * f1)
        if (n + 1) % every == 0 or n + 1 == nsteps:
            observe(t + h, rp, rm, tp, tm)
    src = np.array(rec["src"])
    return InteractionRecord(cfg, np.array(rec["t"]), np.array(rec["phi"]), np.array(rec["phip"]),
                             np.array(rec["phim"]), np.array(rec["psi"]), src,
                             float(src.max() / eps ** (1 + cfg.eta0)))

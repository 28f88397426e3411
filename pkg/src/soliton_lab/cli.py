"""Command-line entry point.

Values are resolved as defaults < config file < flags. The config file is
TOML; keys may sit at top level or in a table named after the subcommand.
Exit status: 0 success, 2 numerical failure, 3 configuration error.
"""
from __future__ import annotations

import difflib
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, MissingRequired, NumericalFailure, SchemaError
from .io import RunDir, output_root
from .lattice import PotentialSpec

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    type: str  # float, int, str, floats
    default: object = None
    help: str = ""
    choices: tuple = ()


_POT = {
    "potential": Key("str", "fpu", "interaction potential", ("fpu", "toda")),
    "quartic": Key("float", 0.0, "quartic coefficient of the polynomial potential"),
}
_COMMON = {
    "seed": Key("int", 0, "random seed"),
    "jobs": Key("int", 1, "number of independent runs launched in parallel"),
}
_PAIR = {
    "beta_plus": Key("float", 1.0, "amplitude parameter of the right mover, in [0, 1]"),
    "beta_minus": Key("float", 1.0, "amplitude parameter of the left mover, in [0, 1]"),
    "tau0": Key("float", None, "initial half separation (default 1.5 T0)"),
    "t0_factor": Key("float", 5.0, "T0 = t0_factor |log eps| / eps"),
    "M": Key("int", 1024, "Fourier modes of the profile solver"),
}
_COLLIDE = {
    "T_pre": Key("float", None, "time before the crossing (default tau0 / c)"),
    "T_post": Key("float", None, "time after the crossing (default T_pre)"),
    "dt": Key("float", 0.05, "time step"),
    "window": Key("int", None, "half width of the lattice window in sites"),
    "perturbation": Key("float", 0.0, "l2 size of an injected localized perturbation"),
    "stride": Key("float", 1.0, "time between coordinate extractions"),
    "order": Key("int", 4, "integrator order (2, 4 or 6)"),
}

SCHEMAS = {
    "profile": {
        "eps": Key("float", REQUIRED, "small parameter"),
        "beta": Key("float", 1.0, "amplitude parameter"),
        "M": Key("int", 2048, "Fourier modes"),
        **_POT, **_COMMON,
    },
    "evolve": {
        "eps": Key("float", REQUIRED, "small parameter"),
        "beta": Key("float", 1.0, "amplitude parameter"),
        "T": Key("float", 50.0, "final time"),
        "dt": Key("float", 0.02, "time step"),
        "order": Key("int", 4, "integrator order (2, 4 or 6)"),
        "window": Key("int", None, "lattice sites (default: wave plus travel plus tails)"),
        "n_samples": Key("int", 50, "number of recorded times"),
        "M": Key("int", 2048, "Fourier modes"),
        **_POT, **_COMMON,
    },
    "collide": {
        "eps": Key("float", REQUIRED, "small parameter"),
        **_PAIR, **_COLLIDE, **_POT, **_COMMON,
    },
    "scan": {
        "eps": Key("floats", (0.30, 0.25, 0.20, 0.15), "comma separated eps values (at least 4)"),
        **{k: v for k, v in _PAIR.items() if k != "tau0"},
        **_COLLIDE, **_POT, **_COMMON,
    },
    "toda-verify": {
        "c": Key("float", REQUIRED, "Toda soliton speed (> 1)"),
        "a": Key("float", None, "weight exponent (default kappa / 2)"),
        "trials": Key("int", 3, "random initial data per fit"),
        "T": Key("float", None, "final time (default 3 / b)"),
        "dt": Key("float", 0.5, "time step"),
        "n_samples": Key("int", 200, "recorded times per trial"),
        "order": Key("int", 4, "integrator order"),
        **_COMMON,
    },
    "extract": {
        "eps": Key("float", REQUIRED, "small parameter"),
        **_PAIR,
        "perturbation": Key("float", None, "l2 size of the perturbation (default eps^3.5)"),
        "offset_tau": Key("float", 0.3, "phase error of the initial guess"),
        "offset_c": Key("float", 5e-5, "speed error of the initial guess, in units of eps^2"),
        "window": Key("int", None, "half width of the lattice window in sites"),
        **_POT, **_COMMON,
    },
    "stability": {
        "eps": Key("float", REQUIRED, "small parameter"),
        **_PAIR,
        "perturbation": Key("float", None, "l2 size of v2 (default eps^3.5)"),
        "T": Key("float", None, "final time (default 3 / b of the free flow)"),
        "dt": Key("float", 0.1, "time step"),
        "n_samples": Key("int", 60, "recorded times per wave"),
        "order": Key("int", 4, "integrator order"),
        **_POT, **_COMMON,
    },
}


# ---------------------------------------------------------------------------
# configuration


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*{re.escape(key)}\s*=", line):
            return i
    return None


def _unknown(kind: str, key: str, line: int | None = None) -> SchemaError:
    near = difflib.get_close_matches(key, list(SCHEMAS[kind]), n=1)
    where = f" (line {line})" if line else ""
    hint = f"; did you mean {near[0]!r}?" if near else ""
    return SchemaError(f"unknown key {key!r} for {kind}{where}{hint}")


def _coerce(kind: str, key: str, value, line: int | None = None):
    spec = SCHEMAS[kind][key]
    where = f" (line {line})" if line else ""
    bad = SchemaError(f"key {key!r}{where}: expected {spec.type}, got {value!r}")
    if value is None:
        return None
    if spec.type == "floats":
        if isinstance(value, str):
            try:
                value = [float(v) for v in value.split(",") if v.strip()]
            except ValueError:
                raise bad from None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, (list, tuple)):
            raise bad
        return [_coerce_scalar("float", v, bad) for v in value]
    value = _coerce_scalar(spec.type, value, bad)
    if spec.choices and value not in spec.choices:
        raise SchemaError(f"key {key!r}{where}: {value!r} not in {list(spec.choices)}")
    return value


def _coerce_scalar(typ: str, value, bad):
    if isinstance(value, bool):
        raise bad
    if typ == "float":
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise bad from None
        if not isinstance(value, (int, float)):
            raise bad
        return float(value)
    if typ == "int":
        if isinstance(value, str) and re.fullmatch(r"[+-]?\d+", value.strip()):
            return int(value)
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int):
            raise bad
        return value
    if not isinstance(value, str):
        raise bad
    return value


def read_config_file(kind: str, path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise SchemaError(f"{path}: {e}") from None
    out = {}
    for key, val in data.items():
        if isinstance(val, dict):
            if key != kind:
                if key in SCHEMAS:
                    continue  # a section for another subcommand
                raise SchemaError(f"unknown section [{key}] (line {_line_of(text, '[' + key)})")
            for k, v in val.items():
                if k not in SCHEMAS[kind]:
                    raise _unknown(kind, k, _line_of(text, k))
                out[k] = _coerce(kind, k, v, _line_of(text, k))
            continue
        if key not in SCHEMAS[kind]:
            raise _unknown(kind, key, _line_of(text, key))
        out[key] = _coerce(kind, key, val, _line_of(text, key))
    return out


def parse_config(kind: str, flags: dict, path=None) -> tuple[dict, list]:
    """Resolve defaults < file < flags. Returns (config, overrides)."""
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown experiment {kind!r}")
    schema = SCHEMAS[kind]
    given = {}
    for k, v in flags.items():
        if v is None:
            continue
        if k not in schema:
            raise _unknown(kind, k)
        given[k] = _coerce(kind, k, v)
    from_file = read_config_file(kind, path) if path else {}
    cfg = {}
    for k, spec in schema.items():
        d = spec.default
        cfg[k] = list(d) if isinstance(d, tuple) else d
    cfg.update(from_file)
    overrides = []
    for k, v in given.items():
        if k in from_file and from_file[k] != v:
            overrides.append({"key": k, "file": from_file[k], "flag": v})
        cfg[k] = v
    missing = [k for k, v in cfg.items() if v is REQUIRED]
    if missing:
        raise MissingRequired(f"missing required key(s) for {kind}: {', '.join(missing)}")
    if kind == "scan" and len(set(cfg["eps"])) < 4:
        raise ConfigError(f"a scaling fit needs at least 4 eps values, got {len(set(cfg['eps']))}")
    if cfg.get("jobs", 1) < 1:
        raise SchemaError("jobs must be at least 1")
    return cfg, overrides


def _potential(cfg: dict) -> PotentialSpec:
    if cfg.get("potential", "fpu") == "toda":
        return PotentialSpec.toda()
    return PotentialSpec.fpu(cfg.get("quartic", 0.0))


def _say(msg: str):
    click.echo(msg, err=True)


# ---------------------------------------------------------------------------
# experiments; each writes into its run directory and returns a summary


def run_profile(cfg: dict, run: RunDir) -> dict:
    from .profiles import SpectralGrid, fixed_point_residual, save_profile, solve_profile
    w = solve_profile(cfg["eps"], cfg["beta"], SpectralGrid.for_beta(cfg["beta"], cfg["M"]),
                      _potential(cfg))
    save_profile(w, run.file("profile"))
    _say(f"profile: residual {w.residual:.2e} after {w.iterations} iterations")
    return {"c": w.c, "kappa": w.kappa_fpu, "amplitude": w.amplitude,
            "residual": fixed_point_residual(w), "iterations": w.iterations}


def run_evolve(cfg: dict, run: RunDir) -> dict:
    from .lattice import ZERO, evolve, hamiltonian_energy
    from .profiles import SpectralGrid, sample_lattice_wave, solve_profile
    V = _potential(cfg)
    w = solve_profile(cfg["eps"], cfg["beta"], SpectralGrid.for_beta(cfg["beta"], cfg["M"]), V)
    reach = int(math.ceil(40.0 / w.kappa_fpu)) + 2
    N = cfg["window"] or int(math.ceil(2 * reach + w.c * cfg["T"])) + 1
    win = (-reach, N, ZERO)
    u = sample_lattice_wave(w, 0.0, win)
    nsteps = int(math.ceil(cfg["T"] / cfg["dt"] - 1e-12))
    stride = max(1, nsteps // cfg["n_samples"])
    peak = u.sup()

    def err(t, s):
        ref = sample_lattice_wave(w, w.c * t, win, check=False)
        return max(np.max(np.abs(s.r - ref.r)), np.max(np.abs(s.p - ref.p))) / peak

    obs = {"energy": lambda t, s: hamiltonian_energy(s, V), "sup_error": err}
    traj = evolve(u, V, cfg["T"], cfg["dt"], obs, stride=stride, keep_states=False,
                  order=cfg["order"])
    E = np.array(traj.observed["energy"])
    run.write_columns("series.csv", {"t": traj.times, "energy": E,
                                     "sup_error": traj.observed["sup_error"]})
    drift = float(np.max(np.abs(E - E[0])) / abs(E[0]))
    _say(f"evolve: sup error {traj.observed['sup_error'][-1]:.2e}, energy drift {drift:.2e}")
    return {"c": w.c, "sup_error": float(max(traj.observed["sup_error"])), "energy_drift": drift}


def _collision_config(cfg: dict, eps: float):
    from .collisions import CollisionConfig
    return CollisionConfig(eps, cfg["beta_plus"], cfg["beta_minus"], tau0=cfg.get("tau0"),
                           T_pre=cfg["T_pre"], T_post=cfg["T_post"], dt=cfg["dt"],
                           window=cfg["window"], seed=cfg["seed"],
                           perturbation=cfg["perturbation"], stride=cfg["stride"],
                           order=cfg["order"], t0_factor=cfg["t0_factor"], M=cfg["M"],
                           potential=_potential(cfg))


def _every(period: float, template: str):
    last = [-math.inf]

    def report(t):
        if t - last[0] >= period:
            last[0] = t
            _say(template.format(t))
    return report


def run_collide(cfg: dict, run: RunDir) -> dict:
    from .collisions import run_collision
    rec = run_collision(_collision_config(cfg, cfg["eps"]), keep_final=False,
                        progress=_every(50.0, "collide: t = {:.1f}"))
    run.write_csv("series.csv", rec.series())
    failed = [r.message for r in rec.rows if not r.ok and r.phase != "interaction"]
    return {"pre_residual": rec.pre_residual, "post_residual": rec.post_residual,
            "post_localized": rec.post_channel("localized"),
            "post_nonlocalized": rec.post_channel("nonlocalized"),
            "wave_norm": rec.wave_norm, "energy_drift": rec.energy_drift,
            "speed_shift": list(rec.speed_shift), "failed_extractions": len(failed)}


def run_scan(cfg: dict, run: RunDir) -> dict:
    from .collisions import scan_epsilon
    eps = sorted(set(cfg["eps"]), reverse=True)
    cfgs = [_collision_config({**cfg, "tau0": None}, e) for e in eps]
    rep = scan_epsilon(cfgs, jobs=cfg["jobs"],
                       progress=lambda e, row: _say(f"scan: eps {e} residual "
                                                    f"{row['residual_total']:.3e}"))
    run.write_csv("scaling.csv", rep.rows)
    run.write_json("fit.json", rep.fits())
    return {"slope_total": rep.total.slope, "slope_localized": rep.localized.slope,
            "slope_nonlocalized": rep.nonlocalized.slope}


def run_toda_verify(cfg: dict, run: RunDir) -> dict:
    from .toda import decay_rate_estimate
    fit = decay_rate_estimate(cfg["c"], cfg["a"], cfg["trials"], cfg["T"], cfg["dt"], cfg["seed"],
                              cfg["n_samples"], order=cfg["order"])
    rows = [{"trial": i, "t": t, "norm": n}
            for i, (ts, ns) in enumerate(fit.series) for t, n in zip(ts, ns)]
    run.write_csv("decay.csv", rows)
    summary = {"c": fit.c, "a": fit.a, "b_fit": fit.b_fit, "K_fit": fit.K_fit, "r2": fit.r2,
               "b_trials": fit.b_trials, "K_trials": fit.K_trials}
    run.write_json("summary.json", summary)
    _say(f"toda-verify: b = {fit.b_fit:.4e}, K = {fit.K_fit:.3f}")
    return summary


def run_extract(cfg: dict, run: RunDir) -> dict:
    from .collisions import kdv_speed
    from .lattice import ZERO, LatticeField
    from .modulation import T0, extract_coordinates, localized_perturbation, synthesize
    from .profiles import WaveFamily, beta_from_speed
    eps = cfg["eps"]
    cp, cm = kdv_speed(eps, cfg["beta_plus"]), -kdv_speed(eps, cfg["beta_minus"])
    tau0 = cfg["tau0"] or 1.5 * T0(eps, cfg["t0_factor"])
    fam = WaveFamily(eps, min(beta_from_speed(eps, c) for c in (cp, -cm)), _potential(cfg),
                     cfg["M"])
    kap = min(fam.wave(c).kappa_fpu for c in (cp, -cm))
    W = cfg["window"] or int(math.ceil(tau0 + 45.0 / kap + 10))
    sites = np.arange(-W, W + 1)
    x = np.array([tau0, cp, -tau0, cm])
    r, p = synthesize(fam, x, sites)
    size = eps**3.5 if cfg["perturbation"] is None else cfg["perturbation"]
    if size > 0:
        dr, dp = localized_perturbation(fam, x, sites, size, np.random.default_rng(cfg["seed"]))
        r, p = r + dr, p + dp
    u = LatticeField(-W, r, p, ZERO)
    d = np.array([cfg["offset_tau"], cfg["offset_c"] * eps**2])
    guess = x + np.array([d[0], d[1], -d[0], -d[1]])
    co = extract_coordinates(u, None, guess, fam, t0_factor=cfg["t0_factor"])
    err = co.x - x
    run.write_csv("iterations.csv", [{"iteration": i + 1, "step": s}
                                     for i, s in enumerate(co.history)])
    _say(f"extract: {co.iterations} iterations, contraction {co.contraction:.3f}")
    return {"x_true": x, "x_found": co.x, "tau_error": float(max(abs(err[0]), abs(err[2]))),
            "c_error": float(max(abs(err[1]), abs(err[3]))), "iterations": co.iterations,
            "contraction": co.contraction, "defects": co.defects, "small_data": bool(co.small_data_ok)}


def run_stability(cfg: dict, run: RunDir) -> dict:
    from .collisions import StabilityConfig, stability_run
    sc = StabilityConfig(cfg["eps"], cfg["beta_plus"], cfg["beta_minus"], tau0=cfg["tau0"],
                         perturbation=cfg["perturbation"], T=cfg["T"], dt=cfg["dt"],
                         n_samples=cfg["n_samples"], seed=cfg["seed"], order=cfg["order"],
                         t0_factor=cfg["t0_factor"], M=cfg["M"], potential=_potential(cfg))
    rec = stability_run(sc)
    out = {"x0": rec.x0}
    for a, name in ((1, "plus"), (-1, "minus")):
        w = rec.waves[a]
        run.write_columns(f"wave_{name}.csv", {"t": w.times, "tau": w.tau, "c": w.c,
                                               "weighted": w.weighted, "l2": w.l2})
        out[f"b_fit_{name}"] = w.b_fit
        out[f"r2_{name}"] = w.r2
        out[f"speed_constant_{name}"] = rec.speed_constant[a]
        _say(f"stability: {name} wave b = {w.b_fit:.3e}")
    return out


RUNNERS = {"profile": run_profile, "evolve": run_evolve, "collide": run_collide,
           "scan": run_scan, "toda-verify": run_toda_verify, "extract": run_extract,
           "stability": run_stability}


def dispatch(kind: str, cfg: dict, overrides: list, out=None) -> Path:
    run = RunDir(output_root(out), kind, cfg)
    _say(f"{kind}: run directory {run.path}")
    summary = RUNNERS[kind](cfg, run)
    outputs = [p.name for p in run.path.iterdir() if p.name != "manifest.json"] + ["manifest.json"]
    run.write_manifest(overrides, outputs, summary)
    return run.path


# ---------------------------------------------------------------------------
# click wiring

_CLICK_TYPES = {"float": float, "int": int, "str": str, "floats": str}


def _make_command(kind: str):
    schema = SCHEMAS[kind]

    def callback(config, out, **flags):
        cfg, overrides = parse_config(kind, flags, config)
        dispatch(kind, cfg, overrides, out)

    params = [click.Option(["--config"], type=click.Path(), default=None,
                           help="TOML config file"),
              click.Option(["--out"], type=click.Path(), default=None,
                           help="output root (default $SOLITON_LAB_OUT or ./runs)")]
    for key, spec in schema.items():
        default = spec.default
        shown = "required" if default is REQUIRED else default
        typ = click.Choice(spec.choices) if spec.choices else _CLICK_TYPES[spec.type]
        params.append(click.Option([f"--{key}", key], type=typ, default=None,
                                   help=f"{spec.help} [default: {shown}]"))
    for common in ("dt", "window"):
        if common not in schema:
            params.append(click.Option([f"--{common}", f"{common}_unused"], type=float,
                                       default=None, hidden=True))
    return click.Command(kind, callback=_reject_unused(kind, callback), params=params,
                         help=f"Run the {kind} experiment.")


def _reject_unused(kind, fn):
    def wrapped(**kw):
        for common in ("dt", "window"):
            if kw.pop(f"{common}_unused", None) is not None:
                raise _unknown(kind, common)
        return fn(**kw)
    return wrapped


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Solitary-wave collision experiments on nonlinear lattices."""


for _kind in SCHEMAS:
    cli.add_command(_make_command(_kind))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="soliton-lab", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        return 3
    except click.ClickException as e:
        e.show()
        return 3
    except ConfigError as e:
        _say(f"error: {e}")
        return 3
    except NumericalFailure as e:
        _say(f"numerical failure: {type(e).__name__}: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

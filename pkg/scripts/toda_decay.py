"""Decay rate of the linearized Toda flow in the comoving weighted norm.

Fits b and K for eps-derived speeds c = sqrt(1 + eps^2/12) and for a fixed c grid.
"""
import argparse
import math
import sys

import numpy as np

from soliton_lab.collisions import LinearFit
from soliton_lab.io import RunDir, output_root
from soliton_lab.toda import decay_rate_estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", default="0.2,0.15,0.1")
    ap.add_argument("--c-grid", default="1.001,1.002,1.005")
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    rows = []
    for e in [float(v) for v in args.eps.split(",")]:
        c = math.sqrt(1 + e * e / 12)
        f = decay_rate_estimate(c, trials=args.trials, seed=args.seed)
        rows.append({"eps": e, "c": c, "b": f.b_fit, "K": f.K_fit, "r2": f.r2})
        print(f"eps {e:.3f} c {c:.6f}: b {f.b_fit:.4e} K {f.K_fit:.3f}", file=sys.stderr)
    for c in [float(v) for v in args.c_grid.split(",")]:
        f = decay_rate_estimate(c, trials=args.trials, seed=args.seed)
        rows.append({"eps": float("nan"), "c": c, "b": f.b_fit, "K": f.K_fit, "r2": f.r2})
        print(f"c {c:.6f}: b {f.b_fit:.4e} K {f.K_fit:.3f}", file=sys.stderr)
    er = [r for r in rows if not math.isnan(r["eps"])]
    fit = LinearFit.of(np.log([r["eps"] for r in er]), np.log([r["b"] for r in er]))
    Ks = [r["K"] for r in rows]
    print(f"slope of log b against log eps: {fit.slope:.3f}; K spread {max(Ks) / min(Ks):.2f}")
    run = RunDir(output_root(args.out), "toda-decay", vars(args))
    run.write_csv("decay_fits.csv", rows)
    run.write_manifest([], ["decay_fits.csv", "manifest.json"],
                       {"slope": fit.slope, "K_spread": max(Ks) / min(Ks)})


if __name__ == "__main__":
    main()

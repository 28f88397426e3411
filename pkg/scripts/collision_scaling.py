"""Post-collision residual against eps, with log-log fits.

    python scripts/collision_scaling.py --eps 0.3,0.25,0.2,0.15 --jobs 1
"""
import argparse
import sys

import numpy as np

from soliton_lab.collisions import CollisionConfig, scan_epsilon
from soliton_lab.io import RunDir, output_root


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", default="0.3,0.25,0.2,0.15")
    ap.add_argument("--beta-plus", type=float, default=1.0)
    ap.add_argument("--beta-minus", type=float, default=1.0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    eps = [float(e) for e in args.eps.split(",")]
    cfgs = [CollisionConfig(e, args.beta_plus, args.beta_minus) for e in eps]
    rep = scan_epsilon(cfgs, jobs=args.jobs,
                       progress=lambda e, row: print(f"eps {e}: done", file=sys.stderr))
    print(f"{'eps':>6} {'|v| post':>11} {'ratio':>9} {'pre':>10} {'dc+':>10}")
    for r in rep.rows:
        print(f"{r['eps']:6.3f} {r['residual_total']:11.3e} {r['residual_total'] / r['wave_norm']:9.2e}"
              f" {r['residual_pre'] / r['wave_norm']:10.2e} {r['c_shift_plus']:10.2e}")
    for name, fit in rep.fits().items():
        print(f"{name:>20}: slope {fit['slope']:.3f}  r2 {fit['r2']:.4f}")
    run = RunDir(output_root(args.out), "collision-scaling",
                 {"eps": eps, "beta_plus": args.beta_plus, "beta_minus": args.beta_minus})
    run.write_csv("scaling.csv", rep.rows)
    run.write_json("fit.json", rep.fits())
    run.write_manifest([], ["scaling.csv", "fit.json", "manifest.json"],
                       {"slope_total": rep.total.slope, "min_slope": float(np.min(
                           [rep.total.slope, rep.localized.slope]))})
    print(f"wrote {run.path}", file=sys.stderr)


if __name__ == "__main__":
    main()

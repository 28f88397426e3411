"""Weighted-norm decay and speed drift of separating waves after a localized kick."""
import argparse
import sys

import numpy as np

from soliton_lab.collisions import LinearFit, StabilityConfig, stability_run
from soliton_lab.io import RunDir, output_root


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", default="0.25,0.2,0.15")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    rows = []
    for e in [float(v) for v in args.eps.split(",")]:
        rec = stability_run(StabilityConfig(e, seed=args.seed))
        row = {"eps": e}
        for a, name in ((1, "plus"), (-1, "minus")):
            row[f"b_{name}"] = rec.waves[a].b_fit
            row[f"r2_{name}"] = rec.waves[a].r2
            row[f"K_{name}"] = rec.speed_constant[a]
        rows.append(row)
        print(f"eps {e}: b+ {row['b_plus']:.3e} b- {row['b_minus']:.3e}"
              f" K+ {row['K_plus']:.2e} K- {row['K_minus']:.2e}", file=sys.stderr)
    le = np.log([r["eps"] for r in rows])
    summary = {}
    for name in ("plus", "minus"):
        summary[f"slope_{name}"] = LinearFit.of(le, np.log([r[f"b_{name}"] for r in rows])).slope
    K = [max(r["K_plus"], r["K_minus"]) for r in rows]
    summary["K_spread"] = max(K) / min(K)
    print(summary)
    run = RunDir(output_root(args.out), "stability-scan", vars(args))
    run.write_csv("stability.csv", rows)
    run.write_manifest([], ["stability.csv", "manifest.json"], summary)


if __name__ == "__main__":
    main()

"""Weighted energy behind a fast front for small exact solutions."""
import argparse

import numpy as np

from soliton_lab.collisions import VirialConfig, virial_experiment
from soliton_lab.io import RunDir, output_root


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", default="0.3,0.25,0.2,0.15")
    ap.add_argument("--seeds", type=int, default=2)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    rows = []
    for e in [float(v) for v in args.eps.split(",")]:
        for seed in range(args.seeds):
            s = virial_experiment(VirialConfig(e, seed=seed))
            C2 = s.fit_C2()
            L = s.lyapunov(C2)
            rows.append({"eps": e, "seed": seed, "M_growth": float(np.max(s.M / s.M[0]) - 1),
                         "C2": C2, "lyapunov_increase": float(np.max(np.diff(L)) / abs(L[0]))})
            print(rows[-1])
    run = RunDir(output_root(args.out), "virial", vars(args))
    run.write_csv("virial.csv", rows)
    run.write_manifest([], ["virial.csv", "manifest.json"])


if __name__ == "__main__":
    main()

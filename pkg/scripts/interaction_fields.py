"""Driven correction fields during a crossing and the fitted source constant."""
import argparse

from soliton_lab.collisions import InteractionConfig, interaction_correction_run
from soliton_lab.io import RunDir, output_root


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", default="0.3,0.25,0.2,0.15")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    rows = []
    for e in [float(v) for v in args.eps.split(",")]:
        rec = interaction_correction_run(InteractionConfig(e))
        rows.append({"eps": e, "horizon": rec.config.horizon, "phi_max": rec.phi.max(),
                     "phi_plus_max": rec.phi_plus.max(), "phi_minus_max": rec.phi_minus.max(),
                     "psi_max": rec.psi.max(), "source_constant": rec.source_constant})
        print({k: round(v, 4) for k, v in rows[-1].items()})
    run = RunDir(output_root(args.out), "interaction", vars(args))
    run.write_csv("interaction.csv", rows)
    run.write_manifest([], ["interaction.csv", "manifest.json"])


if __name__ == "__main__":
    main()

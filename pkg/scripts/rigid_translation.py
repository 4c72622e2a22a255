"""Rigid camera drift: convergence and relative radial motion should stay near zero.

    python scripts/rigid_translation.py --workdir /tmp/rigid
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from tunnelmag.analysis import read_convergence_csv

from ring_squeeze_e2e import run_case


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", type=Path, default=Path("rigid_runs"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[11])
    args = ap.parse_args()
    for seed in args.seeds:
        out, truth, secs = run_case(args.workdir, "rigid_translation_scene.yaml", "rigid_translation_config.yaml", seed)
        conv = read_convergence_csv(out / "convergence.csv")["R1"][1]
        radial = np.array([float(r["radial_mm"]) for r in csv.DictReader(open(out / "deformation_R1.csv"))])
        drift = float(np.hypot(*truth.translation_px[-1]))
        print(f"seed {seed:>4}  {secs:5.1f} s  drift {drift:.3f} px  max |convergence| {np.abs(conv).max():.4f} mm  "
              f"max |radial| {np.abs(radial).max():.4f} mm")


if __name__ == "__main__":
    main()

"""End-to-end ring-squeeze accuracy over several scene seeds.

Renders scripts/configs/ring_squeeze_scene.yaml with each seed, runs the full
pipeline with scripts/configs/ring_squeeze_config.yaml and compares the final
convergence and six-point radial profile with the rendered truth.

    python scripts/ring_squeeze_e2e.py --seeds 7 11 23 --workdir /tmp/squeeze
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np
import yaml

from tunnelmag.analysis import read_convergence_csv
from tunnelmag.config import PipelineConfig, load_config
from tunnelmag.pipeline import run_full
from tunnelmag.synth import SceneSpec, generate, read_truth, write_scene

CONFIGS = Path(__file__).resolve().parent / "configs"


def run_case(workdir: Path, scene: str, config: str, seed: int | None = None, threads: int = 1):
    """Render one scene and run the full pipeline; returns (out_dir, truth, seconds)."""
    raw = yaml.safe_load((CONFIGS / scene).read_text())
    if seed is not None:
        raw["rng_seed"] = seed
    scene_dir = workdir / f"scene_{raw['rng_seed']}"
    write_scene(*generate(SceneSpec.from_dict(raw)), scene_dir)
    cfg = load_config(CONFIGS / config).to_dict()
    cfg["input"] = {"manifest_path": str(scene_dir / "manifest.csv")}
    out = workdir / f"out_{raw['rng_seed']}"
    cfg = PipelineConfig.from_dict(cfg).with_output(out)
    t0 = time.perf_counter()
    run_full(cfg, threads=threads)
    return out, read_truth(scene_dir / "truth.json"), time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[7])
    ap.add_argument("--workdir", type=Path, default=Path("squeeze_runs"))
    args = ap.parse_args()
    for seed in args.seeds:
        out, truth, secs = run_case(args.workdir, "ring_squeeze_scene.yaml", "ring_squeeze_config.yaml", seed)
        conv = read_convergence_csv(out / "convergence.csv")["R27"][1][-1]
        rows = list(csv.DictReader(open(out / "deformation_R27.csv")))
        last = max(int(r["frame_index"]) for r in rows)
        prof = np.array([float(r["radial_mm"]) for r in rows if int(r["frame_index"]) == last])
        perr = 100 * (prof / truth.radial_profile_mm[-1] - 1)
        cerr = 100 * (conv / truth.convergence_mm[-1] - 1)
        print(f"seed {seed:>4}  {secs:5.1f} s  convergence {conv:+.4f} mm ({cerr:+.1f}%)  "
              f"profile error % {np.round(perr, 1).tolist()}")


if __name__ == "__main__":
    main()

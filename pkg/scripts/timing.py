"""Stage timings of a full run on the ring-squeeze scene (single thread by default).

    python scripts/timing.py --threads 1
"""

import argparse
import json
import tempfile
from pathlib import Path

from ring_squeeze_e2e import run_case


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        out, _, secs = run_case(Path(tmp), "ring_squeeze_scene.yaml", "ring_squeeze_config.yaml", threads=args.threads)
        report = json.loads((out / "report.json").read_text())
        for stage in report.get("stages", []):
            print(f"{stage.get('name', '?'):>8}  {stage.get('seconds', float('nan')):6.2f} s")
        print(f"{'total':>8}  {secs:6.2f} s")


if __name__ == "__main__":
    main()

"""Run the directional experiment suite (teachers + student variants) per seed.

Usage: python scripts/run_directional_suite.py OUT_ROOT [SEED ...]

Each seed gets its own subdirectory with data, teacher and student
checkpoints, and a suite_results.json of region mIoUs.
"""

import json
import sys
import time
from pathlib import Path

from oovseg.config import bench_config
from oovseg.experiments import run_directional_suite


def main(argv):
    if len(argv) < 1:
        print(__doc__)
        return 2
    out_root = Path(argv[0])
    seeds = [int(s) for s in argv[1:]] or [0, 1, 2]
    for seed in seeds:
        t0 = time.time()
        cfg = bench_config(seed=seed)
        results = run_directional_suite(cfg, out_root / f"seed{seed}")
        print(f"seed {seed} done in {time.time() - t0:.0f}s")
        print(json.dumps(results["variants"], indent=1, sort_keys=True))
        print("mono:", json.dumps(results["mono"], sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

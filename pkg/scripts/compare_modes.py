"""Run both trackers side by side and report how far apart they are.

The all-trajectories posterior restricted to trajectories alive at k should
coincide with the current-trajectories posterior.  Only a weight-ranked cap
on the number of global hypotheses is applied, which acts identically on
both.

    python scripts/compare_modes.py --seeds 8 --steps 10 --cap 30
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from helpers import mode_discrepancy, run_both_modes  # noqa: E402

from trajpmbm.pmbm import AssociationConfig, ReductionConfig  # noqa: E402
from trajpmbm.sim import ScenarioConfig, link_distance  # noqa: E402

ap = argparse.ArgumentParser()
ap.add_argument("--seeds", type=int, default=8)
ap.add_argument("--steps", type=int, default=10)
ap.add_argument("--cap", type=int, default=30)
args = ap.parse_args()

for seed in range(args.seeds):
    scen = ScenarioConfig(name="modes", K=args.steps, n_targets=1 + seed % 2, birth_window=3, clutter_rate=3.0,
                          rates=(4, 5))
    acfg = AssociationConfig(kbest=20, link_distance=link_distance(scen))
    rcfg = ReductionConfig(0.0, 0.0, 0.0, 0.0, max_global=args.cap, drop_dead_undetected=False)
    t0 = time.perf_counter()
    worst, rows = 0.0, 0
    for k, pc, pa in run_both_modes(scen, seed, acfg, rcfg):
        worst = max(worst, mode_discrepancy(pc, pa))
        rows = pc.table.n_rows
    print(f"seed {seed}: max gap {worst:.2e}, final rows {rows}, {time.perf_counter() - t0:.1f}s")

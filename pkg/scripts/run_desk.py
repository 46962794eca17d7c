"""Monte Carlo runs of the current-trajectories tracker on the desk scenario.

Prints the mean per-step errors of the tracker and of both baselines.

    python scripts/run_desk.py --runs 100 --out results/desk
"""

import argparse
import time

from trajpmbm.experiment import BASELINES, RunConfig, execute, mean_rows

ap = argparse.ArgumentParser()
ap.add_argument("--runs", type=int, default=100)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--mode", default="current", choices=("current", "all"))
ap.add_argument("--workers", type=int, default=1)
ap.add_argument("--out", default="results/desk")
args = ap.parse_args()

rc = RunConfig(scenario="desk", runs=args.runs, seed=args.seed, mode=args.mode, workers=args.workers,
               baselines=True, out=args.out)
t0 = time.perf_counter()
res = execute(rc)
wall = time.perf_counter() - t0

names = ("total", "localization", "missed", "false", "switch")
print(f"{args.runs} runs, {wall:.1f}s")
print(f"{'':16s}" + "".join(f"{n:>13s}" for n in names))
rows = [("pmbm", mean_rows(res["results"]))] + [(b, mean_rows(res["results"], baseline=b)) for b in BASELINES]
for name, m in rows:
    print(f"{name:16s}" + "".join(f"{v:13.4f}" for v in m.mean(axis=0)))

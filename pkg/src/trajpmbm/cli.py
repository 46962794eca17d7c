"""Command line driver.

    trajpmbm run --scenario desk --mode current --runs 10 --out results/desk
    trajpmbm run --manifest results/desk/manifest.json --out results/again
    trajpmbm simulate --scenario desk --seed 3 --out sim/
    trajpmbm evaluate --truth sim/truth.jsonl --estimates results/desk/estimates/run_000.jsonl --k 40
    trajpmbm scenario desk --out desk.json

Every ``run`` flag can also be set through an environment variable named
``TRAJPMBM_<FLAG>`` (e.g. ``TRAJPMBM_RUNS=5``); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .experiment import CSV_HEADER, RunConfig, execute, run_seed
from .metrics import MetricParams, trajectory_metric
from .pmbm import EmptyPosteriorError
from .sim import SCENARIOS, ScenarioConfig, generate_scans, generate_truth, get_scenario, sensor_model, write_scans
from .trajectory import read_trajectories, write_trajectories

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EMPTY = 3

_RUN_FLAGS = {
    "scenario": str, "mode": str, "runs": int, "seed": int, "out": str, "gate_prob": float,
    "samples": int, "kbest": int, "method": str, "prune_global": float, "prune_r": float,
    "prune_poisson": float, "workers": int,
}


def _env_default(name: str, cast):
    val = os.environ.get("TRAJPMBM_" + name.upper())
    if val is None:
        return None
    try:
        return cast(val)
    except ValueError:
        raise SystemExit(f"error: bad value for TRAJPMBM_{name.upper()}: {val!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trajpmbm", description="Trajectory PMBM trackers for extended targets")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo runs of a tracker on a scenario")
    defaults = RunConfig()
    for name, cast in _RUN_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        kw = {"type": cast, "default": None, "help": f"(default {getattr(defaults, name)!r})"}
        if name == "mode":
            kw["choices"] = ("current", "all")
        if name == "method":
            kw["choices"] = ("gibbs", "murty", "exhaustive")
        run.add_argument(flag, **kw)
    run.add_argument("--baselines", action="store_true", default=None,
                     help="also score the all-missed and nearest-cluster baselines")
    run.add_argument("--manifest", help="re-run the configuration recorded in a manifest.json")

    sim = sub.add_parser("simulate", help="write ground truth and scans of one run")
    sim.add_argument("--scenario", default="desk")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--run", type=int, default=0, help="run index (seed derivation as in 'run')")
    sim.add_argument("--out", required=True)

    ev = sub.add_parser("evaluate", help="score an estimate file against a truth file")
    ev.add_argument("--truth", required=True)
    ev.add_argument("--estimates", required=True)
    ev.add_argument("--k", type=int, required=True)
    ev.add_argument("--mode", choices=("current", "all"), default="all")
    ev.add_argument("--c", type=float, default=20.0)
    ev.add_argument("--p", type=float, default=1.0)
    ev.add_argument("--gamma", type=float, default=4.0)

    sc = sub.add_parser("scenario", help="write a named scenario as an editable JSON file")
    sc.add_argument("name", choices=sorted(SCENARIOS))
    sc.add_argument("--out", required=True)
    return ap


def _run_config(args) -> tuple[RunConfig, ScenarioConfig | None]:
    values = {}
    scen = None
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        values.update(manifest["run_config"])
        scen = ScenarioConfig.from_dict(manifest["scenario"])
    for name, cast in _RUN_FLAGS.items():
        env = _env_default(name, cast)
        if env is not None and not args.manifest:
            values[name] = env
        flag = getattr(args, name)
        if flag is not None:
            values[name] = flag
    env_bl = os.environ.get("TRAJPMBM_BASELINES")
    if env_bl is not None and not args.manifest:
        values["baselines"] = env_bl.lower() in ("1", "true", "yes")
    if args.baselines:
        values["baselines"] = True
    if "scenario" in values and scen is not None and values["scenario"] != manifest["run_config"]["scenario"]:
        scen = None
    return RunConfig.from_dict(values), scen


def cmd_run(args) -> int:
    rc, scen = _run_config(args)
    res = execute(rc, scen)
    rows = res["results"]
    print(f"{rc.runs} run(s), mode={rc.mode}, scenario={res['scenario'].name}, "
          f"wall {res['wall_time']:.1f}s -> {rc.out}")
    avg = np.mean([r["metrics"].mean(axis=0) for r in rows], axis=0)
    print("mean over steps: " + ", ".join(f"{n}={v:.4f}" for n, v in zip(CSV_HEADER.split(",")[1:], avg)))
    return EXIT_OK


def cmd_simulate(args) -> int:
    scen = get_scenario(args.scenario)
    s = run_seed(args.seed, args.run)
    truth = generate_truth(scen, seed=s)
    scans = generate_scans(truth, sensor_model(scen), s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(out / "truth.jsonl", [t.record() for t in truth.trajectories])
    write_scans(out / "scans.csv", scans)
    scen.save(out / "scenario.json")
    print(f"{len(truth.trajectories)} trajectories, {sum(len(s.z) for s in scans)} measurements -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth = read_trajectories(args.truth)
    est = read_trajectories(args.estimates)
    mp = MetricParams(args.c, args.p, args.gamma)
    print(CSV_HEADER)
    for k in range(1, args.k + 1):
        ref = [t for t in truth if args.mode == "all" or t.birth <= k <= t.end]
        cur = [e for e in est if args.mode == "all" or e.birth <= k <= e.end]
        r = trajectory_metric(cur, ref, mp, k)
        print(str(k) + "," + ",".join(f"{x:.12g}" for x in r.as_row()))
    return EXIT_OK


def cmd_scenario(args) -> int:
    SCENARIOS[args.name]().save(args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "simulate": cmd_simulate, "evaluate": cmd_evaluate, "scenario": cmd_scenario}
    try:
        return handler[args.command](args)
    except EmptyPosteriorError as exc:
        print(f"error: posterior emptied by reduction: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Monte Carlo driver: simulate, track, estimate and score.

Each run is seeded from ``(seed, run_index)`` only, so the result of a run is
the same whichever worker executes it.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .association import cluster_unused
from .metrics import MetricParams, trajectory_metric
from .pmbm import (AssociationConfig, PmbmPosterior, ReductionConfig, estimate, predict, reduce,
                   update)
from .sim import (ScenarioConfig, birth_components, generate_scan, generate_truth,
                  get_scenario, link_distance, motion_model, sensor_model)
from .trajectory import TrajectoryRecord, birth_intensity, write_trajectories

CSV_HEADER = "k,total,localization,missed,false,switch"
CSV_VERSION = 1
BASELINES = ("all_missed", "nearest_cluster")


@dataclass
class RunConfig:
    scenario: str = "desk"
    mode: str = "current"
    runs: int = 1
    seed: int = 0
    out: str = "results"
    gate_prob: float = 0.999
    samples: int = 10
    kbest: int = 20
    method: str = "gibbs"
    prune_global: float = 0.01
    prune_r: float = 1e-3
    prune_poisson: float = 1e-5
    workers: int = 1
    baselines: bool = False

    def __post_init__(self):
        if self.mode not in ("current", "all"):
            raise ValueError(f"mode must be 'current' or 'all', got {self.mode!r}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for name in ("prune_global", "prune_r", "prune_poisson"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})

    def association(self, scen: ScenarioConfig) -> AssociationConfig:
        return AssociationConfig(method=self.method, gate_prob=self.gate_prob, n_samples=self.samples,
                                 kbest=self.kbest, link_distance=link_distance(scen))

    def reduction(self) -> ReductionConfig:
        return ReductionConfig(prune_global=self.prune_global, prune_r=self.prune_r,
                               prune_poisson=self.prune_poisson)


def run_seed(seed: int, run_index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(run_index)]).generate_state(1)[0])


def nearest_cluster_estimates(z: np.ndarray, k: int, scen: ScenarioConfig, min_points: int = 3,
                              start_id: int = 0) -> list[TrajectoryRecord]:
    """One-step trajectories from measurement clusters, with no linking over time."""
    out = []
    if len(z) == 0:
        return out
    R = scen.meas_std ** 2 * np.eye(2)
    for n, cl in enumerate(cluster_unused(z, link_distance(scen))):
        if len(cl) < min_points:
            continue
        pts = z[cl]
        mean = pts.mean(axis=0)
        cov = np.cov(pts.T) if len(pts) > 1 else np.zeros((2, 2))
        w, U = np.linalg.eigh((cov - R) / scen.rho)
        X = (U * np.clip(w, 1.0, None)) @ U.T
        out.append(TrajectoryRecord(start_id + n, k, np.r_[mean, 0.0, 0.0][None], X[None]))
    return out


def run_single(scen: ScenarioConfig, rc: RunConfig, run_index: int, mp: MetricParams = MetricParams()):
    """One Monte Carlo run; returns per-step metric rows and final estimates."""
    s = run_seed(rc.seed, run_index)
    truth = generate_truth(scen, seed=s)
    sensor = sensor_model(scen)
    mm = motion_model(scen)
    births = birth_components(scen)
    acfg, rcfg = rc.association(scen), rc.reduction()
    p = PmbmPosterior.empty(rc.mode)
    rows = np.zeros((scen.K, 5))
    base_rows = {b: np.zeros((scen.K, 5)) for b in BASELINES} if rc.baselines else {}
    cluster_hist: list = []
    est: list = []
    for k in range(1, scen.K + 1):
        scan = generate_scan(truth, k, sensor, s)
        p = predict(p, mm, birth_intensity(births, k))
        p = update(p, scan.z, sensor, acfg, seed=s)
        p = reduce(p, rcfg)
        est = estimate(p)
        ref = truth.records(k, rc.mode)
        rows[k - 1] = trajectory_metric(est, ref, mp, k).as_row()
        if rc.baselines:
            base_rows["all_missed"][k - 1] = trajectory_metric([], ref, mp, k).as_row()
            now = nearest_cluster_estimates(scan.z, k, scen, start_id=10_000 * k)
            cluster_hist.extend(now)
            nc = now if rc.mode == "current" else cluster_hist
            base_rows["nearest_cluster"][k - 1] = trajectory_metric(nc, ref, mp, k).as_row()
    return {"metrics": rows, "baselines": base_rows, "estimates": est, "truth": truth}


def _run_task(args):
    scen_dict, rc_dict, idx = args
    return run_single(ScenarioConfig.from_dict(scen_dict), RunConfig.from_dict(rc_dict), idx)


def run_many(scen: ScenarioConfig, rc: RunConfig) -> list[dict]:
    tasks = [(scen.to_dict(), asdict(rc), i) for i in range(rc.runs)]
    if rc.workers == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=rc.workers) as ex:
        return list(ex.map(_run_task, tasks))


def format_csv(rows: np.ndarray) -> str:
    lines = [CSV_HEADER]
    for k, r in enumerate(rows, start=1):
        lines.append(str(k) + "," + ",".join(f"{x:.12g}" for x in r))
    return "\n".join(lines) + "\n"


def mean_rows(results: list[dict], key: str = "metrics", baseline: Optional[str] = None) -> np.ndarray:
    arrs = [r["baselines"][baseline] if baseline else r[key] for r in results]
    return np.mean(np.stack(arrs), axis=0)


def execute(rc: RunConfig, scen: Optional[ScenarioConfig] = None) -> dict:
    """Run all Monte Carlo repetitions and write the result files into ``rc.out``."""
    scen = scen if scen is not None else get_scenario(rc.scenario)
    out = Path(rc.out)
    (out / "estimates").mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    results = run_many(scen, rc)
    wall = time.perf_counter() - t0
    (out / "metrics.csv").write_text(format_csv(mean_rows(results)))
    if rc.baselines:
        for b in BASELINES:
            (out / f"baseline_{b}.csv").write_text(format_csv(mean_rows(results, baseline=b)))
    for i, r in enumerate(results):
        write_trajectories(out / "estimates" / f"run_{i:03d}.jsonl", r["estimates"])
        write_trajectories(out / "estimates" / f"truth_{i:03d}.jsonl",
                           [t.record() for t in r["truth"].trajectories])
    manifest = {
        "csv_version": CSV_VERSION,
        "run_config": asdict(rc),
        "scenario": scen.to_dict(),
        "wall_time_s": round(wall, 3),
        "cpu_count": os.cpu_count(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return {"results": results, "wall_time": wall, "scenario": scen}

"""Scenario, ground-truth and measurement simulation.

Targets follow nearly-constant-velocity motion and carry a fixed elliptic
extent.  A detected target produces ``Poisson(rate)`` points drawn from
``N(position, rho * X + R)``; clutter is Poisson and uniform over the region.
All randomness is keyed on ``(seed, stream, ...)`` so results do not depend on
execution order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .ggiw import GGIW, MotionModel, SensorModel
from .trajectory import TrajectoryRecord

_TRUTH_STREAM = 1
_SCAN_STREAM = 2


@dataclass
class ScenarioConfig:
    name: str = "desk"
    K: int = 40
    p_survival: float = 0.99
    p_detection: float = 0.9
    rates: tuple = (7, 8, 9)
    clutter_rate: float = 10.0
    region: tuple = (-100.0, 100.0, -100.0, 100.0)
    # births: either exactly n_targets spread over steps 1..birth_window, or
    # Poisson(birth_rate) new targets per step when n_targets is None
    n_targets: Optional[int] = 5
    birth_window: int = 20
    birth_rate: float = 0.0
    birth_sites: tuple = ((-75.0, -75.0), (-75.0, 75.0), (75.0, -75.0), (75.0, 75.0))
    birth_pos_std: float = 5.0
    speed_range: tuple = (1.0, 2.5)
    sigma_a: float = 0.1
    meas_std: float = 0.5
    rho: float = 0.25
    axis_range: tuple = (3.0, 6.0)
    rotate_extent: bool = False
    # filter-side birth model (one GGIW per site)
    filter_birth_weight: float = 0.05
    filter_birth_pos_std: float = 10.0
    filter_birth_vel_std: float = 2.0
    filter_sigma_a: float = 0.2
    filter_rate_shape: float = 16.0
    filter_extent_dof: float = 20.0
    filter_extent_var: float = 20.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_survival", "p_detection"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.clutter_rate < 0 or self.birth_rate < 0:
            raise ValueError("rates must be non-negative")
        if self.n_targets is not None and self.n_targets < 0:
            raise ValueError("n_targets must be >= 0")
        self.rates = tuple(self.rates)
        self.region = tuple(float(x) for x in self.region)
        self.birth_sites = tuple(tuple(float(v) for v in s) for s in self.birth_sites)
        self.speed_range = tuple(self.speed_range)
        self.axis_range = tuple(self.axis_range)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**obj)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def desk_scenario(**overrides) -> ScenarioConfig:
    return ScenarioConfig(**overrides)


def full_scenario(**overrides) -> ScenarioConfig:
    """Larger scenario: 27 targets over 100 steps in heavier clutter."""
    base = dict(name="full", K=100, clutter_rate=60.0, n_targets=27, birth_window=80)
    base.update(overrides)
    return ScenarioConfig(**base)


SCENARIOS = {"desk": desk_scenario, "full": full_scenario}


def get_scenario(name_or_path: str) -> ScenarioConfig:
    if name_or_path in SCENARIOS:
        return SCENARIOS[name_or_path]()
    return ScenarioConfig.load(name_or_path)


# -- ground truth ------------------------------------------------------------------

@dataclass
class TrueTrajectory:
    id: int
    birth: int
    states: np.ndarray   # (L, 4)
    extents: np.ndarray  # (L, 2, 2)
    rate: float

    @property
    def end(self) -> int:
        return self.birth + len(self.states) - 1

    def alive(self, k: int) -> bool:
        return self.birth <= k <= self.end

    def state_at(self, k: int):
        return self.states[k - self.birth], self.extents[k - self.birth]

    def record(self) -> TrajectoryRecord:
        return TrajectoryRecord(self.id, self.birth, self.states.copy(), self.extents.copy())


@dataclass
class GroundTruth:
    trajectories: list = field(default_factory=list)
    K: int = 0

    def alive_at(self, k: int) -> list:
        return [t for t in self.trajectories if t.alive(k)]

    def records(self, k: int, mode: str = "all") -> list[TrajectoryRecord]:
        """Truth as trajectory records truncated at ``k``.

        ``mode="current"`` keeps only trajectories alive at ``k``.
        """
        out = []
        for t in self.trajectories:
            if t.birth > k or (mode == "current" and not t.alive(k)):
                continue
            out.append(t.record().truncated(k))
        return out


def _ncv(Ts: float, sigma_a: float):
    return MotionModel.nearly_constant_velocity(Ts, sigma_a)


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def generate_truth(cfg: ScenarioConfig, seed: int = None) -> GroundTruth:
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([int(seed), _TRUTH_STREAM])
    if cfg.n_targets is not None:
        births = np.sort(rng.integers(1, min(cfg.birth_window, cfg.K) + 1, size=cfg.n_targets))
    else:
        counts = rng.poisson(cfg.birth_rate, size=cfg.K)
        births = np.repeat(np.arange(1, cfg.K + 1), counts)
    mm = _ncv(1.0, cfg.sigma_a)
    L_chol = np.linalg.cholesky(mm.Q + 1e-12 * np.eye(4))
    sites = np.array(cfg.birth_sites, dtype=float)
    out = []
    for tid, b in enumerate(births):
        b = int(b)
        site = sites[rng.integers(len(sites))]
        pos = site + cfg.birth_pos_std * rng.standard_normal(2)
        heading = math.atan2(-pos[1], -pos[0]) + rng.uniform(-math.pi / 4, math.pi / 4)
        speed = rng.uniform(*cfg.speed_range)
        x = np.array([pos[0], pos[1], speed * math.cos(heading), speed * math.sin(heading)])
        a, c = np.sort(rng.uniform(*cfg.axis_range, size=2))[::-1]
        theta = rng.uniform(0, math.pi)
        rate = float(cfg.rates[rng.integers(len(cfg.rates))])
        states, extents = [], []
        k = b
        while True:
            R = _rotation(math.atan2(x[3], x[2]) if cfg.rotate_extent else theta)
            states.append(x.copy())
            extents.append(R @ np.diag([a * a, c * c]) @ R.T)
            if k == cfg.K or rng.random() >= cfg.p_survival:
                break
            x = mm.F @ x + L_chol @ rng.standard_normal(4)
            k += 1
        out.append(TrueTrajectory(tid, b, np.array(states), np.array(extents), rate))
    return GroundTruth(out, cfg.K)


# -- measurements ----------------------------------------------------------------

@dataclass
class Scan:
    k: int
    z: np.ndarray        # (m, 2)
    origin: np.ndarray   # (m,) target id, -1 for clutter


def sensor_model(cfg: ScenarioConfig) -> SensorModel:
    return SensorModel(R=cfg.meas_std ** 2 * np.eye(2), p_detection=cfg.p_detection,
                       clutter_rate=cfg.clutter_rate, region=cfg.region, rho=cfg.rho)


def generate_scan(truth: GroundTruth, k: int, sensor: SensorModel, seed) -> Scan:
    rng = np.random.default_rng([int(s) for s in np.atleast_1d(seed)] + [_SCAN_STREAM, int(k)])
    pts, origin = [], []
    for t in truth.alive_at(k):
        if rng.random() >= sensor.p_detection:
            continue
        n = rng.poisson(t.rate)
        if n == 0:
            continue
        x, X = t.state_at(k)
        cov = sensor.spatial_cov(X)
        pts.append(rng.multivariate_normal(x[:2], cov, size=n, method="cholesky"))
        origin.extend([t.id] * n)
    n_fa = rng.poisson(sensor.clutter_rate)
    if n_fa:
        x0, x1, y0, y1 = sensor.region
        pts.append(np.column_stack([rng.uniform(x0, x1, n_fa), rng.uniform(y0, y1, n_fa)]))
        origin.extend([-1] * n_fa)
    if not pts:
        return Scan(k, np.zeros((0, 2)), np.zeros(0, dtype=int))
    z = np.vstack(pts)
    origin = np.array(origin, dtype=int)
    perm = rng.permutation(len(z))
    return Scan(k, z[perm], origin[perm])


def generate_scans(truth: GroundTruth, sensor: SensorModel, seed) -> list[Scan]:
    return [generate_scan(truth, k, sensor, seed) for k in range(1, truth.K + 1)]


def write_scans(path, scans):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "x", "y", "origin"])
        for s in scans:
            for (x, y), o in zip(s.z, s.origin):
                w.writerow([s.k, repr(float(x)), repr(float(y)), int(o)])


def read_scans(path, K: Optional[int] = None) -> list[Scan]:
    rows: dict = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(int(rec["k"]), []).append((float(rec["x"]), float(rec["y"]), int(rec["origin"])))
    K = K if K is not None else max(rows, default=0)
    out = []
    for k in range(1, K + 1):
        r = rows.get(k, [])
        z = np.array([[x, y] for x, y, _ in r]).reshape(-1, 2)
        out.append(Scan(k, z, np.array([o for *_, o in r], dtype=int)))
    return out


# -- filter models matching a scenario ------------------------------------------------

def motion_model(cfg: ScenarioConfig) -> MotionModel:
    return MotionModel.nearly_constant_velocity(1.0, cfg.filter_sigma_a, p_survival=cfg.p_survival)


def birth_components(cfg: ScenarioConfig) -> list[tuple[float, GGIW]]:
    mean_rate = float(np.mean(cfg.rates))
    alpha = cfg.filter_rate_shape
    v = cfg.filter_extent_dof
    V = (v - 6.0) * cfg.filter_extent_var * np.eye(2)
    P = np.diag([cfg.filter_birth_pos_std ** 2] * 2 + [cfg.filter_birth_vel_std ** 2] * 2)
    out = []
    for site in cfg.birth_sites:
        m = np.array([site[0], site[1], 0.0, 0.0])
        out.append((cfg.filter_birth_weight, GGIW(alpha, alpha / mean_rate, m, P, v, V)))
    return out


def link_distance(cfg: ScenarioConfig) -> float:
    """Four times the typical measurement spread of a target."""
    axis = float(np.mean(cfg.axis_range))
    return 4.0 * math.sqrt(cfg.rho * axis * axis + cfg.meas_std ** 2)

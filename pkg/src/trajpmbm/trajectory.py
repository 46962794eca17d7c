"""Single-trajectory densities over (birth, end, state sequence).

A trajectory density is a mixture over distinct ``(birth, end)`` pairs.  Each
component stores one GGIW marginal per time step ``birth..end``; joint
smoothing densities are not kept.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .ggiw import GGIW


@dataclass(frozen=True, eq=False)
class TrajectoryComponent:
    weight: float
    birth: int
    states: tuple  # GGIW per step

    def __post_init__(self):
        if not self.states:
            raise ValueError("a trajectory component needs at least one state")
        if self.birth < 0:
            raise ValueError("birth must be >= 0")

    @property
    def end(self) -> int:
        return self.birth + len(self.states) - 1

    @property
    def last(self) -> GGIW:
        return self.states[-1]

    def extended(self, state: GGIW, weight: float) -> "TrajectoryComponent":
        return TrajectoryComponent(weight, self.birth, self.states + (state,))

    def with_last(self, state: GGIW, weight: float) -> "TrajectoryComponent":
        return TrajectoryComponent(weight, self.birth, self.states[:-1] + (state,))


@dataclass(frozen=True, eq=False)
class TrajectoryDensity:
    components: tuple

    def __post_init__(self):
        keys = [(c.birth, c.end) for c in self.components]
        if len(set(keys)) != len(keys):
            raise ValueError(f"duplicate (birth, end) pairs: {keys}")

    @property
    def total_weight(self) -> float:
        return float(sum(c.weight for c in self.components))

    def alive_mass(self, k: int) -> float:
        return float(sum(c.weight for c in self.components if c.end == k))

    def normalized(self) -> "TrajectoryDensity":
        total = self.total_weight
        return TrajectoryDensity(tuple(replace(c, weight=c.weight / total) for c in self.components))

    def most_probable(self) -> TrajectoryComponent:
        return max(self.components, key=lambda c: (c.weight, c.end, -c.birth))


@dataclass(frozen=True, eq=False)
class TrajectoryBernoulli:
    existence: float
    density: TrajectoryDensity

    def __post_init__(self):
        if not -1e-12 <= self.existence <= 1.0 + 1e-12:
            raise ValueError(f"existence probability out of range: {self.existence}")


@dataclass(frozen=True, eq=False)
class PoissonComponent:
    log_weight: float
    birth: int
    states: tuple

    @property
    def end(self) -> int:
        return self.birth + len(self.states) - 1

    @property
    def last(self) -> GGIW:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class TrajectoryPoisson:
    components: tuple = ()

    def __len__(self):
        return len(self.components)

    def total_weight(self) -> float:
        return float(sum(math.exp(c.log_weight) for c in self.components))

    def __add__(self, other: "TrajectoryPoisson") -> "TrajectoryPoisson":
        return TrajectoryPoisson(self.components + other.components)


def birth_intensity(components: Sequence[tuple[float, GGIW]], k: int) -> TrajectoryPoisson:
    """Trajectory birth intensity at step ``k`` from ``(weight, GGIW)`` pairs."""
    return TrajectoryPoisson(tuple(
        PoissonComponent(math.log(w), k, (g,)) for w, g in components if w > 0))


def alive_probability(b: TrajectoryBernoulli, k: int) -> float:
    if k < 0:
        raise ValueError("k must be >= 0")
    return b.existence * b.density.alive_mass(k)


def state_marginal_at(d: TrajectoryDensity, t: int) -> Optional[tuple[float, list]]:
    """Mass of components covering step ``t`` and their step-``t`` marginals."""
    covering = [(c.weight, c.states[t - c.birth]) for c in d.components if c.birth <= t <= c.end]
    if not covering:
        return None
    return float(sum(w for w, _ in covering)), covering


# -- trajectory sets on disk ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """A point-estimate trajectory: kinematic means and extent matrices per step."""

    id: int
    birth: int
    means: np.ndarray    # (L, 4)
    extents: np.ndarray  # (L, 2, 2)

    @property
    def end(self) -> int:
        return self.birth + len(self.means) - 1

    def truncated(self, k: int) -> Optional["TrajectoryRecord"]:
        if self.birth > k:
            return None
        n = min(len(self.means), k - self.birth + 1)
        return TrajectoryRecord(self.id, self.birth, self.means[:n], self.extents[:n])

    @classmethod
    def from_component(cls, track_id: int, comp: TrajectoryComponent) -> "TrajectoryRecord":
        return cls(track_id, comp.birth,
                   np.array([s.m for s in comp.states]),
                   np.array([s.extent_mean for s in comp.states]))


def trajectory_to_json(rec: TrajectoryRecord) -> str:
    return json.dumps({
        "id": int(rec.id),
        "birth": int(rec.birth),
        "end": int(rec.end),
        "means": np.round(rec.means, 10).tolist(),
        "extents": np.round(rec.extents.reshape(len(rec.extents), 4), 10).tolist(),
    })


def trajectory_from_json(line: str) -> TrajectoryRecord:
    obj = json.loads(line)
    means = np.asarray(obj["means"], dtype=float).reshape(-1, 4)
    extents = np.asarray(obj["extents"], dtype=float).reshape(-1, 2, 2)
    rec = TrajectoryRecord(int(obj["id"]), int(obj["birth"]), means, extents)
    if "end" in obj and obj["end"] != rec.end:
        raise ValueError(f"trajectory {rec.id}: end {obj['end']} inconsistent with {len(means)} states")
    return rec


def write_trajectories(path, records: Iterable[TrajectoryRecord]):
    """One JSON object per line: id, birth, end, per-step means and extents."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(trajectory_to_json(rec) + "\n")


def read_trajectories(path) -> list[TrajectoryRecord]:
    text = Path(path).read_text()
    return [trajectory_from_json(line) for line in text.splitlines() if line.strip()]

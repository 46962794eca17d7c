"""PMBM posterior over sets of trajectories and its filtering recursion.

The detected part is a multi-Bernoulli mixture stored as tracks (each a list
of single-trajectory hypotheses) plus a look-up table whose rows are global
hypotheses.  Table entries are 1-based hypothesis indices; 0 means the track
does not exist in that global hypothesis.  The undetected part is a Poisson
intensity over trajectories.

Two modes share the update: ``"current"`` keeps alive trajectories only and
``"all"`` keeps dead ones as well, as extra (birth, end) mixture components.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .association import (AssociationProblem, MAX_ENUMERATION, cluster_unused, enumerate_all,
                          gate, murty_associations, sample_assignments)
from .ggiw import (GGIW, GGIWUpdater, MotionModel, SensorModel, cell_statistics, ggiw_missed, ggiw_predict,
                   merge_ggiw)
from .trajectory import (PoissonComponent, TrajectoryBernoulli, TrajectoryComponent,
                         TrajectoryDensity, TrajectoryPoisson, TrajectoryRecord)

CURRENT = "current"
ALL = "all"
MODES = (CURRENT, ALL)
_NEG_INF = -math.inf


def logsumexp(x) -> float:
    if isinstance(x, list) and len(x) <= 32:
        # short lists are the common case; numpy overhead dominates there
        top = max(x, default=_NEG_INF)
        if top == _NEG_INF or len(x) == 1:
            return float(top)
        return float(top + math.log(sum(math.exp(v - top) for v in x)))
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return _NEG_INF
    top = x.max()
    if top == _NEG_INF:
        return _NEG_INF
    return float(top + math.log(np.exp(x - top).sum()))


class EmptyPosteriorError(RuntimeError):
    """Reduction removed every global hypothesis."""


@dataclass(frozen=True, eq=False)
class SingleTrajectoryHypothesis:
    log_weight: float
    bernoulli: TrajectoryBernoulli
    history: frozenset = frozenset()  # {(k, j)} with 0-based measurement index j

    @property
    def r(self) -> float:
        return self.bernoulli.existence

    @property
    def density(self) -> TrajectoryDensity:
        return self.bernoulli.density


@dataclass(frozen=True, eq=False)
class Track:
    id: int
    hypotheses: tuple


@dataclass(frozen=True, eq=False)
class HypothesisTable:
    entries: np.ndarray      # (rows, tracks) int, 1-based hypothesis index, 0 = absent
    log_weights: np.ndarray  # (rows,)

    @property
    def n_rows(self) -> int:
        return len(self.log_weights)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


@dataclass(frozen=True, eq=False)
class PmbmPosterior:
    undetected: TrajectoryPoisson
    tracks: tuple
    table: HypothesisTable
    mode: str = CURRENT
    time: int = 0
    next_id: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def empty(cls, mode: str = CURRENT, undetected: TrajectoryPoisson = TrajectoryPoisson(),
              time: int = 0) -> "PmbmPosterior":
        table = HypothesisTable(np.zeros((1, 0), dtype=int), np.zeros(1))
        return cls(undetected, (), table, mode, time, 0)

    def hypothesis(self, i: int, entry: int) -> Optional[SingleTrajectoryHypothesis]:
        return None if entry == 0 else self.tracks[i].hypotheses[entry - 1]


# -- configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class AssociationConfig:
    """How candidate associations are generated for each global hypothesis.

    ``method`` is ``"gibbs"``, ``"murty"`` or ``"exhaustive"``.  Independent
    measurement groups with at most ``exhaustive_max`` measurements are always
    enumerated.  ``kbest`` caps the associations kept per global hypothesis
    (``None`` keeps all).
    """

    method: str = "gibbs"
    gate_prob: float = 0.999
    n_samples: int = 10
    kbest: Optional[int] = 20
    link_distance: float = 10.0
    exhaustive_max: int = 4

    def __post_init__(self):
        if self.method not in ("gibbs", "murty", "exhaustive"):
            raise ValueError(f"unknown association method {self.method!r}")
        if not 0.0 < self.gate_prob <= 1.0:
            raise ValueError("gate_prob must be in (0, 1]")
        if self.link_distance <= 0:
            raise ValueError("link_distance must be positive")


@dataclass(frozen=True)
class ReductionConfig:
    prune_global: float = 0.01
    prune_r: float = 1e-3
    prune_poisson: float = 1e-5
    prune_component: float = 1e-4
    max_global: Optional[int] = None
    drop_dead_undetected: bool = True

    def __post_init__(self):
        for name in ("prune_global", "prune_r", "prune_poisson", "prune_component"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {val}")

    @classmethod
    def none(cls) -> "ReductionConfig":
        return cls(0.0, 0.0, 0.0, 0.0, None, False)


# -- prediction -------------------------------------------------------------------

def _check_mode(p: PmbmPosterior, mode: str):
    if p.mode != mode:
        raise ValueError(f"posterior is in {p.mode!r} mode, expected {mode!r}")


def _check_birth(birth: TrajectoryPoisson, k: int):
    for c in birth.components:
        if c.birth != k or len(c.states) != 1:
            raise ValueError(f"birth components must start and end at step {k}")


def predict_current(p: PmbmPosterior, mm: MotionModel, birth: TrajectoryPoisson) -> PmbmPosterior:
    _check_mode(p, CURRENT)
    k = p.time + 1
    _check_birth(birth, k)
    ps = mm.p_survival
    log_ps = math.log(ps) if ps > 0 else _NEG_INF
    cache: dict = {}

    def pred(g):
        out = cache.get(id(g))
        if out is None:
            out = cache[id(g)] = ggiw_predict(g, mm)
        return out

    undetected = []
    if ps > 0:
        for c in p.undetected.components:
            undetected.append(PoissonComponent(c.log_weight + log_ps, c.birth, c.states + (pred(c.last),)))
    tracks = []
    for tr in p.tracks:
        hyps = []
        for h in tr.hypotheses:
            comps = tuple(c.extended(pred(c.last), c.weight) for c in h.density.components)
            b = TrajectoryBernoulli(h.r * ps, TrajectoryDensity(comps))
            hyps.append(SingleTrajectoryHypothesis(h.log_weight, b, h.history))
        tracks.append(Track(tr.id, tuple(hyps)))
    return PmbmPosterior(TrajectoryPoisson(tuple(undetected)) + birth, tuple(tracks), p.table,
                         p.mode, k, p.next_id)


def predict_all(p: PmbmPosterior, mm: MotionModel, birth: TrajectoryPoisson) -> PmbmPosterior:
    _check_mode(p, ALL)
    k = p.time + 1
    _check_birth(birth, k)
    ps = mm.p_survival
    cache: dict = {}

    def pred(g):
        out = cache.get(id(g))
        if out is None:
            out = cache[id(g)] = ggiw_predict(g, mm)
        return out

    undetected = []
    for c in p.undetected.components:
        if c.end != k - 1:
            undetected.append(c)
            continue
        if ps < 1:
            undetected.append(PoissonComponent(c.log_weight + math.log1p(-ps), c.birth, c.states))
        if ps > 0:
            undetected.append(PoissonComponent(c.log_weight + math.log(ps), c.birth,
                                               c.states + (pred(c.last),)))
    tracks = []
    for tr in p.tracks:
        hyps = []
        for h in tr.hypotheses:
            comps = []
            for c in h.density.components:
                if c.end != k - 1:
                    comps.append(c)
                    continue
                if ps < 1:
                    comps.append(TrajectoryComponent(c.weight * (1.0 - ps), c.birth, c.states))
                if ps > 0:
                    comps.append(c.extended(pred(c.last), c.weight * ps))
            b = TrajectoryBernoulli(h.r, TrajectoryDensity(tuple(comps)))
            hyps.append(SingleTrajectoryHypothesis(h.log_weight, b, h.history))
        tracks.append(Track(tr.id, tuple(hyps)))
    return PmbmPosterior(TrajectoryPoisson(tuple(undetected)) + birth, tuple(tracks), p.table,
                         p.mode, k, p.next_id)


def predict(p: PmbmPosterior, mm: MotionModel, birth: TrajectoryPoisson) -> PmbmPosterior:
    return (predict_current if p.mode == CURRENT else predict_all)(p, mm, birth)


# -- update -----------------------------------------------------------------------

def _gate_moments(g: GGIW, sensor: SensorModel):
    return g.m[:2], g.P[:2, :2] + sensor.spatial_cov(g.extent_mean)


class _HypInfo:
    """Per predicted hypothesis: alive components, missed-detection terms, gate."""

    __slots__ = ("active", "alive", "missed", "log_missed", "log_empty", "gated", "position")

    def __init__(self, h: SingleTrajectoryHypothesis, k: int, sensor: SensorModel):
        self.alive = [c for c in h.density.components if c.end == k] if h.r > 0 else []
        self.active = bool(self.alive)
        self.missed = []
        self.gated = frozenset()
        self.log_missed = 0.0
        self.log_empty = 0.0
        self.position = None
        if not self.active:
            return
        inner = sum(c.weight for c in h.density.components if c.end != k)
        for c in self.alive:
            post, ll = ggiw_missed(c.last, sensor)
            self.missed.append((post, ll))
            inner += c.weight * math.exp(ll)
        self.log_empty = math.log(inner) if inner > 0 else _NEG_INF
        self.log_missed = math.log(1.0 - h.r + h.r * inner) if (1.0 - h.r + h.r * inner) > 0 else _NEG_INF
        best = max(self.alive, key=lambda c: c.weight)
        self.position = best.last.m[:2]


class _UpdateContext:
    def __init__(self, p: PmbmPosterior, z: np.ndarray, sensor: SensorModel, cfg: AssociationConfig):
        self.p, self.z, self.sensor, self.cfg = p, z, sensor, cfg
        self.k = k = p.time
        self.log_kappa = sensor.log_clutter_intensity
        self.info: dict = {}
        gate_means, gate_covs, owners = [], [], []
        for i, tr in enumerate(p.tracks):
            for h_idx, h in enumerate(tr.hypotheses):
                info = _HypInfo(h, k, sensor)
                self.info[(i, h_idx)] = info
                for c in info.alive:
                    mu, S = _gate_moments(c.last, sensor)
                    gate_means.append(mu)
                    gate_covs.append(S)
                    owners.append((i, h_idx))
        self.poisson_alive = [c for c in p.undetected.components if c.end == k]
        self.poisson_missed = [ggiw_missed(c.last, sensor) for c in self.poisson_alive]
        for c in self.poisson_alive:
            mu, S = _gate_moments(c.last, sensor)
            gate_means.append(mu)
            gate_covs.append(S)
        m = len(z)
        if gate_means:
            hits = gate(z, np.array(gate_means), np.array(gate_covs), cfg.gate_prob)
        else:
            hits = np.zeros((m, 0), dtype=bool)
        n_t = len(owners)
        per_hyp: dict = {}
        for col, key in enumerate(owners):
            per_hyp.setdefault(key, np.zeros(m, dtype=bool))
            per_hyp[key] |= hits[:, col]
        for key, mask in per_hyp.items():
            self.info[key].gated = frozenset(np.flatnonzero(mask).tolist())
        self.poisson_hits = hits[:, n_t:]
        track_any = hits[:, :n_t].any(axis=1) if n_t else np.zeros(m, dtype=bool)
        self.poisson_gated = self.poisson_hits.any(axis=1) if len(self.poisson_alive) else np.zeros(m, dtype=bool)
        self.in_problem = [int(j) for j in np.flatnonzero(track_any | self.poisson_gated)]
        self.n_dropped = m - len(self.in_problem)
        self.link_pairs = []
        if len(self.in_problem) > 1:
            pts = z[self.in_problem]
            pairs = cKDTree(pts).query_pairs(cfg.link_distance, output_type="ndarray")
            self.link_pairs = [(self.in_problem[a], self.in_problem[b]) for a, b in pairs]
        self._track_cache: dict = {}
        self._new_cache: dict = {}
        self._stats: dict = {}
        self._updaters: dict = {}
        self._terms: dict = {}

    def cell_stats(self, cell: frozenset):
        out = self._stats.get(cell)
        if out is None:
            out = self._stats[cell] = cell_statistics(self.z[sorted(cell)])
        return out

    def _updater(self, g: GGIW) -> GGIWUpdater:
        up = self._updaters.get(id(g))
        if up is None:
            up = self._updaters[id(g)] = GGIWUpdater(g, self.sensor)
        return up

    def component_loglik(self, g: GGIW, cell: frozenset) -> float:
        return self._updater(g).loglik(*self.cell_stats(cell))

    def component_posterior(self, g: GGIW, cell: frozenset) -> GGIW:
        return self._updater(g).update(*self.cell_stats(cell))[0]

    def _track_terms(self, key):
        out = self._terms.get(key)
        if out is None:
            i, h_idx = key
            h = self.p.tracks[i].hypotheses[h_idx]
            terms = [(math.log(c.weight) if c.weight > 0 else _NEG_INF, self._updater(c.last), c)
                     for c in self.info[key].alive]
            out = self._terms[key] = (math.log(h.r) if h.r > 0 else _NEG_INF, terms)
        return out

    # factors -------------------------------------------------------------------
    def track_detail(self, key, cell: frozenset):
        ck = (key, cell)
        out = self._track_cache.get(ck)
        if out is None:
            log_r, terms = self._track_terms(key)
            st = self.cell_stats(cell)
            parts = [(lw_c + up.loglik(*st) if lw_c > _NEG_INF else _NEG_INF, c) for lw_c, up, c in terms]
            lw = logsumexp([x[0] for x in parts]) if parts else _NEG_INF
            total = log_r + lw if lw > _NEG_INF else _NEG_INF
            out = self._track_cache[ck] = (float(total), parts)
        return out

    def new_detail(self, cell: frozenset):
        out = self._new_cache.get(cell)
        if out is None:
            idx = sorted(cell)
            ok = self.poisson_hits[idx].all(axis=0) if len(self.poisson_alive) else []
            parts = []
            if len(idx):
                st = self.cell_stats(cell)
                parts = [(c.log_weight + self._updater(c.last).loglik(*st), c)
                         for n, c in enumerate(self.poisson_alive) if ok[n]]
            lw = logsumexp([x[0] for x in parts]) if parts else _NEG_INF
            out = self._new_cache[cell] = (float(lw), parts)
        return out

    def folded_new_weight(self, cell: frozenset) -> float:
        d = self.new_detail(cell)[0]
        if len(cell) == 1:
            return float(np.logaddexp(self.log_kappa, d))
        return d

    # grouping ------------------------------------------------------------------
    def groups(self, active: Sequence[tuple]) -> list[tuple[list, list]]:
        """Independent (tracks, measurements) blocks for one global hypothesis."""
        meas = self.in_problem
        if not meas:
            return []
        if self.cfg.method == "exhaustive":
            tracks = [key for key in active if self.info[key].gated]
            return [(tracks, list(meas))]
        parent = {j: j for j in meas}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

        for key in active:
            g = sorted(self.info[key].gated)
            for j in g[1:]:
                union(g[0], j)
        for a, b in self.link_pairs:
            union(a, b)
        blocks: dict = {}
        for j in meas:
            blocks.setdefault(find(j), []).append(j)
        out = []
        for root in sorted(blocks):
            js = blocks[root]
            jset = set(js)
            tracks = [key for key in active if self.info[key].gated & jset]
            out.append((tracks, js))
        return out


def _fold(ctx: _UpdateContext, tracks, hyps) -> list[tuple[tuple, frozenset, float]]:
    """Collapse clutter/new-singleton variants and recompute folded weights."""
    seen = {}
    for hyp in hyps:
        folded = hyp.folded_new_cells()
        key = (hyp.track_cells, folded)
        if key in seen:
            continue
        w = 0.0
        for t, cell in enumerate(hyp.track_cells):
            w += ctx.info[tracks[t]].log_missed if cell is None else ctx.track_detail(tracks[t], cell)[0]
        for cell in folded:
            w += ctx.folded_new_weight(cell)
        if w > _NEG_INF:
            seen[key] = w
    out = [(tc, nc, w) for (tc, nc), w in seen.items()]
    out.sort(key=lambda x: (-x[2], _assoc_order(x[0], x[1])))
    return out


def _assoc_order(track_cells, new_cells):
    return (tuple(() if c is None else tuple(sorted(c)) for c in track_cells),
            tuple(sorted(tuple(sorted(c)) for c in new_cells)))


def _group_associations(ctx: _UpdateContext, tracks: list, meas: list, seed) -> list:
    cfg = ctx.cfg
    gate_map = {j: frozenset(t for t, key in enumerate(tracks) if j in ctx.info[key].gated) for j in meas}
    problem = AssociationProblem(
        meas,
        [ctx.info[key].log_missed for key in tracks],
        lambda t, cell: ctx.track_detail(tracks[t], cell)[0],
        lambda cell: ctx.new_detail(cell)[0],
        lambda j: ctx.log_kappa,
        gate_map,
    )
    exact = cfg.method == "exhaustive" or len(meas) <= cfg.exhaustive_max
    if exact and len(meas) <= MAX_ENUMERATION:
        hyps = enumerate_all(problem)
    elif cfg.method == "murty":
        hyps = murty_associations(problem, _candidate_partitions(ctx, tracks, meas), cfg.kbest or 10**6)
    else:
        hyps = sample_assignments(problem, cfg.n_samples, seed, _greedy_init(ctx, problem, tracks, meas))
    folded = _fold(ctx, tracks, hyps)
    if cfg.kbest is not None:
        folded = folded[:cfg.kbest]
    return folded


def _greedy_init(ctx: _UpdateContext, problem: AssociationProblem, tracks: list, meas: list):
    cells: dict = {}
    loose = []
    for j in meas:
        cands = sorted(problem.track_gate[j])
        if cands:
            zj = ctx.z[j]
            t = min(cands, key=lambda t: float(np.sum((ctx.info[tracks[t]].position - zj) ** 2)))
            cells.setdefault(t, set()).add(j)
        else:
            loose.append(j)
    track_cells = [frozenset(cells[t]) if t in cells else None for t in range(len(tracks))]
    new_cells, clutter = [], []
    if loose:
        for cl in cluster_unused(ctx.z[loose], ctx.cfg.link_distance):
            cell = frozenset(loose[a] for a in cl)
            if ctx.new_detail(cell)[0] > _NEG_INF:
                new_cells.append(cell)
            else:
                clutter.extend(cell)
    return problem.hypothesis(track_cells, new_cells, clutter)


def _candidate_partitions(ctx: _UpdateContext, tracks: list, meas: list):
    pts = ctx.z[meas]
    out = []
    for scale in (0.5, 1.0, 2.0):
        part = [frozenset(meas[a] for a in cl) for cl in cluster_unused(pts, scale * ctx.cfg.link_distance)]
        out.append(part)
    out.append([frozenset([j]) for j in meas])
    return out


def _kbest_product(lists: list, n: Optional[int]) -> list:
    """Best combinations (one entry per list) by summed weight."""
    if any(not lst for lst in lists):
        return []
    if not lists:
        return [((), 0.0)]
    if n is None:
        combos = [(idx, sum(lst[i][2] for lst, i in zip(lists, idx)))
                  for idx in itertools.product(*[range(len(lst)) for lst in lists])]
        combos.sort(key=lambda x: (-x[1], x[0]))
        return combos
    start = (0,) * len(lists)
    heap = [(-sum(lst[0][2] for lst in lists), start)]
    seen = {start}
    out = []
    while heap and len(out) < n:
        neg, idx = heapq.heappop(heap)
        out.append((idx, -neg))
        for g in range(len(lists)):
            if idx[g] + 1 < len(lists[g]):
                nxt = idx[:g] + (idx[g] + 1,) + idx[g + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (-sum(lst[i][2] for lst, i in zip(lists, nxt)), nxt))
    return out


def _detected_child(ctx: _UpdateContext, key, cell: frozenset, parent: SingleTrajectoryHypothesis):
    total, parts = ctx.track_detail(key, cell)
    lw = np.array([x[0] for x in parts])
    w = np.exp(lw - logsumexp(lw))
    comps = tuple(c.with_last(ctx.component_posterior(c.last, cell), float(wi))
                  for wi, (_, c) in zip(w, parts) if wi > 0)
    hist = parent.history | frozenset((ctx.k, j) for j in cell)
    return SingleTrajectoryHypothesis(parent.log_weight + total,
                                      TrajectoryBernoulli(1.0, TrajectoryDensity(comps)), hist)


def _missed_child(ctx: _UpdateContext, key, parent: SingleTrajectoryHypothesis):
    info = ctx.info[key]
    if not info.active:
        return parent
    k = ctx.k
    post = {id(c): pm for c, pm in zip(info.alive, info.missed)}
    comps = []
    for c in parent.density.components:
        if c.end == k:
            g, ll = post[id(c)]
            w = c.weight * math.exp(ll)
            if w > 0:
                comps.append(c.with_last(g, w))
        elif c.weight > 0:
            comps.append(c)
    total = sum(c.weight for c in comps)
    if total <= 0:
        return SingleTrajectoryHypothesis(parent.log_weight + info.log_missed,
                                          TrajectoryBernoulli(0.0, parent.density), parent.history)
    comps = tuple(TrajectoryComponent(c.weight / total, c.birth, c.states) for c in comps)
    r = parent.r * total / (1.0 - parent.r + parent.r * total)
    return SingleTrajectoryHypothesis(parent.log_weight + info.log_missed,
                                      TrajectoryBernoulli(r, TrajectoryDensity(comps)), parent.history)


def _new_track_hypothesis(ctx: _UpdateContext, cell: frozenset):
    d, parts = ctx.new_detail(cell)
    if d == _NEG_INF:
        return None
    lw = np.array([x[0] for x in parts])
    w = np.exp(lw - d)
    by_birth: dict = {}
    for wi, (_, c) in zip(w, parts):
        if wi <= 0:
            continue
        post = ctx.component_posterior(c.last, cell)
        by_birth.setdefault(c.birth, []).append((wi, c.states[:-1] + (post,)))
    comps = []
    for b in sorted(by_birth):
        members = by_birth[b]
        wb = sum(x[0] for x in members)
        if len(members) == 1:
            states = members[0][1]
        else:
            states = tuple(merge_ggiw([x[0] for x in members], [x[1][s] for x in members])
                           for s in range(len(members[0][1])))
        comps.append(TrajectoryComponent(float(wb), b, states))
    folded = ctx.folded_new_weight(cell)
    r = math.exp(d - folded) if len(cell) == 1 else 1.0
    hist = frozenset((ctx.k, j) for j in cell)
    return SingleTrajectoryHypothesis(folded, TrajectoryBernoulli(r, TrajectoryDensity(tuple(comps))), hist)


def update(p: PmbmPosterior, z, sensor: SensorModel, cfg: AssociationConfig = AssociationConfig(),
           seed: int = 0) -> PmbmPosterior:
    """Condition the predicted posterior ``p`` on the scan ``z`` (m x 2).

    Measurements outside every gate are treated as clutter in every global
    hypothesis and dropped, which only rescales all row weights equally.
    """
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    ctx = _UpdateContext(p, z, sensor, cfg)
    n_old = len(p.tracks)

    child_keys = [dict() for _ in range(n_old)]   # per track: (parent_idx, cell) -> new 1-based idx
    new_cells: dict = {}                           # cell -> column offset
    rows = []                                      # (entries for old tracks, new cells, log weight)
    group_cache: dict = {}                         # identical blocks recur across rows
    for a in range(p.table.n_rows):
        row = p.table.entries[a]
        present = [(i, int(row[i]) - 1) for i in range(n_old) if row[i] > 0]
        active = [key for key in present if ctx.info[key].active]
        groups = ctx.groups(active)
        in_group = set(itertools.chain.from_iterable(t for t, _ in groups))
        base = float(p.table.log_weights[a])
        for key in active:
            if key not in in_group:
                base += ctx.info[key].log_missed
        lists, group_tracks = [], []
        for tracks, meas in groups:
            gkey = (tuple(tracks), tuple(meas))
            if gkey not in group_cache:
                rng_seed = [int(seed) & 0xFFFFFFFF, p.time, zlib.crc32(repr(gkey).encode())]
                group_cache[gkey] = _group_associations(ctx, tracks, meas, rng_seed)
            lists.append(group_cache[gkey])
            group_tracks.append(tracks)
        limit = None if cfg.method == "exhaustive" else cfg.kbest
        for idx, w in _kbest_product(lists, limit):
            assigned = {}
            cells = []
            for g, n in enumerate(idx):
                tcells, ncells, _ = lists[g][n]
                for t, cell in enumerate(tcells):
                    assigned[group_tracks[g][t]] = cell
                cells.extend(ncells)
            entries = np.zeros(n_old, dtype=int)
            for (i, h_idx) in present:
                cell = assigned.get((i, h_idx)) if (i, h_idx) in active else None
                ck = (h_idx, cell)
                if ck not in child_keys[i]:
                    child_keys[i][ck] = len(child_keys[i]) + 1
                entries[i] = child_keys[i][ck]
            used = []
            for cell in sorted(cells, key=lambda c: sorted(c)):
                if cell not in new_cells:
                    new_cells[cell] = None
                used.append(cell)
            rows.append((entries, used, base + w))

    # materialise hypotheses
    tracks = []
    for i, tr in enumerate(p.tracks):
        hyps = [None] * len(child_keys[i])
        for (h_idx, cell), n in child_keys[i].items():
            parent = tr.hypotheses[h_idx]
            key = (i, h_idx)
            hyps[n - 1] = _missed_child(ctx, key, parent) if cell is None else _detected_child(ctx, key, cell, parent)
        tracks.append(Track(tr.id, tuple(hyps)))
    col_of = {}
    next_id = p.next_id
    for cell in sorted(new_cells, key=lambda c: sorted(c)):
        hyp = _new_track_hypothesis(ctx, cell)
        if hyp is None:
            continue
        col_of[cell] = n_old + len(col_of)
        tracks.append(Track(next_id, (hyp,)))
        next_id += 1

    if not rows:
        raise EmptyPosteriorError("no admissible association for any global hypothesis")
    entries = np.zeros((len(rows), len(tracks)), dtype=int)
    log_w = np.empty(len(rows))
    for r_idx, (old, used, w) in enumerate(rows):
        entries[r_idx, :n_old] = old
        for cell in used:
            if cell in col_of:
                entries[r_idx, col_of[cell]] = 1
        log_w[r_idx] = w
    total = logsumexp(log_w)
    if not np.isfinite(total):
        raise EmptyPosteriorError("every global hypothesis has zero weight")
    log_w = log_w - total

    undetected = []
    for c, (post, ll) in zip(ctx.poisson_alive, ctx.poisson_missed):
        undetected.append(PoissonComponent(c.log_weight + ll, c.birth, c.states[:-1] + (post,)))
    undetected.extend(c for c in p.undetected.components if c.end != p.time)
    out = PmbmPosterior(TrajectoryPoisson(tuple(undetected)), tuple(tracks),
                        HypothesisTable(entries, log_w), p.mode, p.time, next_id)
    return _compact(out)


# -- reduction --------------------------------------------------------------------

def _compact(p: PmbmPosterior) -> PmbmPosterior:
    """Drop unreferenced hypotheses and empty tracks, re-indexing the table."""
    entries = p.table.entries
    new_cols, tracks = [], []
    for i, tr in enumerate(p.tracks):
        col = entries[:, i]
        used = sorted(set(int(x) for x in col if x > 0))
        if not used:
            continue
        remap = np.zeros(len(tr.hypotheses) + 1, dtype=int)
        remap[used] = np.arange(1, len(used) + 1)
        new_cols.append(remap[col])
        tracks.append(Track(tr.id, tuple(tr.hypotheses[u - 1] for u in used)))
    ent = np.stack(new_cols, axis=1) if new_cols else np.zeros((len(entries), 0), dtype=int)
    return PmbmPosterior(p.undetected, tuple(tracks), HypothesisTable(ent, p.table.log_weights),
                         p.mode, p.time, p.next_id)


def _prune_components(h: SingleTrajectoryHypothesis, thr: float) -> SingleTrajectoryHypothesis:
    comps = h.density.components
    keep = [c for c in comps if c.weight >= thr]
    if len(keep) == len(comps) or not keep:
        return h
    total = sum(c.weight for c in keep)
    keep = tuple(TrajectoryComponent(c.weight / total, c.birth, c.states) for c in keep)
    return SingleTrajectoryHypothesis(h.log_weight, TrajectoryBernoulli(h.r, TrajectoryDensity(keep)), h.history)


def reduce(p: PmbmPosterior, cfg: ReductionConfig = ReductionConfig()) -> PmbmPosterior:
    lw = p.table.log_weights - logsumexp(p.table.log_weights)
    keep = np.exp(lw) >= cfg.prune_global
    if cfg.max_global is not None and keep.sum() > cfg.max_global:
        order = np.argsort(-lw, kind="stable")
        top = np.zeros_like(keep)
        top[order[:cfg.max_global]] = True
        keep &= top
    if not keep.any():
        raise EmptyPosteriorError("global hypothesis pruning removed every row")
    entries = p.table.entries[keep].copy()
    lw = lw[keep]

    if cfg.prune_r > 0:
        for i, tr in enumerate(p.tracks):
            low = np.array([0] + [1 if h.r < cfg.prune_r else 0 for h in tr.hypotheses], dtype=bool)
            entries[low[entries[:, i]], i] = 0

    # merge rows with identical hypothesis vectors
    uniq, inverse = np.unique(entries, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    if len(uniq) < len(entries):
        merged = np.full(len(uniq), _NEG_INF)
        for src, dst in enumerate(inverse):
            merged[dst] = np.logaddexp(merged[dst], lw[src])
        first = np.full(len(uniq), len(entries))
        for src, dst in enumerate(inverse):
            first[dst] = min(first[dst], src)
        order = np.argsort(first)   # keep original row order
        entries, lw = uniq[order], merged[order]
    lw = lw - logsumexp(lw)

    tracks = p.tracks
    if cfg.prune_component > 0:
        tracks = tuple(Track(tr.id, tuple(_prune_components(h, cfg.prune_component) for h in tr.hypotheses))
                       for tr in tracks)
    log_thr = math.log(cfg.prune_poisson) if cfg.prune_poisson > 0 else _NEG_INF
    undetected = tuple(c for c in p.undetected.components
                       if c.log_weight >= log_thr and not (cfg.drop_dead_undetected and c.end < p.time))
    out = PmbmPosterior(TrajectoryPoisson(undetected), tracks, HypothesisTable(entries, lw),
                        p.mode, p.time, p.next_id)
    return _compact(out)


# -- estimation and diagnostics ---------------------------------------------------

def estimate(p: PmbmPosterior, threshold: float = 0.5) -> list[TrajectoryRecord]:
    """Trajectories of the most likely global hypothesis with existence above ``threshold``."""
    if p.table.n_rows == 0:
        return []
    a = int(np.argmax(p.table.log_weights))
    out = []
    for i, e in enumerate(p.table.entries[a]):
        h = p.hypothesis(i, int(e))
        if h is None or h.r <= threshold or not h.density.components:
            continue
        out.append(TrajectoryRecord.from_component(p.tracks[i].id, h.density.most_probable()))
    return out


def row_hypotheses(p: PmbmPosterior, a: int) -> list[tuple[int, SingleTrajectoryHypothesis]]:
    return [(i, p.hypothesis(i, int(e))) for i, e in enumerate(p.table.entries[a]) if e > 0]


def check_structure(p: PmbmPosterior, atol: float = 1e-12) -> list[str]:
    """Violations of the PMBM bookkeeping invariants (empty list when valid)."""
    problems = []
    t = p.table
    if t.entries.ndim != 2 or t.entries.shape != (t.n_rows, len(p.tracks)):
        return [f"table shape {t.entries.shape} does not match {t.n_rows} rows x {len(p.tracks)} tracks"]
    if t.n_rows == 0:
        problems.append("table has no rows")
    if abs(math.fsum(np.exp(t.log_weights)) - 1.0) > atol:
        problems.append(f"row weights sum to {math.fsum(np.exp(t.log_weights))!r}")
    for i, tr in enumerate(p.tracks):
        col = t.entries[:, i]
        if col.min(initial=0) < 0 or col.max(initial=0) > len(tr.hypotheses):
            problems.append(f"track {tr.id}: entry out of range")
            continue
        if set(range(1, len(tr.hypotheses) + 1)) - set(col.tolist()):
            problems.append(f"track {tr.id}: unreferenced hypothesis")
        for n, h in enumerate(tr.hypotheses):
            if not -1e-12 <= h.r <= 1 + 1e-12:
                problems.append(f"track {tr.id} hyp {n}: r={h.r}")
            comps = h.density.components
            if h.r > 0 and not comps:
                problems.append(f"track {tr.id} hyp {n}: r > 0 with empty density")
            if comps and abs(h.density.total_weight - 1.0) > 1e-9:
                problems.append(f"track {tr.id} hyp {n}: density mass {h.density.total_weight}")
            for c in comps:
                if c.end > p.time:
                    problems.append(f"track {tr.id} hyp {n}: component ends after {p.time}")
                if p.mode == CURRENT and c.end != p.time:
                    problems.append(f"track {tr.id} hyp {n}: dead component in current mode")
    for a in range(t.n_rows):
        seen = set()
        for i, h in row_hypotheses(p, a):
            if h.history & seen:
                problems.append(f"row {a}: overlapping association histories")
            seen |= h.history
    for c in p.undetected.components:
        if c.end > p.time or (p.mode == CURRENT and c.end != p.time):
            problems.append(f"Poisson component ({c.birth}, {c.end}) inconsistent with time {p.time}")
    return problems


def snapshot(p: PmbmPosterior) -> dict:
    """JSON-ready dump of the table and per-hypothesis summaries."""
    return {
        "time": p.time,
        "mode": p.mode,
        "rows": p.table.entries.tolist(),
        "row_log_weights": [float(x) for x in p.table.log_weights],
        "tracks": [{
            "id": tr.id,
            "hypotheses": [{
                "log_weight": float(h.log_weight),
                "r": float(h.r),
                "history": sorted([int(k), int(j)] for k, j in h.history),
                "components": [{"weight": float(c.weight), "birth": c.birth, "end": c.end,
                                "mean": np.asarray(c.last.m).tolist()} for c in h.density.components],
            } for h in tr.hypotheses],
        } for tr in p.tracks],
        "undetected": [{"log_weight": float(c.log_weight), "birth": c.birth, "end": c.end}
                       for c in p.undetected.components],
    }


def write_snapshot(path, p: PmbmPosterior):
    with open(path, "w") as fh:
        json.dump(snapshot(p), fh, indent=1)

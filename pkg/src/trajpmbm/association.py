"""Single-scan data association for extended targets.

An association partitions the measurements of one scan into cells and sends
each cell to an existing track (at most one cell per track), to a new
target drawn from the undetected Poisson intensity, or, for singletons, to
clutter.  The weight of an association is a product of per-target factors,
so every routine here works through an :class:`AssociationProblem` that
evaluates (and caches) those factors.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.stats import chi2

MAX_ENUMERATION = 8
_NEG_INF = -math.inf


def gate_threshold(prob: float, dim: int = 2) -> float:
    if prob >= 1.0:
        return math.inf
    return float(chi2.ppf(prob, dim))


def gate(z, means, covs, prob: float = 0.999) -> np.ndarray:
    """Boolean (measurements x components) matrix of chi-square gate hits."""
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    means = np.asarray(means, dtype=float).reshape(-1, 2)
    covs = np.asarray(covs, dtype=float).reshape(-1, 2, 2)
    out = np.zeros((len(z), len(means)), dtype=bool)
    if len(z) == 0 or len(means) == 0:
        return out
    thr = gate_threshold(prob, 2)
    a, b, d = covs[:, 0, 0], 0.5 * (covs[:, 0, 1] + covs[:, 1, 0]), covs[:, 1, 1]
    det = a * d - b * b
    bad = np.flatnonzero(~((a > 0) & (det > 0)))
    if len(bad):
        raise ValueError(f"innovation covariance of component {bad[0]} is not SPD")
    dx = z[:, None, 0] - means[None, :, 0]
    dy = z[:, None, 1] - means[None, :, 1]
    d2 = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return d2 <= thr


def cluster_unused(points, link_distance: float) -> list[list[int]]:
    """Single-linkage clusters: connected components under distance <= link."""
    if link_distance <= 0:
        raise ValueError("link_distance must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    if n == 0:
        return []
    pairs = cKDTree(points).query_pairs(link_distance, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    clusters: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        clusters.setdefault(lab, []).append(i)
    return sorted(clusters.values(), key=lambda c: c[0])


def set_partitions(items: Sequence) -> Iterator[list[list]]:
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


# -- k-best assignment ---------------------------------------------------------

def _solve_constrained(C, forced, forbidden):
    M = C.copy()
    for r, c in forbidden:
        M[r, c] = np.inf
    for r, c in forced:
        keep = M[r, c]
        M[r, :] = np.inf
        M[:, c] = np.inf
        M[r, c] = keep
    finite = np.isfinite(M)
    if not finite.any(axis=1).all():
        return None
    big = 2.0 * np.abs(M[finite]).sum() + 1.0 if finite.any() else 1.0
    rows, cols = linear_sum_assignment(np.where(finite, M, big))
    if not finite[rows, cols].all():
        return None
    assignment = tuple(int(c) for c in cols)
    return float(sum(C[r, c] for r, c in enumerate(assignment))), assignment


def kbest_assignments(cost, k: int) -> list[tuple[tuple[int, ...], float]]:
    """The ``k`` cheapest one-to-one row-to-column assignments (Murty).

    Returns ``(assignment, cost)`` pairs in nondecreasing cost order, ties
    broken by the lexicographic assignment vector.  ``assignment[r]`` is the
    column of row ``r``.  ``inf`` entries are forbidden.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        raise ValueError("cost must be a matrix")
    n, m = C.shape
    if n == 0:
        return [((), 0.0)]
    if n > m:
        raise ValueError("more rows than columns: no one-to-one assignment")
    root = _solve_constrained(C, (), frozenset())
    if root is None:
        raise ValueError("cost matrix admits no feasible assignment")
    tick = itertools.count()
    heap = [(root[0], root[1], next(tick), (), frozenset())]
    out: list[tuple[float, tuple]] = []
    while heap:
        if len(out) >= k:
            kth = out[k - 1][0] if len(out) >= k else math.inf
            if heap[0][0] > kth + 1e-12 * max(1.0, abs(kth)):
                break
        cst, assignment, _, forced, forbidden = heapq.heappop(heap)
        out.append((cst, assignment))
        forced_rows = {r for r, _ in forced}
        cur_forced = tuple(forced)
        for r in range(n):
            if r in forced_rows:
                continue
            child = _solve_constrained(C, cur_forced, forbidden | {(r, assignment[r])})
            if child is not None:
                heapq.heappush(heap, (child[0], child[1], next(tick), cur_forced,
                                      forbidden | {(r, assignment[r])}))
            cur_forced = cur_forced + ((r, assignment[r]),)
    out.sort(key=lambda item: (item[0], item[1]))
    return [(a, c) for c, a in out[:k]]


# -- association problems --------------------------------------------------------

@dataclass(frozen=True)
class AssociationHypothesis:
    track_cells: tuple            # per track: frozenset of measurement ids, or None (missed)
    new_cells: frozenset          # frozensets sent to the undetected intensity
    clutter: frozenset            # measurement ids declared clutter
    log_weight: float = field(default=0.0, compare=False)

    @property
    def key(self):
        return self.track_cells, self.new_cells, self.clutter

    def cells(self) -> list[frozenset]:
        out = [c for c in self.track_cells if c is not None]
        out.extend(self.new_cells)
        out.extend(frozenset([j]) for j in self.clutter)
        return out

    def folded_new_cells(self) -> frozenset:
        """New-target cells once singleton clutter is folded into new tracks."""
        return self.new_cells | frozenset(frozenset([j]) for j in self.clutter)


class AssociationProblem:
    """Factor evaluator for one scan and one set of predicted tracks.

    ``track_loglik(t, cell)`` is ``log(r <f; l_cell>)`` for track ``t``,
    ``track_missed[t]`` its missed-detection factor, ``new_loglik(cell)``
    is ``log <D_u; l_cell>`` and ``clutter_loglik(j)`` is ``log kappa(z_j)``.
    ``track_gate`` maps a measurement id to the tracks whose gate holds it;
    when omitted every track gates every measurement.
    """

    def __init__(self, indices: Iterable[int], track_missed: Sequence[float],
                 track_loglik: Callable, new_loglik: Callable, clutter_loglik: Callable,
                 track_gate: Optional[dict] = None):
        self.indices = tuple(sorted(indices))
        self.track_missed = tuple(float(x) for x in track_missed)
        self.n_tracks = len(self.track_missed)
        self._track_loglik = track_loglik
        self._new_loglik = new_loglik
        self._clutter_loglik = clutter_loglik
        if track_gate is None:
            every = frozenset(range(self.n_tracks))
            track_gate = {j: every for j in self.indices}
        self.track_gate = {j: frozenset(track_gate.get(j, ())) for j in self.indices}
        self._tcache: dict = {}
        self._ncache: dict = {}
        self._ccache: dict = {}

    def gated_tracks(self, cell: Iterable[int]) -> frozenset:
        out = None
        for j in cell:
            out = self.track_gate[j] if out is None else out & self.track_gate[j]
        return out if out is not None else frozenset(range(self.n_tracks))

    def track_term(self, t: int, cell: Optional[frozenset]) -> float:
        if not cell:
            return self.track_missed[t]
        key = (t, cell)
        val = self._tcache.get(key)
        if val is None:
            if all(t in self.track_gate[j] for j in cell):
                val = float(self._track_loglik(t, cell))
            else:
                val = _NEG_INF
            self._tcache[key] = val
        return val

    def new_term(self, cell: frozenset) -> float:
        val = self._ncache.get(cell)
        if val is None:
            val = float(self._new_loglik(cell))
            self._ncache[cell] = val
        return val

    def clutter_term(self, j: int) -> float:
        val = self._ccache.get(j)
        if val is None:
            val = float(self._clutter_loglik(j))
            self._ccache[j] = val
        return val

    def log_weight(self, track_cells, new_cells, clutter) -> float:
        total = 0.0
        for t, cell in enumerate(track_cells):
            total += self.track_term(t, cell)
        for cell in new_cells:
            total += self.new_term(cell)
        for j in clutter:
            total += self.clutter_term(j)
        return total

    def hypothesis(self, track_cells, new_cells, clutter) -> AssociationHypothesis:
        track_cells = tuple(track_cells)
        new_cells = frozenset(new_cells)
        clutter = frozenset(clutter)
        return AssociationHypothesis(track_cells, new_cells, clutter,
                                     self.log_weight(track_cells, new_cells, clutter))

    def missed_all(self) -> AssociationHypothesis:
        return self.hypothesis((None,) * self.n_tracks, (), ())


def _canon(key):
    track_cells, new_cells, clutter = key
    return (tuple(() if c is None else tuple(sorted(c)) for c in track_cells),
            tuple(sorted(tuple(sorted(c)) for c in new_cells)),
            tuple(sorted(clutter)))


def _sorted(hyps: Iterable[AssociationHypothesis]) -> list[AssociationHypothesis]:
    return sorted(hyps, key=lambda h: (-h.log_weight, _canon(h.key)))


def enumerate_all(problem: AssociationProblem) -> list[AssociationHypothesis]:
    """Every partition with every admissible cell-to-target mapping.

    Zero-weight associations are left out.
    """
    if len(problem.indices) > MAX_ENUMERATION:
        raise ValueError(f"exhaustive enumeration is limited to {MAX_ENUMERATION} measurements")
    out = []
    for part in set_partitions(problem.indices):
        cells = [frozenset(c) for c in part]
        options = []
        for c in cells:
            opts = [t for t in sorted(problem.gated_tracks(c))] + ["new"]
            if len(c) == 1:
                opts.append("clutter")
            options.append(opts)
        for choice in itertools.product(*options):
            tracks = [o for o in choice if not isinstance(o, str)]
            if len(tracks) != len(set(tracks)):
                continue
            track_cells = [None] * problem.n_tracks
            new_cells, clutter = [], []
            for c, o in zip(cells, choice):
                if o == "new":
                    new_cells.append(c)
                elif o == "clutter":
                    clutter.extend(c)
                else:
                    track_cells[o] = c
            hyp = problem.hypothesis(track_cells, new_cells, clutter)
            if hyp.log_weight > _NEG_INF:
                out.append(hyp)
    return _sorted(out)


def assignments_for_partition(problem: AssociationProblem, cells: Sequence[frozenset],
                              k: Optional[int] = None) -> list[AssociationHypothesis]:
    """k-best cell-to-target assignments for one fixed partition."""
    T = problem.n_tracks
    n = len(cells)
    if n == 0:
        return [problem.missed_all()]
    missed = [max(x, -690.0) for x in problem.track_missed]
    cost = np.full((n, T + 2 * n), np.inf)
    for r, c in enumerate(cells):
        for t in problem.gated_tracks(c):
            val = problem.track_term(t, c)
            if val > _NEG_INF:
                cost[r, t] = -(val - missed[t])
        val = problem.new_term(c)
        if val > _NEG_INF:
            cost[r, T + r] = -val
        if len(c) == 1:
            (j,) = c
            val = problem.clutter_term(j)
            if val > _NEG_INF:
                cost[r, T + n + r] = -val
    try:
        solutions = kbest_assignments(cost, k if k is not None else 10**9)
    except ValueError:
        return []
    out = []
    for assignment, _ in solutions:
        track_cells = [None] * T
        new_cells, clutter = [], []
        for r, col in enumerate(assignment):
            if col < T:
                track_cells[col] = cells[r]
            elif col < T + n:
                new_cells.append(cells[r])
            else:
                clutter.extend(cells[r])
        out.append(problem.hypothesis(track_cells, new_cells, clutter))
    return out


def enumerate_by_assignment(problem: AssociationProblem) -> list[AssociationHypothesis]:
    """All associations, built partition by partition from exhaustive Murty."""
    if len(problem.indices) > MAX_ENUMERATION:
        raise ValueError(f"exhaustive enumeration is limited to {MAX_ENUMERATION} measurements")
    out = []
    for part in set_partitions(problem.indices):
        out.extend(assignments_for_partition(problem, [frozenset(c) for c in part]))
    return _sorted(h for h in out if h.log_weight > _NEG_INF)


def murty_associations(problem: AssociationProblem, partitions: Iterable[Sequence[frozenset]],
                       k: int) -> list[AssociationHypothesis]:
    """Clustering-and-assignment: union of the k best per candidate partition."""
    seen = {}
    for cells in partitions:
        for hyp in assignments_for_partition(problem, list(cells), k):
            if hyp.log_weight > _NEG_INF:
                seen.setdefault(hyp.key, hyp)
    return _sorted(seen.values())[:k]


# -- Gibbs sampling -------------------------------------------------------------

_CLUTTER = -1


def _softmax_pick(rng, logits):
    top = max((x for x in logits if x == x), default=_NEG_INF)
    if top == _NEG_INF:
        return None
    p = [math.exp(x - top) if x == x else 0.0 for x in logits]
    u = rng.random() * sum(p)
    acc = 0.0
    for i, pi in enumerate(p):
        acc += pi
        if u < acc:
            return i
    return max(i for i, pi in enumerate(p) if pi > 0)


class _ChainState:
    """Measurement labels: track index, new-cell label (>= n_tracks) or clutter."""

    def __init__(self, problem: AssociationProblem, init: Optional[AssociationHypothesis]):
        self.problem = problem
        self.owner: dict[int, int] = {j: _CLUTTER for j in problem.indices}
        self.cells: dict[int, frozenset] = {}
        self.next_label = problem.n_tracks
        if init is not None:
            for t, cell in enumerate(init.track_cells):
                if cell:
                    self._set(t, frozenset(cell))
            for cell in sorted(init.new_cells, key=sorted):
                self._set(self.next_label, frozenset(cell))
                self.next_label += 1

    def _set(self, label, cell):
        if cell:
            self.cells[label] = cell
            for j in cell:
                self.owner[j] = label
        else:
            self.cells.pop(label, None)

    def term(self, label, cell) -> float:
        if label < self.problem.n_tracks:
            return self.problem.track_term(label, cell or None)
        return self.problem.new_term(cell) if cell else 0.0

    def key(self):
        T = self.problem.n_tracks
        track_cells = tuple(self.cells.get(t) for t in range(T))
        new_cells = frozenset(c for lab, c in self.cells.items() if lab >= T)
        clutter = frozenset(j for j, lab in self.owner.items() if lab == _CLUTTER)
        return track_cells, new_cells, clutter

    def gibbs_move(self, j, rng):
        p = self.problem
        cur = self.owner[j]
        if cur != _CLUTTER:
            self._set(cur, self.cells[cur] - {j})
        self.owner[j] = _CLUTTER
        labels, logits = [], []
        for t in p.track_gate[j]:
            cell = self.cells.get(t, frozenset())
            labels.append(t)
            logits.append(self.term(t, cell | {j}) - self.term(t, cell))
        for lab in sorted(self.cells):
            if lab >= p.n_tracks:
                cell = self.cells[lab]
                labels.append(lab)
                logits.append(p.new_term(cell | {j}) - p.new_term(cell))
        labels.append(None)
        logits.append(p.new_term(frozenset([j])))
        labels.append(_CLUTTER)
        logits.append(p.clutter_term(j))
        pick = _softmax_pick(rng, logits)
        if pick is None:
            pick = len(labels) - 1
        lab = labels[pick]
        if lab is None:
            lab = self.next_label
            self.next_label += 1
        if lab != _CLUTTER:
            self._set(lab, self.cells.get(lab, frozenset()) | {j})

    def cell_move(self, rng):
        p = self.problem
        items = [(lab, c) for lab, c in sorted(self.cells.items())]
        items.extend((_CLUTTER, frozenset([j])) for j in sorted(self.owner) if self.owner[j] == _CLUTTER)
        if not items:
            return
        cur, cell = items[int(rng.integers(len(items)))]
        labels, logits = [], []
        for t in sorted(p.gated_tracks(cell)):
            if t == cur or t not in self.cells:
                labels.append(t)
                logits.append(p.track_term(t, cell) - p.track_missed[t])
        labels.append(cur if cur >= p.n_tracks else None)
        logits.append(p.new_term(cell))
        if len(cell) == 1:
            labels.append(_CLUTTER)
            logits.append(p.clutter_term(next(iter(cell))))
        pick = _softmax_pick(rng, logits)
        if pick is None:
            return
        lab = labels[pick]
        if lab == cur:
            return
        if cur != _CLUTTER:
            self._set(cur, frozenset())
        for j in cell:
            self.owner[j] = _CLUTTER
        if lab is None:
            lab = self.next_label
            self.next_label += 1
        if lab != _CLUTTER:
            self._set(lab, cell)


def sample_assignments(problem: AssociationProblem, n_samples: int, seed=None,
                       init: Optional[AssociationHypothesis] = None) -> list[AssociationHypothesis]:
    """Distinct associations visited by a Gibbs chain, with exact weights.

    Each of the ``n_samples`` sweeps resamples the label of every
    measurement (random order) and then reassigns one whole cell; the state
    is recorded after each of the two moves.  The chain
    starts from ``init`` or, by default, from every measurement as clutter.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    if not problem.indices:
        return [problem.missed_all()]
    state = _ChainState(problem, init)
    visited = {state.key()}
    order = np.array(problem.indices)
    for _ in range(n_samples):
        for j in rng.permutation(order):
            state.gibbs_move(int(j), rng)
        visited.add(state.key())
        state.cell_move(rng)
        visited.add(state.key())
    hyps = (problem.hypothesis(*key) for key in visited)
    return _sorted(h for h in hyps if h.log_weight > _NEG_INF)

"""Gaussian Wasserstein distance and a trajectory metric with switch costs.

The trajectory metric assigns true to estimated trajectories separately at
every time step.  A pair costs ``min(d, c)**p`` when both exist at that step
and ``c**p / 2`` when only one does; unassigned existing trajectories cost
``c**p / 2`` each.  Changing the assignment of a true trajectory between two
estimates costs ``gamma**p`` and a change to or from "unassigned" costs
``gamma**p / 2``.  The optimum over assignment sequences is found by dynamic
programming.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .trajectory import TrajectoryRecord


@dataclass(frozen=True)
class MetricParams:
    c: float = 20.0
    p: float = 1.0
    gamma: float = 4.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("cut-off c must be positive")
        if not self.p >= 1:
            raise ValueError("order p must be >= 1")
        if self.gamma < 0:
            raise ValueError("switch cost must be >= 0")


@dataclass(frozen=True)
class MetricResult:
    """Per-step normalised metric and its decomposition.

    For ``p = 1`` the four parts add up to ``total``; in general they add up
    to ``(k * total) ** p / k``.
    """

    total: float
    localization: float
    missed: float
    false: float
    switch: float
    exact: bool = True   # False when a block was too large for the exact DP

    def as_row(self) -> list[float]:
        return [self.total, self.localization, self.missed, self.false, self.switch]


def _check_spd(X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1] or not np.allclose(X, X.T, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{name} must be a symmetric square matrix")
    if np.linalg.eigvalsh(X).min() <= 0:
        raise ValueError(f"{name} is not positive definite")
    return X


def gwd(m1, X1, m2, X2) -> float:
    """Gaussian Wasserstein distance between ``N(m1, X1)`` and ``N(m2, X2)``."""
    X1 = _check_spd(X1, "X1")
    X2 = _check_spd(X2, "X2")
    dm = np.asarray(m1, dtype=float) - np.asarray(m2, dtype=float)
    if not dm.any() and np.array_equal(X1, X2):
        return 0.0   # the trace formula below leaves ~sqrt(eps) here
    if X1.shape == (2, 2):
        # tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)) for 2x2 PSD M
        tr_m = float(np.sum(X1 * X2.T))
        det_m = max(np.linalg.det(X1) * np.linalg.det(X2), 0.0)
        cross = math.sqrt(max(tr_m + 2.0 * math.sqrt(det_m), 0.0))
    else:
        w, U = np.linalg.eigh(X1)
        s = (U * np.sqrt(w)) @ U.T
        cross = float(np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(s @ X2 @ s), 0.0, None))))
    d2 = float(dm @ dm) + float(np.trace(X1) + np.trace(X2)) - 2.0 * cross
    return math.sqrt(max(d2, 0.0))


def _gwd_batch(m1, X1, m2, X2):
    """Vectorised 2-D GWD over aligned arrays (n,2), (n,2,2)."""
    dm = m1 - m2
    tr_m = np.einsum("nij,nji->n", X1, X2)
    det1 = X1[:, 0, 0] * X1[:, 1, 1] - X1[:, 0, 1] * X1[:, 1, 0]
    det2 = X2[:, 0, 0] * X2[:, 1, 1] - X2[:, 0, 1] * X2[:, 1, 0]
    cross = np.sqrt(np.clip(tr_m + 2.0 * np.sqrt(np.clip(det1 * det2, 0, None)), 0, None))
    d2 = np.sum(dm * dm, axis=1) + np.trace(X1, axis1=1, axis2=2) + np.trace(X2, axis1=1, axis2=2) - 2 * cross
    same = ~dm.any(axis=1) & (X1 == X2).all(axis=(1, 2))
    return np.where(same, 0.0, np.sqrt(np.clip(d2, 0, None)))


def _presence_and_states(trajs: Sequence[TrajectoryRecord], k: int):
    n = len(trajs)
    alive = np.zeros((n, k), dtype=bool)
    pos = np.zeros((n, k, 2))
    ext = np.tile(np.eye(2), (n, k, 1, 1))
    for a, tr in enumerate(trajs):
        for s in range(len(tr.means)):
            t = tr.birth + s
            if 1 <= t <= k:
                alive[a, t - 1] = True
                pos[a, t - 1] = tr.means[s][:2]
                ext[a, t - 1] = tr.extents[s]
    return alive, pos, ext


def pair_costs(truth, est, k: int, mp: MetricParams):
    """Per-step capped distances for every (true, estimated) pair.

    Returns ``(D, ax, ay)``: ``D[t, i, j]`` is ``min(gwd, c)`` (``c`` when
    either is absent) and ``ax``, ``ay`` are the presence masks.
    """
    ax, px, ex = _presence_and_states(truth, k)
    ay, py, ey = _presence_and_states(est, k)
    nx, ny = len(truth), len(est)
    D = np.full((k, nx, ny), mp.c)
    both = ax.T[:, :, None] & ay.T[:, None, :]
    t_idx, i_idx, j_idx = np.nonzero(both)
    if len(t_idx):
        d = _gwd_batch(px[i_idx, t_idx], ex[i_idx, t_idx], py[j_idx, t_idx], ey[j_idx, t_idx])
        D[t_idx, i_idx, j_idx] = np.minimum(d, mp.c)
    return D, ax, ay


class _TooMany(Exception):
    pass


def _injections(nx: int, allowed: np.ndarray, limit: Optional[int] = None) -> list[tuple]:
    """All partial injections truth -> est (0 = unassigned, else j + 1) over allowed pairs."""
    out = []

    def rec(i, used, cur):
        if i == nx:
            out.append(tuple(cur))
            if limit is not None and len(out) > limit:
                raise _TooMany
            return
        cur.append(0)
        rec(i + 1, used, cur)
        cur.pop()
        for j in np.flatnonzero(allowed[i]):
            if j not in used:
                cur.append(int(j) + 1)
                used.add(j)
                rec(i + 1, used, cur)
                used.discard(j)
                cur.pop()

    rec(0, set(), [])
    return out


def _switch_matrix(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    a = prev[:, None, :]
    b = cur[None, :, :]
    diff = a != b
    half = (a == 0) | (b == 0)
    return np.sum(np.where(diff, np.where(half, 0.5, 1.0), 0.0), axis=2)


def _step_costs(states, t, D, ax, ay, mp):
    """Assignment cost of each state at step ``t`` (p-th powers)."""
    cp2 = mp.c ** mp.p / 2.0
    nx = states.shape[1]
    cost = np.full(len(states), cp2 * float(ay[:, t].sum()))
    for i in range(nx):
        j = states[:, i]
        on = j > 0
        jj = np.where(on, j - 1, 0)
        y_alive = ay[jj, t] & on
        both = on & ax[i, t] & y_alive
        pair = np.where(both, D[t, i, jj] ** mp.p, cp2 * (ax[i, t] + y_alive))
        # an assigned estimate is no longer counted as unassigned
        cost += np.where(on, pair - cp2 * y_alive, cp2 * ax[i, t])
    return cost


MAX_STATES = 300


def _step_candidates(D, ax, ay, close, mp):
    """Per-step optimal assignments (ignoring switches) plus the empty one."""
    k, nx, ny = D.shape
    cp2 = mp.c ** mp.p / 2.0
    out = {(0,) * nx}
    for t in range(k):
        gain = np.where(close & ax[:, t, None] & ay[None, :, t], D[t] ** mp.p - 2.0 * cp2, 0.0)
        rows, cols = linear_sum_assignment(gain)
        a = [0] * nx
        for i, j in zip(rows, cols):
            if gain[i, j] < 0:
                a[i] = int(j) + 1
        out.add(tuple(a))
    return np.array(sorted(out), dtype=int).reshape(-1, nx)


def _solve_block(D, ax, ay, close, mp):
    """DP over assignment sequences; returns ``(path, cost, exact)``.

    The state is the assignment of every true trajectory.  When the block
    admits at most ``MAX_STATES`` assignments the DP runs over all of them and
    is exact.  Otherwise each step gets a reduced state set: assignments of
    pairs that both exist at that step, or, if those are still too many, the
    per-step optimal assignments of the whole window.  Any path is a feasible
    assignment sequence, so the result is then an upper bound.
    """
    k, nx, _ = D.shape
    try:
        full = np.array(_injections(nx, close, MAX_STATES), dtype=int).reshape(-1, nx)
        state_sets = [full] * k
        exact = True
    except _TooMany:
        exact = False
        cache: dict = {}
        fallback = None
        state_sets = []
        for t in range(k):
            allowed = close & ax[:, t, None] & ay[None, :, t]
            key = allowed.tobytes()
            if key not in cache:
                try:
                    cache[key] = np.array(_injections(nx, allowed, MAX_STATES), dtype=int).reshape(-1, nx)
                except _TooMany:
                    if fallback is None:
                        fallback = _step_candidates(D, ax, ay, close, mp)
                    cache[key] = fallback
            state_sets.append(cache[key])
    sw_cache: dict = {}
    dp = _step_costs(state_sets[0], 0, D, ax, ay, mp)
    backs = [None]
    for t in range(1, k):
        prev, cur = state_sets[t - 1], state_sets[t]
        key = (id(prev), id(cur))
        if key not in sw_cache:
            sw_cache[key] = (mp.gamma ** mp.p) * _switch_matrix(prev, cur)
        tot = dp[:, None] + sw_cache[key]
        back = np.argmin(tot, axis=0)
        dp = tot[back, np.arange(len(cur))] + _step_costs(cur, t, D, ax, ay, mp)
        backs.append(back)
    idx = int(np.argmin(dp))
    best = float(dp[idx])
    path = [state_sets[k - 1][idx]]
    for t in range(k - 1, 0, -1):
        idx = int(backs[t][idx])
        path.append(state_sets[t - 1][idx])
    path.reverse()
    return np.array(path), best, exact


def _decompose(path, D, ax, ay, mp):
    k, nx, ny = D.shape
    cp2 = mp.c ** mp.p / 2.0
    loc = mis = fal = sw = 0.0
    for t in range(k):
        matched = np.zeros(ny, dtype=bool)
        for i in range(nx):
            j = path[t][i]
            if j and ax[i, t] and ay[j - 1, t] and D[t, i, j - 1] < mp.c:
                loc += D[t, i, j - 1] ** mp.p
                matched[j - 1] = True
            elif ax[i, t]:
                mis += cp2
        fal += cp2 * float(np.sum(ay[:, t] & ~matched))
        if t > 0:
            for i in range(nx):
                a, b = path[t - 1][i], path[t][i]
                if a != b:
                    sw += 0.5 if (a == 0 or b == 0) else 1.0
    return loc, mis, fal, sw * mp.gamma ** mp.p


def trajectory_metric(estimated: Sequence[TrajectoryRecord], truth: Sequence[TrajectoryRecord],
                      mp: MetricParams = MetricParams(), k: int = None) -> MetricResult:
    """Metric over steps ``1..k`` divided by ``k``.

    Pairs never closer than ``c`` are left unassigned: assigning them cannot
    lower the localisation cost and can only add switches, so the optimum
    splits into independent blocks of the graph of close pairs.
    """
    if k is None:
        ends = [tr.end for tr in list(truth) + list(estimated)]
        k = max(ends) if ends else 1
    if k < 1:
        raise ValueError("k must be >= 1")
    truth = [t for t in (tr.truncated(k) for tr in truth) if t is not None]
    estimated = [t for t in (tr.truncated(k) for tr in estimated) if t is not None]
    D, ax, ay = pair_costs(truth, estimated, k, mp)
    nx, ny = len(truth), len(estimated)
    cp2 = mp.c ** mp.p / 2.0
    close = (D < mp.c).any(axis=0) if nx and ny else np.zeros((nx, ny), dtype=bool)
    loc = mis = fal = sw = 0.0
    exact = True
    if nx + ny:
        graph = coo_matrix((np.ones(int(close.sum())), np.nonzero(close)), shape=(nx, ny))
        adj = coo_matrix((np.r_[graph.data, graph.data],
                          (np.r_[graph.row, graph.col + nx], np.r_[graph.col + nx, graph.row])),
                         shape=(nx + ny, nx + ny))
        n_comp, labels = connected_components(adj, directed=False)
        for comp in range(n_comp):
            xi = np.flatnonzero(labels[:nx] == comp)
            yj = np.flatnonzero(labels[nx:] == comp)
            if len(xi) == 0:
                fal += cp2 * float(ay[yj].sum())
                continue
            if len(yj) == 0:
                mis += cp2 * float(ax[xi].sum())
                continue
            sub = D[:, xi][:, :, yj]
            path, _, ok = _solve_block(sub, ax[xi], ay[yj], close[np.ix_(xi, yj)], mp)
            exact = exact and ok
            l, m, f, s = _decompose(path, sub, ax[xi], ay[yj], mp)
            loc, mis, fal, sw = loc + l, mis + m, fal + f, sw + s
    raw = loc + mis + fal + sw
    return MetricResult(float(raw ** (1.0 / mp.p) / k), float(loc / k), float(mis / k),
                        float(fal / k), float(sw / k), exact)

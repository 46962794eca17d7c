"""Small builders shared by several test files."""

from __future__ import annotations

import numpy as np

from trajpmbm.ggiw import GGIW, MotionModel, SensorModel
from trajpmbm.pmbm import (AssociationConfig, HypothesisTable, PmbmPosterior, ReductionConfig,
                           SingleTrajectoryHypothesis, Track, predict, reduce, update)
from trajpmbm.trajectory import (TrajectoryBernoulli, TrajectoryComponent, TrajectoryDensity,
                                 TrajectoryPoisson, birth_intensity)

EXACT = AssociationConfig(method="exhaustive", gate_prob=1.0, kbest=None)


def ggiw(x=0.0, y=0.0, vx=0.0, vy=0.0, alpha=10.0, beta=2.0, pos_var=1.0, vel_var=0.3, v=20.0, axes=(2.0, 1.0)):
    return GGIW(alpha, beta, np.array([x, y, vx, vy], dtype=float),
                np.diag([pos_var, pos_var, vel_var, vel_var]), v, (v - 6.0) * np.diag(axes))


def bernoulli(r, g, birth=0, weight=1.0):
    return TrajectoryBernoulli(r, TrajectoryDensity((TrajectoryComponent(weight, birth, (g,)),)))


def posterior_with_tracks(bernoullis, mode="current", time=0, rows=None, log_weights=None,
                          undetected=TrajectoryPoisson()):
    """One track per entry of ``bernoullis`` (a list of hypothesis lists)."""
    tracks = []
    for i, hyps in enumerate(bernoullis):
        tracks.append(Track(i, tuple(SingleTrajectoryHypothesis(0.0, b) for b in hyps)))
    if rows is None:
        rows = [[1] * len(tracks)]
    rows = np.array(rows, dtype=int).reshape(-1, len(tracks))
    if log_weights is None:
        log_weights = np.full(len(rows), -np.log(len(rows)))
    return PmbmPosterior(undetected, tuple(tracks), HypothesisTable(rows, np.asarray(log_weights, float)),
                         mode, time, len(tracks))


def small_instance(seed, mode):
    """Random two-scan problem with at most one prior track and 3 points per scan."""
    rng = np.random.default_rng(seed)
    sensor = SensorModel(R=0.3 * np.eye(2), p_detection=rng.uniform(0.5, 0.95),
                         clutter_rate=rng.uniform(0.5, 3.0), region=(-10, 10, -10, 10), rho=0.25)
    mm = MotionModel.nearly_constant_velocity(1.0, 0.3, p_survival=rng.uniform(0.85, 0.99))
    b1 = GGIW(8.0, 2.0, np.zeros(4), np.diag([4.0, 4, 1, 1]), 16.0, 20 * np.eye(2))
    b2 = GGIW(6.0, 1.5, np.array([1.0, -1, 0, 0]), np.diag([5.0, 5, 1, 1]), 12.0, 9 * np.eye(2))
    births = {1: (rng.uniform(0.05, 0.5), b1), 2: (rng.uniform(0.05, 0.5), b2)}
    prior = None
    if rng.random() < 0.7:
        prior = (rng.uniform(0.2, 0.95), ggiw(2.0, 1.0, 0.5, 0.0, v=20.0, axes=(2.0, 1.0)))
    scans = [rng.normal(0, 1.5, size=(rng.integers(0, 4), 2)) for _ in range(2)]
    return mode, mm, sensor, prior, births, scans


def run_small_instance(mode, mm, sensor, prior, births, scans):
    if prior is None:
        p = PmbmPosterior.empty(mode)
    else:
        p = posterior_with_tracks([[bernoulli(*prior)]], mode)
    for k, z in enumerate(scans, start=1):
        p = predict(p, mm, birth_intensity([births[k]], k))
        p = update(p, z, sensor, EXACT)
        p = reduce(p, ReductionConfig.none())
    return p


def allclose_rel(a, b, rtol=1e-9):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return bool(np.allclose(a, b, rtol=rtol, atol=rtol * max(1.0, float(np.abs(b).max(initial=0.0)))))


def compare_with_oracle(ref: dict, got: dict, rtol=1e-9) -> list[str]:
    """Differences between two keyed posteriors (see ``oracles.posterior_rows``)."""
    errs = []
    if set(ref) != set(got):
        return [f"global hypotheses differ: {len(ref)} expected, {len(got)} found"]
    for key, (w, targets) in ref.items():
        w2, t2 = got[key]
        if not allclose_rel(w2, w, rtol):
            errs.append(f"row weight {w2} vs {w}")
        if set(targets) != set(t2):
            errs.append("targets differ within a row")
            continue
        for tk, (r, comps) in targets.items():
            r2, c2 = t2[tk]
            if not allclose_rel(r2, r, rtol):
                errs.append(f"r {r2} vs {r}")
            if r > 0 and set(comps) != set(c2):
                errs.append(f"components {sorted(c2)} vs {sorted(comps)}")
                continue
            for o, (cw, g) in comps.items():
                cw2, g2 = c2[o]
                if not allclose_rel(cw2, cw, rtol):
                    errs.append(f"component weight {cw2} vs {cw}")
                for f in ("alpha", "beta", "m", "P", "v", "V"):
                    if not allclose_rel(getattr(g2, f), getattr(g, f), rtol):
                        errs.append(f"component {o} field {f} differs")
    return errs


# -- current vs all-trajectories comparison ------------------------------------------------

def run_both_modes(scen, seed, acfg, rcfg):
    """Filter one simulated run in both modes; yields the two posteriors per step."""
    from trajpmbm.sim import birth_components, generate_scan, generate_truth, motion_model, sensor_model

    truth = generate_truth(scen, seed=seed)
    sm, mm, births = sensor_model(scen), motion_model(scen), birth_components(scen)
    pc, pa = PmbmPosterior.empty("current"), PmbmPosterior.empty("all")
    for k in range(1, scen.K + 1):
        z = generate_scan(truth, k, sm, seed).z
        b = birth_intensity(births, k)
        pc = reduce(update(predict(pc, mm, b), z, sm, acfg, seed=seed), rcfg)
        pa = reduce(update(predict(pa, mm, b), z, sm, acfg, seed=seed), rcfg)
        yield k, pc, pa


def mode_discrepancy(pc, pa) -> float:
    """Largest relative gap between the current posterior and the alive part of the all posterior.

    Returns ``inf`` on any structural mismatch.
    """
    k = pc.time
    if pc.table.entries.shape != pa.table.entries.shape or not np.array_equal(pc.table.entries, pa.table.entries):
        return np.inf
    if [t.id for t in pc.tracks] != [t.id for t in pa.tracks]:
        return np.inf

    def gap(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        return float(np.abs(a - b).max(initial=0.0)) / scale

    worst = gap(np.exp(pc.table.log_weights), np.exp(pa.table.log_weights))
    for tc, ta in zip(pc.tracks, pa.tracks):
        if len(tc.hypotheses) != len(ta.hypotheses):
            return np.inf
        for hc, ha in zip(tc.hypotheses, ta.hypotheses):
            alive = [c for c in ha.density.components if c.end == k]
            mass = sum(c.weight for c in alive)
            worst = max(worst, gap(hc.r, ha.r * mass))
            if hc.r == 0:
                continue
            cur = {c.birth: c for c in hc.density.components}
            if set(cur) != {c.birth for c in alive}:
                return np.inf
            for c in alive:
                other = cur[c.birth]
                worst = max(worst, gap(other.weight, c.weight / mass))
                for f in ("alpha", "beta", "m", "P", "v", "V"):
                    worst = max(worst, gap(getattr(other.last, f), getattr(c.last, f)))
    return worst

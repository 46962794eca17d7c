import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajpmbm.metrics import MetricParams, gwd, trajectory_metric
from trajpmbm.trajectory import TrajectoryRecord

from oracles import metric_by_enumeration


def random_set(rng, n, k, spread=8.0):
    out = []
    for i in range(n):
        birth = int(rng.integers(1, k + 1))
        length = int(rng.integers(1, k - birth + 2))
        means = np.zeros((length, 4))
        means[:, :2] = rng.normal(0.0, spread, size=2) + np.cumsum(rng.normal(0, 1.5, size=(length, 2)), axis=0)
        A = rng.normal(size=(length, 2, 2))
        ext = A @ np.transpose(A, (0, 2, 1)) + 0.5 * np.eye(2)
        out.append(TrajectoryRecord(i, birth, means, ext))
    return out


def as_dicts(recs):
    return [{rec.birth + s: (rec.means[s, :2], rec.extents[s]) for s in range(len(rec.means))} for rec in recs]


def test_gwd_examples():
    I = np.eye(2)
    assert gwd([0, 0], I, [3, 4], I) == pytest.approx(5.0, rel=1e-12)
    assert gwd([0, 0], I, [0, 0], 4 * I) == pytest.approx(math.sqrt(2.0), rel=1e-12)
    assert gwd([1, 2], I, [1, 2], I) == 0.0


def test_gwd_rejects_indefinite_extent():
    with pytest.raises(ValueError):
        gwd([0, 0], -np.eye(2), [0, 0], np.eye(2))


def test_empty_estimate_counts_missed_steps():
    truth = [TrajectoryRecord(0, 1, np.zeros((5, 4)), np.tile(np.eye(2), (5, 1, 1)))]
    res = trajectory_metric([], truth, MetricParams(c=20.0, p=1.0, gamma=4.0), k=5)
    assert res.missed == pytest.approx(10.0) and res.total == pytest.approx(10.0)
    assert res.false == res.localization == res.switch == 0.0


def test_capping_at_cutoff():
    ext = np.tile(np.eye(2), (3, 1, 1))
    a = TrajectoryRecord(0, 1, np.zeros((3, 4)), ext)
    far = np.zeros((3, 4))
    far[:, 0] = 1e4
    b = TrajectoryRecord(0, 1, far, ext)
    res = trajectory_metric([b], [a], MetricParams(c=5.0), k=3)
    # unassigned is as cheap as assigned at the cap
    assert res.total == pytest.approx(5.0)
    assert res.missed == pytest.approx(2.5) and res.false == pytest.approx(2.5)


def test_one_switch_between_two_estimates():
    ext = np.tile(np.eye(2), (2, 1, 1))
    truth = [TrajectoryRecord(0, 1, np.zeros((4, 4)), np.tile(np.eye(2), (4, 1, 1)))]
    est = [TrajectoryRecord(0, 1, np.zeros((2, 4)), ext), TrajectoryRecord(1, 3, np.zeros((2, 4)), ext)]
    res = trajectory_metric(est, truth, MetricParams(c=20.0, p=1.0, gamma=4.0), k=4)
    assert res.localization == 0.0 and res.missed == res.false == 0.0
    assert res.switch == pytest.approx(4.0 / 4)


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.floats(1.0, 1e6))
def test_errors_beyond_cutoff_do_not_matter(seed, push):
    rng = np.random.default_rng(seed)
    k, mp = 4, MetricParams(c=6.0, p=1.0, gamma=2.0)
    truth, est = random_set(rng, 2, k), random_set(rng, 2, k)
    # put state 0 of estimate 0 at distance >= c from every true state, then push it further
    far = est[0].means.copy()
    far[0, :2] = 100.0
    base = TrajectoryRecord(0, est[0].birth, far, est[0].extents)
    further = far.copy()
    further[0, :2] += push
    moved = TrajectoryRecord(0, est[0].birth, further, est[0].extents)
    a = trajectory_metric([base, est[1]], truth, mp, k=k)
    b = trajectory_metric([moved, est[1]], truth, mp, k=k)
    assert a.total == pytest.approx(b.total, rel=1e-12, abs=1e-12)


@settings(max_examples=60)
@given(st.integers(0, 10**6), st.integers(0, 2), st.integers(0, 2), st.integers(1, 4),
       st.sampled_from([1.0, 2.0]))
def test_matches_exhaustive_enumeration(seed, nx, ny, k, p):
    rng = np.random.default_rng(seed)
    truth, est = random_set(rng, nx, k), random_set(rng, ny, k)
    mp = MetricParams(c=rng.uniform(2.0, 15.0), p=p, gamma=rng.uniform(0.0, 6.0))
    got = trajectory_metric(est, truth, mp, k=k)
    ref = metric_by_enumeration(as_dicts(truth), as_dicts(est), k, mp.c, mp.p, mp.gamma)
    assert got.exact
    assert got.total == pytest.approx(ref, rel=1e-9, abs=1e-12)


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.integers(0, 3), st.integers(0, 3))
def test_decomposition_adds_up(seed, nx, ny):
    rng = np.random.default_rng(seed)
    k = 6
    truth, est = random_set(rng, nx, k), random_set(rng, ny, k)
    res = trajectory_metric(est, truth, MetricParams(c=10.0, p=1.0, gamma=2.0), k=k)
    parts = res.localization + res.missed + res.false + res.switch
    assert parts == pytest.approx(res.total, rel=1e-12, abs=1e-12)
    assert min(res.as_row()) >= 0.0


def test_metric_axioms_on_random_instances():
    rng = np.random.default_rng(12345)
    mp = MetricParams(c=10.0, p=1.0, gamma=3.0)
    k = 5
    worst = 0.0
    for _ in range(200):
        X, Y, Z = (random_set(rng, int(rng.integers(0, 3)), k, spread=4.0) for _ in range(3))
        dxy = trajectory_metric(Y, X, mp, k=k)
        dyx = trajectory_metric(X, Y, mp, k=k)
        dxz = trajectory_metric(Z, X, mp, k=k)
        dyz = trajectory_metric(Z, Y, mp, k=k)
        assert dxy.exact and dxz.exact and dyz.exact
        assert min(dxy.as_row()) >= 0.0
        assert trajectory_metric(X, X, mp, k=k).total == pytest.approx(0.0, abs=1e-9)
        assert dxy.total == pytest.approx(dyx.total, rel=1e-12, abs=1e-12)
        worst = max(worst, dxz.total - dxy.total - dyz.total)
    assert worst <= 1e-9


def test_large_block_falls_back_to_upper_bound():
    rng = np.random.default_rng(0)
    k = 4
    ext = np.tile(np.eye(2), (k, 1, 1))
    truth = [TrajectoryRecord(i, 1, np.c_[rng.normal(0, 0.5, (k, 2)), np.zeros((k, 2))], ext) for i in range(7)]
    est = [TrajectoryRecord(i, 1, np.c_[rng.normal(0, 0.5, (k, 2)), np.zeros((k, 2))], ext) for i in range(7)]
    res = trajectory_metric(est, truth, MetricParams(c=20.0), k=k)
    assert not res.exact
    assert 0.0 <= res.total <= 20.0 / 2 * 14


def test_params_validation():
    with pytest.raises(ValueError):
        MetricParams(c=0.0)
    with pytest.raises(ValueError):
        MetricParams(p=0.5)
    with pytest.raises(ValueError):
        trajectory_metric([], [], k=0)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajpmbm.trajectory import (TrajectoryBernoulli, TrajectoryComponent, TrajectoryDensity,
                                 TrajectoryRecord, alive_probability, read_trajectories, state_marginal_at,
                                 trajectory_from_json, trajectory_to_json, write_trajectories)

from helpers import ggiw


def comp(w, birth, end, tag=0.0):
    return TrajectoryComponent(w, birth, tuple(ggiw(float(t) + tag) for t in range(birth, end + 1)))


def test_alive_probability_examples():
    k = 6
    d = TrajectoryDensity((comp(0.6, 2, k), comp(0.4, 2, k - 1)))
    assert alive_probability(TrajectoryBernoulli(0.0, d), k) == 0.0
    one = TrajectoryDensity((comp(1.0, 3, k),))
    assert alive_probability(TrajectoryBernoulli(1.0, one), k) == 1.0
    assert alive_probability(TrajectoryBernoulli(0.8, d), k) == pytest.approx(0.48, rel=1e-15)


def test_state_marginal_examples():
    d = TrajectoryDensity((comp(1.0, 2, 5),))
    assert state_marginal_at(d, 7) is None
    mass, parts = state_marginal_at(d, 3)
    assert mass == 1.0 and parts[0][1] is d.components[0].states[1]
    k = 9
    d2 = TrajectoryDensity((comp(0.7, 1, k), comp(0.3, 1, k - 1)))
    assert state_marginal_at(d2, k)[0] == pytest.approx(0.7)


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=5), st.integers(0, 12))
def test_marginal_mass_is_born_probability(raw, t):
    w = np.array(raw) / sum(raw)
    comps = tuple(comp(float(wi), 2, 2 + n) for n, wi in enumerate(w))
    d = TrajectoryDensity(comps)
    got = state_marginal_at(d, t)
    covering = sum(wi for n, wi in enumerate(w) if 2 <= t <= 2 + n)
    if covering == 0:
        assert got is None
    else:
        assert got[0] == pytest.approx(covering, rel=1e-12)
    # every component is born at 2, so mass at any t >= 2 summed with dead mass is 1
    if t >= 2:
        dead = sum(wi for n, wi in enumerate(w) if 2 + n < t)
        assert covering + dead == pytest.approx(1.0, rel=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_alive_probability_monotone_in_existence(r1, r2):
    d = TrajectoryDensity((comp(0.6, 0, 4), comp(0.4, 0, 3)))
    lo, hi = sorted([r1, r2])
    assert alive_probability(TrajectoryBernoulli(lo, d), 4) <= alive_probability(TrajectoryBernoulli(hi, d), 4)


def test_density_rejects_duplicate_birth_end_pairs():
    with pytest.raises(ValueError):
        TrajectoryDensity((comp(0.5, 1, 3), comp(0.5, 1, 3, tag=1.0)))


def test_normalized_sums_to_one():
    d = TrajectoryDensity((comp(0.2, 0, 2), comp(0.9, 0, 3), comp(0.3, 1, 3))).normalized()
    assert d.total_weight == pytest.approx(1.0, abs=1e-12)


def test_record_truncation():
    rec = TrajectoryRecord(3, 2, np.arange(20.0).reshape(5, 4), np.tile(np.eye(2), (5, 1, 1)))
    assert rec.end == 6
    assert rec.truncated(1) is None
    assert rec.truncated(4).end == 4
    assert rec.truncated(10).end == 6


@given(st.integers(0, 50), st.integers(1, 6), st.integers(0, 10**6))
def test_json_round_trip(birth, length, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(length, 2, 2))
    ext = A @ np.transpose(A, (0, 2, 1)) + np.eye(2)
    rec = TrajectoryRecord(int(seed), birth, rng.normal(0, 50, size=(length, 4)), ext)
    back = trajectory_from_json(trajectory_to_json(rec))
    assert (back.id, back.birth, back.end) == (rec.id, rec.birth, rec.end)
    assert np.allclose(back.means, rec.means, atol=1e-9)
    assert np.allclose(back.extents, rec.extents, atol=1e-9)


def test_file_round_trip(tmp_path):
    recs = [TrajectoryRecord(i, i, np.full((2, 4), float(i)), np.tile(np.eye(2), (2, 1, 1))) for i in range(3)]
    write_trajectories(tmp_path / "t.jsonl", recs)
    back = read_trajectories(tmp_path / "t.jsonl")
    assert [r.id for r in back] == [0, 1, 2]


def test_json_rejects_inconsistent_end():
    line = trajectory_to_json(TrajectoryRecord(0, 1, np.zeros((2, 4)), np.tile(np.eye(2), (2, 1, 1))))
    with pytest.raises(ValueError):
        trajectory_from_json(line.replace('"end": 2', '"end": 5'))

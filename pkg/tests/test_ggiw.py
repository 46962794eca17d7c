import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from trajpmbm.ggiw import (GGIW, GGIWUpdater, MotionModel, SensorModel, cell_statistics, ggiw_missed,
                           ggiw_predict, ggiw_update, log_count_likelihood, log_lik_empty, merge_ggiw,
                           predicted_measurement)

from helpers import ggiw
from oracles import kalman_update


def sensor(pd=0.9, rho=0.25, R=0.5):
    return SensorModel(R=R * np.eye(2), p_detection=pd, clutter_rate=10.0, rho=rho)


def fields_close(a: GGIW, b: GGIW, tol=1e-12):
    for f in ("alpha", "beta", "m", "P", "v", "V"):
        assert np.allclose(getattr(a, f), getattr(b, f), rtol=tol, atol=tol), f


# -- prediction ----------------------------------------------------------------------

def test_predict_identity_dynamics():
    mm = MotionModel(F=np.eye(4), Q=np.zeros((4, 4)), tau=math.inf, eta=1.0)
    g = ggiw(1.0, 2.0, 0.5, -0.5)
    fields_close(ggiw_predict(g, mm), g, 0.0)


def test_predict_rate_forgetting():
    mm = MotionModel(F=np.eye(4), Q=np.zeros((4, 4)), tau=math.inf, eta=2.0)
    out = ggiw_predict(ggiw(alpha=16.0, beta=2.0), mm)
    assert out.alpha == 8.0 and out.beta == 1.0


def test_predict_extent_dof_decay():
    mm = MotionModel(F=np.eye(4), Q=np.zeros((4, 4)), Ts=1.0, tau=1.0 / math.log(2.0), eta=1.0)
    g = ggiw(v=30.0)
    out = ggiw_predict(g, mm)
    assert out.v == pytest.approx(18.0, rel=1e-12)
    assert np.allclose(out.extent_mean, g.extent_mean, rtol=1e-12)


def test_predict_kinematics_are_kalman():
    mm = MotionModel.nearly_constant_velocity(1.0, 0.7)
    g = ggiw(1, 2, 3, 4)
    out = ggiw_predict(g, mm)
    assert np.allclose(out.m, mm.F @ g.m)
    assert np.allclose(out.P, mm.F @ g.P @ mm.F.T + mm.Q)


def test_predict_rejects_indefinite_covariance():
    mm = MotionModel(F=np.eye(4), Q=-10 * np.eye(4), tau=math.inf, eta=1.0)
    with pytest.raises(ValueError):
        ggiw_predict(ggiw(), mm)


# -- update --------------------------------------------------------------------------

def test_zero_detection_probability_gives_minus_infinity():
    _, ll = ggiw_update(ggiw(), [[0.1, 0.2]], sensor(pd=0.0))
    assert ll == -math.inf


@pytest.mark.parametrize("seed", range(5))
def test_fixed_extent_single_point_is_kalman(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4))
    g = GGIW(7.0, 1.0, rng.normal(size=4), A @ A.T + 0.5 * np.eye(4), 15.0, 9.0 * np.eye(2))
    sm = SensorModel(R=np.array([[0.7, 0.2], [0.2, 0.4]]), p_detection=0.8, rho=0.0)
    z = rng.normal(size=2)
    post, ll = ggiw_update(g, z[None], sm, fixed_extent=True)
    m_ref, P_ref, S = kalman_update(g.m, g.P, z, sm.H, sm.R)
    assert np.allclose(post.m, m_ref, rtol=1e-12, atol=1e-12)
    assert np.allclose(post.P, P_ref, rtol=1e-12, atol=1e-12)
    ll_ref = (math.log(0.8) + log_count_likelihood(7.0, 1.0, 1)
              + stats.multivariate_normal(sm.H @ g.m, S).logpdf(z))
    assert ll == pytest.approx(ll_ref, rel=1e-12)


def test_count_likelihood_against_monte_carlo():
    alpha, beta, n = 7.0, 1.0, 3
    rng = np.random.default_rng(2024)
    gam = rng.gamma(alpha, 1.0 / beta, size=10**6)
    samples = np.exp(-gam) * gam**n / math.factorial(n)
    est, se = samples.mean(), samples.std(ddof=1) / math.sqrt(len(samples))
    exact = math.exp(log_count_likelihood(alpha, beta, n)) / math.factorial(n)
    assert abs(est - exact) < 3 * se


@pytest.mark.parametrize("n", [1, 2, 4])
def test_fixed_extent_posterior_times_evidence_is_joint(n):
    # prior(x, gamma) l_W(x, gamma) = posterior(x, gamma) <prior; l_W>
    rng = np.random.default_rng(n)
    sm = sensor(pd=0.85, rho=0.3)
    g = ggiw(0.5, -0.5, 1.0, 0.0, alpha=9.0, beta=1.5, pos_var=2.0)
    W = rng.normal(0.0, 1.5, size=(n, 2))
    post, ll = ggiw_update(g, W, sm, fixed_extent=True)
    Y = sm.rho * g.extent_mean + sm.R
    for _ in range(20):
        x = rng.multivariate_normal(g.m, g.P)
        gam = rng.gamma(g.alpha, 1 / g.beta)
        lik = (math.log(sm.p_detection) - gam + n * math.log(gam)
               + stats.multivariate_normal(sm.H @ x, Y).logpdf(W).sum())
        lhs = (stats.multivariate_normal(g.m, g.P).logpdf(x) + stats.gamma(g.alpha, scale=1 / g.beta).logpdf(gam)
               + lik)
        rhs = (stats.multivariate_normal(post.m, post.P).logpdf(x)
               + stats.gamma(post.alpha, scale=1 / post.beta).logpdf(gam) + ll)
        assert lhs == pytest.approx(rhs, abs=1e-8)


def test_updater_loglik_matches_update():
    sm = sensor()
    g = ggiw(1.0, 1.0, v=14.0)
    up = GGIWUpdater(g, sm)
    rng = np.random.default_rng(0)
    for n in range(1, 6):
        W = rng.normal(1.0, 2.0, size=(n, 2))
        stats_ = cell_statistics(W)
        assert up.loglik(*stats_) == pytest.approx(up.update(*stats_)[1], rel=1e-12, abs=1e-12)


def test_extent_update_approaches_fixed_extent_for_large_dof():
    sm = sensor()
    W = np.array([[0.3, 0.1], [-0.8, 0.4], [0.2, -1.1]])
    gaps = []
    for v in (1e2, 1e4, 1e6):
        g = ggiw(v=v, axes=(2.0, 1.0))
        gaps.append(abs(ggiw_update(g, W, sm)[1] - ggiw_update(g, W, sm, fixed_extent=True)[1]))
    assert gaps[2] < gaps[1] < gaps[0]
    assert gaps[2] < 1e-3


def test_update_counts_and_dof():
    post, _ = ggiw_update(ggiw(alpha=5.0, beta=2.0, v=12.0), np.zeros((3, 2)) + 0.1, sensor())
    assert post.alpha == 8.0 and post.beta == 3.0 and post.v == 15.0
    post.validate()


def test_update_rejects_empty_cell():
    with pytest.raises(ValueError):
        ggiw_update(ggiw(), np.zeros((0, 2)), sensor())


# -- empty-set likelihood -------------------------------------------------------------

def test_log_lik_empty_examples():
    assert log_lik_empty(ggiw(), sensor(pd=0.0)) == 0.0
    # gamma concentrated at 0 and at 8
    assert log_lik_empty(ggiw(alpha=1e-9, beta=1.0), sensor(pd=0.9)) == pytest.approx(0.0, abs=1e-8)
    near8 = log_lik_empty(ggiw(alpha=8e8, beta=1e8), sensor(pd=0.9))
    assert near8 == pytest.approx(math.log(0.1 + 0.9 * math.exp(-8.0)), rel=1e-6)
    assert math.exp(near8) == pytest.approx(0.10030, abs=1e-5)


@given(st.floats(0.0, 1.0), st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_empty_likelihood_bounds(pd, alpha, beta):
    val = math.exp(log_lik_empty(ggiw(alpha=alpha, beta=beta), sensor(pd=pd)))
    assert 1.0 - pd - 1e-12 <= val <= 1.0 + 1e-12


def test_effective_detection_increases_with_rate_mean():
    shape = 6.0
    means = np.linspace(0.1, 30.0, 200)
    eff = [0.9 * (1.0 - math.exp(log_lik_empty(ggiw(alpha=shape, beta=shape / mu), sensor(pd=1.0))))
           for mu in means]
    assert np.all(np.diff(eff) > 0)


def test_missed_detection_update_matches_mixture_moments():
    sm = sensor(pd=0.7)
    g = ggiw(alpha=12.0, beta=1.5)
    post, ll = ggiw_missed(g, sm)
    assert ll == pytest.approx(log_lik_empty(g, sm), rel=1e-14)
    q1 = 0.7 * (1.5 / 2.5) ** 12 / math.exp(ll)
    mean = (1 - q1) * 12 / 1.5 + q1 * 12 / 2.5
    assert post.alpha / post.beta == pytest.approx(mean, rel=1e-12)
    assert np.array_equal(post.m, g.m) and post.v == g.v


# -- misc -------------------------------------------------------------------------------

def test_predicted_measurement_covariance():
    sm = sensor(rho=0.5, R=0.2)
    g = ggiw(axes=(3.0, 1.0))
    mu, S = predicted_measurement(g, sm)
    assert np.allclose(S, g.P[:2, :2] + 0.5 * g.extent_mean + 0.2 * np.eye(2))


def test_merge_preserves_moments():
    a, b = ggiw(0.0, alpha=4.0, beta=1.0), ggiw(2.0, alpha=9.0, beta=1.5)
    m = merge_ggiw([0.25, 0.75], [a, b])
    assert np.allclose(m.m, 0.25 * a.m + 0.75 * b.m)
    assert m.alpha / m.beta == pytest.approx(0.25 * 4 + 0.75 * 6)


def test_invalid_parameters_raise():
    with pytest.raises(ValueError):
        GGIW(0.0, 1.0, np.zeros(4), np.eye(4), 10.0, np.eye(2))
    with pytest.raises(ValueError):
        GGIW(1.0, 1.0, np.zeros(4), np.eye(4), 6.0, np.eye(2))
    with pytest.raises(ValueError):
        SensorModel(R=np.eye(2), p_detection=1.5)

"""Gamma Gaussian inverse-Wishart (GGIW) single extended-target model.

State layout is ``[x, y, vx, vy]`` with a 2-D elliptic extent.  The
inverse-Wishart uses the ``(v, V)`` convention where the extent mean is
``V / (v - 2d - 2)``.

The measurement model is the Poisson point process of the standard
extended-target model: a detected target produces ``Poisson(gamma)``
points, each ``N(Hx, rho * X + R)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

EXTENT_DIM = 2
_IW_OFFSET = 2 * EXTENT_DIM + 2
_LOG_PI = math.log(math.pi)
_LOG_2PI = math.log(2.0 * math.pi)


# -- 2x2 helpers (np.linalg is slow on tiny matrices) -------------------------

def _det2(A):
    return A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]


def _inv2(A):
    det = _det2(A)
    return np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]]) / det


def sqrtm2(A):
    """Principal square root of a 2x2 SPD matrix."""
    s = math.sqrt(max(_det2(A), 0.0))
    t = math.sqrt(A[0, 0] + A[1, 1] + 2.0 * s)
    return (A + s * np.eye(2)) / t


def _logdet2(A):
    det = _det2(A)
    if not det > 0.0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return math.log(det)


def _log_mvgamma2(a):
    return 0.5 * _LOG_PI + math.lgamma(a) + math.lgamma(a - 0.5)


def _sym(A):
    return 0.5 * (A + A.T)


@dataclass(frozen=True, eq=False)
class GGIW:
    """Gamma(rate) x Gaussian(kinematics) x inverse-Wishart(extent)."""

    alpha: float
    beta: float
    m: np.ndarray
    P: np.ndarray
    v: float
    V: np.ndarray

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Gamma parameters must be positive, got {self.alpha}, {self.beta}")
        if not self.v > _IW_OFFSET:
            raise ValueError(f"extent dof must exceed {_IW_OFFSET}, got {self.v}")

    @property
    def rate_mean(self) -> float:
        return self.alpha / self.beta

    @property
    def extent_mean(self) -> np.ndarray:
        return self.V / (self.v - _IW_OFFSET)

    @property
    def position(self) -> np.ndarray:
        return self.m[:EXTENT_DIM]

    def validate(self):
        np.linalg.cholesky(self.P)
        np.linalg.cholesky(self.V)


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Linear Gaussian kinematics plus rate/extent forgetting.

    ``eta`` scales down both Gamma parameters (mean kept, variance grows);
    ``tau`` is the extent time constant, ``exp(-Ts/tau)`` the dof decay.
    """

    F: np.ndarray
    Q: np.ndarray
    Ts: float = 1.0
    p_survival: float = 0.99
    tau: float = field(default=-1.0 / math.log(0.99))
    eta: float = 1.25

    def __post_init__(self):
        if not 0.0 <= self.p_survival <= 1.0:
            raise ValueError("p_survival must be in [0, 1]")
        if self.eta < 1.0:
            raise ValueError("eta must be >= 1")

    @classmethod
    def nearly_constant_velocity(cls, Ts=1.0, sigma_a=0.5, **kwargs) -> "MotionModel":
        F = np.eye(4)
        F[0, 2] = F[1, 3] = Ts
        q = np.array([[Ts**3 / 3, Ts**2 / 2], [Ts**2 / 2, Ts]]) * sigma_a**2
        Q = np.zeros((4, 4))
        Q[np.ix_([0, 2], [0, 2])] = q
        Q[np.ix_([1, 3], [1, 3])] = q
        return cls(F=F, Q=Q, Ts=Ts, **kwargs)

    @property
    def extent_decay(self) -> float:
        return math.exp(-self.Ts / self.tau) if math.isfinite(self.tau) else 1.0


@dataclass(frozen=True, eq=False)
class SensorModel:
    """Detection, clutter and spatial model for point measurements in 2-D.

    Clutter is uniform over ``region = (xmin, xmax, ymin, ymax)``.
    """

    R: np.ndarray
    p_detection: float = 0.9
    clutter_rate: float = 10.0
    region: tuple = (-100.0, 100.0, -100.0, 100.0)
    rho: float = 0.25
    H: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(2), np.zeros((2, 2))]))

    def __post_init__(self):
        if not 0.0 <= self.p_detection <= 1.0:
            raise ValueError("p_detection must be in [0, 1]")
        if self.clutter_rate < 0:
            raise ValueError("clutter_rate must be >= 0")

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.region
        return (x1 - x0) * (y1 - y0)

    @property
    def clutter_intensity(self) -> float:
        return self.clutter_rate / self.area

    @property
    def log_clutter_intensity(self) -> float:
        lam = self.clutter_intensity
        return math.log(lam) if lam > 0 else -math.inf

    def spatial_cov(self, extent: np.ndarray) -> np.ndarray:
        return self.rho * extent + self.R


def ggiw_predict(d: GGIW, motion: MotionModel) -> GGIW:
    F = motion.F
    m = F @ d.m
    P = _sym(F @ d.P @ F.T + motion.Q)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise ValueError("predicted kinematic covariance is not positive definite") from exc
    v = _IW_OFFSET + motion.extent_decay * (d.v - _IW_OFFSET)
    V = d.V * ((v - _IW_OFFSET) / (d.v - _IW_OFFSET))
    return GGIW(d.alpha / motion.eta, d.beta / motion.eta, m, P, v, V)


def log_count_likelihood(alpha: float, beta: float, n: int) -> float:
    """log E[exp(-gamma) gamma**n] for gamma ~ Gamma(alpha, beta)."""
    return (math.lgamma(alpha + n) - math.lgamma(alpha)
            + alpha * math.log(beta) - (alpha + n) * math.log(beta + 1.0))


def log_lik_empty(d: GGIW, sensor: SensorModel) -> float:
    pd = sensor.p_detection
    no_meas = math.exp(d.alpha * math.log(d.beta / (d.beta + 1.0)))
    return math.log(1.0 - pd + pd * no_meas)


def ggiw_missed(d: GGIW, sensor: SensorModel) -> tuple[GGIW, float]:
    """Condition on an empty measurement set.

    The exact posterior Gamma is a two-component mixture; it is collapsed by
    matching the first two moments.  Returns ``(posterior, log <f; l_empty>)``.
    """
    pd = sensor.p_detection
    a, b = d.alpha, d.beta
    no_meas = math.exp(a * math.log(b / (b + 1.0)))
    lik = 1.0 - pd + pd * no_meas
    if pd == 0.0 or lik == 1.0:
        return d, math.log(lik)
    q0 = (1.0 - pd) / lik
    q1 = 1.0 - q0
    mean = q0 * a / b + q1 * a / (b + 1.0)
    second = a * (a + 1.0) * (q0 / b**2 + q1 / (b + 1.0) ** 2)
    var = second - mean * mean
    if var <= 0.0:
        return replace(d, beta=b + q1), math.log(lik)
    return replace(d, alpha=mean * mean / var, beta=mean / var), math.log(lik)


def _m2(a, b):
    """Product of 2x2 matrices stored as row-major tuples."""
    return (a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3])


def _t2(a):
    return (a[0], a[2], a[1], a[3])


def _sqrt2(a):
    s = math.sqrt(max(a[0] * a[3] - a[1] * a[2], 0.0))
    t = math.sqrt(a[0] + a[3] + 2.0 * s)
    return ((a[0] + s) / t, a[1] / t, a[2] / t, (a[3] + s) / t)


def _inv2t(a):
    det = a[0] * a[3] - a[1] * a[2]
    return (a[3] / det, -a[1] / det, -a[2] / det, a[0] / det)


def _det2t(a):
    return a[0] * a[3] - a[1] * a[2]


def _spd_logdet(a):
    det = _det2t(a)
    if not (a[0] > 0.0 and det > 0.0):
        raise ValueError("matrix is not positive definite")
    return math.log(det)


def cell_statistics(W) -> tuple[int, np.ndarray, tuple]:
    """Size, mean and scatter matrix (row-major tuple) of a measurement cell."""
    W = np.asarray(W, dtype=float).reshape(-1, 2)
    n = W.shape[0]
    if n == 0:
        raise ValueError("a measurement cell needs at least one point")
    zbar = W.sum(axis=0) / n
    if n == 1:
        return 1, zbar, (0.0, 0.0, 0.0, 0.0)
    dev = W - zbar
    Zm = dev.T @ dev
    return n, zbar, (Zm[0, 0], Zm[0, 1], Zm[1, 0], Zm[1, 1])


class GGIWUpdater:
    """Cell-independent pieces of the GGIW update of one prior ``d``."""

    def __init__(self, d: GGIW, sensor: SensorModel):
        self.d = d
        self.sensor = sensor
        c = 1.0 / (d.v - _IW_OFFSET)
        V = d.V
        self.Xhat = Xhat = (V[0, 0] * c, V[0, 1] * c, V[1, 0] * c, V[1, 1] * c)
        R, rho = sensor.R, sensor.rho
        self.Y = Y = (rho * Xhat[0] + R[0, 0], rho * Xhat[1] + R[0, 1],
                      rho * Xhat[2] + R[1, 0], rho * Xhat[3] + R[1, 1])
        H = sensor.H
        self.PHt = d.P @ H.T
        HPHt = H @ self.PHt
        self.HPHt = (HPHt[0, 0], HPHt[0, 1], HPHt[1, 0], HPHt[1, 1])
        self.Hm = H @ d.m
        try:
            self.logdet_Y = _spd_logdet(Y)
            self.logdet_X = _spd_logdet(Xhat)
            self.logdet_V = _spd_logdet((V[0, 0], V[0, 1], V[1, 0], V[1, 1]))
        except ValueError as exc:
            raise ValueError("GGIW extent or spatial covariance is not positive definite") from exc
        self.Xs = _sqrt2(Xhat)
        self.B = _m2(self.Xs, _inv2t(_sqrt2(Y)))
        self.Yi = _inv2t(Y)
        self.a0 = 0.5 * (d.v - EXTENT_DIM - 1)
        pd = sensor.p_detection
        self.log_pd = math.log(pd) if pd > 0 else -math.inf

        self.d_alpha, self.d_beta = d.alpha, d.beta
        self.Hm0, self.Hm1 = float(self.Hm[0]), float(self.Hm[1])
        self.V_t = (V[0, 0], V[0, 1], V[1, 0], V[1, 1])
        self._by_n: dict = {}

    def _n_terms(self, n: int):
        out = self._by_n.get(n)
        if out is None:
            q = n - 1
            a0 = self.a0
            const = (self.log_pd + log_count_likelihood(self.d_alpha, self.d_beta, n) - _LOG_2PI
                     - q * _LOG_PI - 0.5 * q * (self.logdet_Y - self.logdet_X) - math.log(n)
                     + a0 * self.logdet_V + _log_mvgamma2(a0 + 0.5 * q) - _log_mvgamma2(a0))
            Y, HPHt = self.Y, self.HPHt
            S = (HPHt[0] + Y[0] / n, HPHt[1] + Y[1] / n, HPHt[2] + Y[2] / n, HPHt[3] + Y[3] / n)
            try:
                logdet_S = _spd_logdet(S)
            except ValueError as exc:
                raise ValueError("innovation covariance is not positive definite") from exc
            out = self._by_n[n] = (const - 0.5 * logdet_S, S, _inv2t(S), a0 + 0.5 * q)
        return out

    def loglik(self, n: int, zbar, Z) -> float:
        """``log <d; l_W>`` from the cell size, mean and scatter."""
        const, S, Si, expo = self._n_terms(n)
        e0 = zbar[0] - self.Hm0
        e1 = zbar[1] - self.Hm1
        quad = e0 * (Si[0] * e0 + Si[1] * e1) + e1 * (Si[2] * e0 + Si[3] * e1)
        if n == 1:
            return const - 0.5 * quad - expo * self.logdet_V
        B = self.B
        Zh = _m2(_m2(B, Z), _t2(B))
        z01 = 0.5 * (Zh[1] + Zh[2])
        V = self.V_t
        return const - 0.5 * quad - expo * _spd_logdet((V[0] + Zh[0], V[1] + z01, V[2] + z01, V[3] + Zh[3]))

    def update(self, n: int, zbar, Z, fixed_extent: bool = False) -> tuple[GGIW, float]:
        d = self.d
        Y = self.Y
        HPHt = self.HPHt
        S = (HPHt[0] + Y[0] / n, HPHt[1] + Y[1] / n, HPHt[2] + Y[2] / n, HPHt[3] + Y[3] / n)
        try:
            logdet_S = _spd_logdet(S)
        except ValueError as exc:
            raise ValueError("innovation covariance is not positive definite") from exc
        Si = _inv2t(S)
        K = self.PHt @ np.array([[Si[0], Si[1]], [Si[2], Si[3]]])
        e0 = float(zbar[0] - self.Hm[0])
        e1 = float(zbar[1] - self.Hm[1])
        m_post = d.m + K @ np.array([e0, e1])
        P_post = d.P - K @ self.PHt.T
        P_post = 0.5 * (P_post + P_post.T)

        quad = e0 * (Si[0] * e0 + Si[1] * e1) + e1 * (Si[2] * e0 + Si[3] * e1)
        log_mean = -_LOG_2PI - 0.5 * logdet_S - 0.5 * quad
        q = n - 1
        if fixed_extent:
            v_post, V_post = d.v, d.V
            Yi = self.Yi
            log_scatter = (-q * _LOG_2PI - 0.5 * q * self.logdet_Y - math.log(n)
                           - 0.5 * (Yi[0] * Z[0] + Yi[1] * Z[2] + Yi[2] * Z[1] + Yi[3] * Z[3]))
        else:
            A = _m2(self.Xs, _inv2t(_sqrt2(S)))
            B = self.B
            Ae = (A[0] * e0 + A[1] * e1, A[2] * e0 + A[3] * e1)
            Zh = _m2(_m2(B, Z), _t2(B))
            z01 = 0.5 * (Zh[1] + Zh[2])
            V = d.V
            VZ = (V[0, 0] + Zh[0], V[0, 1] + z01, V[1, 0] + z01, V[1, 1] + Zh[3])
            n01 = Ae[0] * Ae[1]
            v_post = d.v + n
            V_post = np.array([[VZ[0] + Ae[0] * Ae[0], VZ[1] + n01], [VZ[2] + n01, VZ[3] + Ae[1] * Ae[1]]])
            V_post = 0.5 * (V_post + V_post.T)
            a0 = self.a0
            log_scatter = (-q * _LOG_PI - 0.5 * q * (self.logdet_Y - self.logdet_X) - math.log(n)
                           + a0 * self.logdet_V - (a0 + 0.5 * q) * _spd_logdet(VZ)
                           + _log_mvgamma2(a0 + 0.5 * q) - _log_mvgamma2(a0))

        loglik = self.log_pd + log_count_likelihood(d.alpha, d.beta, n) + log_mean + log_scatter
        post = GGIW(d.alpha + n, d.beta + 1.0, m_post, P_post, v_post, V_post)
        return post, loglik


def ggiw_update(d: GGIW, W, sensor: SensorModel, fixed_extent: bool = False) -> tuple[GGIW, float]:
    """Condition ``d`` on the nonempty cell ``W`` (n x 2) being its detections.

    Returns the posterior and ``log <f; l_W>``, which includes the detection
    probability and the Gamma-marginalised Poisson count term.  With
    ``fixed_extent`` the extent is held at its mean and both outputs are exact;
    otherwise the extent is marginalised against the inverse-Wishart after
    whitening the scatter to extent units.
    """
    n, zbar, Z = cell_statistics(W)
    return GGIWUpdater(d, sensor).update(n, zbar, Z, fixed_extent)


def predicted_measurement(d: GGIW, sensor: SensorModel) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of a single measurement, used for gating."""
    H = sensor.H
    return H @ d.m, H @ d.P @ H.T + sensor.spatial_cov(d.extent_mean)


def merge_ggiw(weights: Sequence[float], comps: Sequence[GGIW]) -> GGIW:
    """Collapse a weighted GGIW mixture to one GGIW.

    Gaussian and Gamma parts are moment matched; the extent keeps the
    weighted mean dof and the weighted extent mean.
    """
    if len(comps) == 1:
        return comps[0]
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    m = sum(wi * c.m for wi, c in zip(w, comps))
    P = sum(wi * (c.P + np.outer(c.m - m, c.m - m)) for wi, c in zip(w, comps))
    mean = sum(wi * c.alpha / c.beta for wi, c in zip(w, comps))
    second = sum(wi * c.alpha * (c.alpha + 1) / c.beta**2 for wi, c in zip(w, comps))
    var = second - mean**2
    v = float(sum(wi * c.v for wi, c in zip(w, comps)))
    X = sum(wi * c.extent_mean for wi, c in zip(w, comps))
    return GGIW(mean**2 / var, mean / var, m, _sym(P), v, _sym(X * (v - _IW_OFFSET)))

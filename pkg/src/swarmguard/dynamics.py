"""Double-integrator vehicle plant, noisy sensing and steady-state Kalman estimation.

States are plain ``numpy`` arrays laid out as ``[px, py, vx, vy]``.  Every
vehicle in a scenario shares one :class:`LinearModel`, so the steady-state
gain and innovation covariance are computed once and reused.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError

STATE_DIM = 4
INPUT_DIM = 2


def position(x):
    return np.asarray(x)[..., :2]


def velocity(x):
    return np.asarray(x)[..., 2:4]


def double_integrator_matrices():
    """Continuous-time ``(A, B)`` of a planar point mass."""
    A = np.zeros((STATE_DIM, STATE_DIM))
    A[0, 2] = A[1, 3] = 1.0
    B = np.zeros((STATE_DIM, INPUT_DIM))
    B[2, 0] = B[3, 1] = 1.0
    return A, B


def _is_double_integrator(A, B):
    A0, B0 = double_integrator_matrices()
    return A.shape == A0.shape and B.shape == B0.shape and np.array_equal(A, A0) and np.array_equal(B, B0)


@dataclass(frozen=True)
class LinearModel:
    """Shared LTI plant.

    ``proc_noise_cov`` is the covariance of the additive noise applied once
    per discrete step (not a spectral density).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float
    proc_noise_cov: np.ndarray
    meas_noise_cov: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ConfigError(f"dt must be finite and positive, got {self.dt!r}")
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise ConfigError("inconsistent A/B/C shapes")
        for name, cov, dim in (("proc_noise_cov", self.proc_noise_cov, n),
                               ("meas_noise_cov", self.meas_noise_cov, self.C.shape[0])):
            cov = np.asarray(cov, dtype=float)
            if cov.shape != (dim, dim):
                raise ConfigError(f"{name} must be {dim}x{dim}")
            if not np.allclose(cov, cov.T):
                raise ConfigError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ConfigError(f"{name} must be positive semi-definite")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def n_sensors(self):
        return self.C.shape[0]

    @cached_property
    def discrete(self):
        return discretize(self)


def double_integrator(dt=0.05, proc_std=(0.004, 0.004, 0.001, 0.001),
                      meas_std=(0.05, 0.05, 0.02, 0.02), C=None):
    """Build the planar double-integrator model with diagonal noise."""
    A, B = double_integrator_matrices()
    if C is None:
        C = np.eye(STATE_DIM)
    C = np.asarray(C, dtype=float)
    meas_std = np.asarray(meas_std, dtype=float)
    if meas_std.shape != (C.shape[0],):
        raise ConfigError("meas_std length must match the number of output rows")
    return LinearModel(A=A, B=B, C=C, dt=float(dt),
                       proc_noise_cov=np.diag(np.square(proc_std)),
                       meas_noise_cov=np.diag(np.square(meas_std)))


def discretize(model):
    """Zero-order-hold discretisation ``(A_d, B_d)``.

    The double integrator takes the closed form (position gains ``v*dt`` and
    ``u*dt**2/2``); any other plant goes through the augmented matrix
    exponential.
    """
    dt = model.dt
    if not np.isfinite(dt) or dt <= 0:
        raise ConfigError(f"dt must be finite and positive, got {dt!r}")
    A, B = np.asarray(model.A, float), np.asarray(model.B, float)
    if _is_double_integrator(A, B):
        Ad = np.eye(STATE_DIM)
        Ad[0, 2] = Ad[1, 3] = dt
        Bd = np.zeros((STATE_DIM, INPUT_DIM))
        Bd[0, 0] = Bd[1, 1] = 0.5 * dt * dt
        Bd[2, 0] = Bd[3, 1] = dt
        return Ad, Bd
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


def step_dynamics(model, x, u, noise=None):
    """Advance the true state one step: ``A_d x + B_d u + noise``."""
    Ad, Bd = model.discrete
    x_next = Ad @ x + Bd @ u
    if noise is not None:
        x_next = x_next + noise
    return x_next


def measure(model, x, noise=None):
    y = model.C @ x
    if noise is not None:
        y = y + noise
    return y


@dataclass(frozen=True)
class SteadyState:
    gain: np.ndarray
    meas_resid_cov: np.ndarray
    prior_cov: np.ndarray
    post_cov: np.ndarray
    iterations: int


def riccati_step(model, P):
    """One predict/correct pass of the covariance recursion.

    Returns ``(P_post_next, P_prior, K, S)``.
    """
    Ad, _ = model.discrete
    C, Q, R = model.C, model.proc_noise_cov, model.meas_noise_cov
    P_prior = Ad @ P @ Ad.T + Q
    S = C @ P_prior @ C.T + R
    K = np.linalg.solve(S.T, (P_prior @ C.T).T).T
    IKC = np.eye(model.n) - K @ C
    # Joseph form keeps P symmetric PSD
    P_post = IKC @ P_prior @ IKC.T + K @ R @ K.T
    return 0.5 * (P_post + P_post.T), P_prior, K, S


def steady_state(model, tol=1e-13, max_iter=200_000):
    """Iterate the discrete Riccati recursion to its fixed point."""
    P = np.eye(model.n)
    for it in range(1, max_iter + 1):
        P_next, P_prior, K, S = riccati_step(model, P)
        delta = np.max(np.abs(P_next - P))
        P = P_next
        if delta < tol:
            _, P_prior, K, S = riccati_step(model, P)
            return SteadyState(gain=K, meas_resid_cov=S, prior_cov=P_prior,
                               post_cov=P, iterations=it)
    raise ConfigError(
        f"Riccati recursion did not converge after {max_iter} iterations "
        f"(dt={model.dt}, C shape={model.C.shape}); check detectability")


def steady_state_gain(model):
    """Return the converged Kalman gain ``K`` and innovation covariance ``Sigma_z``."""
    ss = steady_state(model)
    return ss.gain, ss.meas_resid_cov


@dataclass
class KalmanEstimator:
    model: LinearModel
    gain: np.ndarray
    estimate: np.ndarray
    err_cov: np.ndarray
    meas_resid_cov: np.ndarray
    innovation: np.ndarray = field(default=None)

    @classmethod
    def from_model(cls, model, x0, steady=None):
        if steady is None:
            steady = steady_state(model)
        return cls(model=model, gain=steady.gain, estimate=np.array(x0, dtype=float),
                   err_cov=steady.post_cov, meas_resid_cov=steady.meas_resid_cov)


def kalman_step(est, u, y):
    """Predict with the applied input, then correct with the steady-state gain."""
    Ad, Bd = est.model.discrete
    x_prior = Ad @ est.estimate + Bd @ u
    z = y - est.model.C @ x_prior
    return replace(est, estimate=x_prior + est.gain @ z, innovation=z)


def residual_variance(K, meas_resid_cov, q):
    """Variance of element ``q`` (0-based) of the attack-free inter-vehicle residual.

    Sums ``(K[q, s] * sigma_z_s)**2`` over sensors, using only the diagonal of
    the innovation covariance.
    """
    K = np.asarray(K)
    if not 0 <= q < K.shape[0]:
        raise IndexError(f"residual element {q} out of range for n={K.shape[0]}")
    sigma_z_sq = np.diag(meas_resid_cov)
    return float(np.sum(K[q] ** 2 * sigma_z_sq))


def residual_stds(K, meas_resid_cov):
    return np.sqrt([residual_variance(K, meas_resid_cov, q) for q in range(K.shape[0])])

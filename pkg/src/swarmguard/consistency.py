"""Inter-vehicle consistency monitoring with the cumulative-sign (CUSIGN) test.

Each observer predicts a neighbour's next state under the primary mesh model,
feeds the sign of every residual element to a pair of CUSIGN statistics and
tracks the resulting alarm rates with a memoryless runtime estimator (MRE).
Alarm rates that leave their confidence band for long enough mark the
neighbour inconsistent.

:class:`CusignMonitor` and the free functions operate on a single
``(observer, target, element)`` triple; :class:`CusignBank` runs the same
update for every triple of a swarm at once and is what the simulator uses.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.stats import norm

from .errors import ConfigError
from .formation import primary_control

MIN_WINDOW = 10


def sgn(value, tie=1):
    if value > 0:
        return 1
    if value < 0:
        return -1
    return tie


# --------------------------------------------------------------------------
# expected behaviour of the test

def transient_matrix(tau, p_plus=0.5):
    """Transient block ``Q`` of the CUSIGN accumulation chain.

    States ``0..tau-1`` count the positive statistic; reaching ``tau`` is
    absorbing (an alarm).  From 0 a negative sign keeps the chain at 0.
    """
    if tau < 1:
        raise ConfigError("tau must be >= 1")
    p_minus = 1.0 - p_plus
    Q = np.zeros((tau, tau))
    for s in range(tau):
        if s + 1 < tau:
            Q[s, s + 1] = p_plus
        if s == 0:
            Q[0, 0] += p_minus
        else:
            Q[s, s - 1] = p_minus
    return Q


@lru_cache(maxsize=None)
def expected_alarm_rate(tau, p_plus=0.5):
    """Long-run alarm rate of one CUSIGN side.

    Mean absorption times ``mu = (I - Q)^-1 1`` come from the fundamental
    matrix; the rate is ``1 / mu[0]`` because the statistic restarts at zero
    after every alarm.  For the negative side pass ``p_plus=p_minus``.
    """
    Q = transient_matrix(tau, p_plus)
    try:
        mu = np.linalg.solve(np.eye(tau) - Q, np.ones(tau))
    except np.linalg.LinAlgError as exc:
        raise ConfigError(f"absorbing chain for tau={tau}, p={p_plus} is singular") from exc
    if not np.all(np.isfinite(mu)) or mu[0] <= 0:
        raise ConfigError(f"absorbing chain for tau={tau}, p={p_plus} has no finite hitting time")
    return 1.0 / mu[0]


def alarm_rate_variance(expected, window, theta=1.0):
    """Variance of the MRE alarm rate, ``theta E (1 - E) / (2 l - 1)``."""
    _check_window(window)
    if not theta > 0:
        raise ConfigError("theta must be > 0")
    return theta * expected * (1.0 - expected) / (2.0 * window - 1.0)


def two_sided_z(alpha):
    if not 0.0 < alpha < 1.0:
        raise ConfigError("significance level must lie in (0, 1)")
    return abs(norm.ppf(alpha / 2.0))


def detection_bounds(expected, variance, alpha):
    """Symmetric normal band ``E +/- z sqrt(Var)`` clamped to ``[0, 1]``."""
    half = two_sided_z(alpha) * np.sqrt(variance)
    return max(0.0, expected - half), min(1.0, expected + half)


@dataclass(frozen=True)
class DetectionBounds:
    expected_rate: float
    rate_variance: float
    alpha: float
    omega_minus: float
    omega_plus: float

    @classmethod
    def for_test(cls, tau, window, theta=1.0, alpha=0.01):
        expected = expected_alarm_rate(tau)
        var = alarm_rate_variance(expected, window, theta)
        lo, hi = detection_bounds(expected, var, alpha)
        return cls(expected, var, alpha, lo, hi)

    def contains(self, rate):
        return self.omega_minus <= rate <= self.omega_plus


# --------------------------------------------------------------------------
# single-monitor updates

def _check_window(window):
    if window < MIN_WINDOW:
        raise ConfigError(f"pseudo-window must be >= {MIN_WINDOW}, got {window}")


def mre_update(rate, alarm, window):
    """One memoryless runtime estimator step: ``A + (alarm - A) / l``."""
    _check_window(window)
    return rate + (alarm - rate) / window


@dataclass(frozen=True)
class CusignMonitor:
    observer: int
    target: int
    element: int
    tau: int = 2
    window: int = 20
    theta: float = 1.0
    s_plus: int = 0
    s_minus: int = 0
    alarm_rate_plus: float = None
    alarm_rate_minus: float = None
    outside_plus: int = 0
    outside_minus: int = 0

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        _check_window(self.window)
        if self.alarm_rate_plus is None:
            object.__setattr__(self, "alarm_rate_plus", expected_alarm_rate(self.tau))
        if self.alarm_rate_minus is None:
            object.__setattr__(self, "alarm_rate_minus", expected_alarm_rate(self.tau))


def cusign_step(mon, residual, tie=1):
    """Feed one residual element to the CUSIGN statistics.

    The statistic is updated first and an alarm fires in the same step it
    reaches the threshold, resetting it to zero.  ``tie`` is the sign used when
    the residual is exactly zero.

    ``residual`` may also be an array, in which case ``mon`` stands for that
    many independent monitors and the statistics and alarms come back as
    arrays of the same shape.

    Returns ``(monitor, zeta_plus, zeta_minus)``.
    """
    if np.ndim(residual):
        r = np.asarray(residual, dtype=float)
        s = np.where(r > 0, 1, np.where(r < 0, -1, tie))
        s_plus = np.maximum(0, mon.s_plus + s)
        s_minus = np.minimum(0, mon.s_minus + s)
        zeta_plus = (s_plus == mon.tau).astype(np.int64)
        zeta_minus = (s_minus == -mon.tau).astype(np.int64)
        s_plus[zeta_plus == 1] = 0
        s_minus[zeta_minus == 1] = 0
        return replace(mon, s_plus=s_plus, s_minus=s_minus), zeta_plus, zeta_minus
    s = sgn(residual, tie)
    s_plus = max(0, mon.s_plus + s)
    s_minus = min(0, mon.s_minus + s)
    zeta_plus = int(s_plus == mon.tau)
    zeta_minus = int(s_minus == -mon.tau)
    if zeta_plus:
        s_plus = 0
    if zeta_minus:
        s_minus = 0
    return replace(mon, s_plus=s_plus, s_minus=s_minus), zeta_plus, zeta_minus


def monitor_step(mon, residual, bounds, tie=1):
    """CUSIGN step, MRE update of both alarm rates and out-of-band run counters."""
    mon, zp, zm = cusign_step(mon, residual, tie)
    a_plus = mre_update(mon.alarm_rate_plus, zp, mon.window)
    a_minus = mre_update(mon.alarm_rate_minus, zm, mon.window)
    return replace(
        mon,
        alarm_rate_plus=a_plus,
        alarm_rate_minus=a_minus,
        outside_plus=0 if bounds.contains(a_plus) else mon.outside_plus + 1,
        outside_minus=0 if bounds.contains(a_minus) else mon.outside_minus + 1,
    )


def check_consistency(monitors, debounce):
    """``False`` (inconsistent) once any rate has stayed out of band for ``debounce`` steps."""
    for mon in monitors:
        if mon.outside_plus >= debounce or mon.outside_minus >= debounce:
            return False
    return True


# --------------------------------------------------------------------------
# prediction and residuals

def estimate_neighbor_input(observer, target, received, goal, params):
    """Re-evaluate the primary input vehicle ``target`` should have applied.

    Parameters
    ----------
    observer : int
        Vehicle doing the estimation.
    target : int
        Vehicle whose input is reconstructed.
    received : mapping of int -> Broadcast
        Everything the observer holds this step, including its own message.
    goal, params
        Shared mission goal and mesh parameters.

    Returns
    -------
    ndarray or None
        ``None`` means some member of the target's advertised neighbour set is
        not heard by the observer, so no prediction is possible this step.
    """
    msg = received.get(target)
    if msg is None:
        return None
    members = sorted(msg.neighbor_set)
    if any(h not in received for h in members):
        return None
    if members:
        nbr = np.array([received[h].state_estimate[:2] for h in members])
    else:
        nbr = np.zeros((0, 2))
    return primary_control(msg.state_estimate, nbr, msg.obstacles, goal, params)


def predict_neighbor_state(model, x_hat, u):
    Ad, Bd = model.discrete
    return Ad @ x_hat + Bd @ u


def inter_vehicle_residual(received_x_hat, predicted):
    return np.asarray(received_x_hat) - np.asarray(predicted)


# --------------------------------------------------------------------------
# swarm-wide bank

class CusignBank:
    """CUSIGN/MRE state for every ``(observer, target, element)`` of a swarm.

    Array axes are ``[observer, target, element]``.  Updates only touch the
    ``(observer, target)`` pairs selected by a mask; everything else is
    frozen.
    """

    def __init__(self, n_vehicles, elements, tau=2, window=20, theta=1.0, alpha=0.01,
                 debounce=50, rng=None):
        _check_window(window)
        self.n_vehicles = n_vehicles
        self.elements = np.asarray(elements, dtype=int)
        self.tau = int(tau)
        self.window = int(window)
        self.bounds = DetectionBounds.for_test(tau, window, theta, alpha)
        self.debounce = int(debounce)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        shape = (n_vehicles, n_vehicles, len(self.elements))
        # plus and minus sides stacked on a leading axis of length 2
        self._s = np.zeros((2, *shape), dtype=np.int64)
        self._rate = np.full((2, *shape), self.bounds.expected_rate)
        self._out = np.zeros((2, *shape), dtype=np.int64)
        self._thr = np.array([self.tau, -self.tau]).reshape(2, 1, 1, 1)
        self._all_elements = np.array_equal(self.elements, np.arange(4))

    s_plus = property(lambda self: self._s[0])
    s_minus = property(lambda self: self._s[1])
    rate_plus = property(lambda self: self._rate[0])
    rate_minus = property(lambda self: self._rate[1])
    out_plus = property(lambda self: self._out[0])
    out_minus = property(lambda self: self._out[1])

    def reset(self, observer, target):
        self._s[:, observer, target] = 0
        self._rate[:, observer, target] = self.bounds.expected_rate
        self._out[:, observer, target] = 0

    def update(self, mask, residuals):
        """Advance the selected pairs.

        Parameters
        ----------
        mask : bool array ``(N, N)``
        residuals : array ``(N, N, n)``
            Full residual vectors; only the configured elements are used.

        Returns
        -------
        bool array ``(N, N)``
            Pairs whose debounced verdict is inconsistent after this step.
        """
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return np.zeros(mask.shape, dtype=bool)
        m = mask[:, :, None]
        # whole-array update, cheaper than fancy indexing at swarm sizes
        r = residuals if self._all_elements else residuals[:, :, self.elements]
        signs = np.sign(r).astype(np.int64)
        if not signs.all():
            ties = (signs == 0) & m
            if ties.any():
                signs[ties] = self.rng.choice(np.array([-1, 1]), size=int(ties.sum()))
        s = self._s + signs
        np.maximum(s[0], 0, out=s[0])
        np.minimum(s[1], 0, out=s[1])
        z = s == self._thr
        s[z] = 0
        rate = self._rate + (z - self._rate) / self.window
        out = (self._out + 1) * ((rate < self.bounds.omega_minus) | (rate > self.bounds.omega_plus))
        np.copyto(self._s, s, where=m)
        np.copyto(self._rate, rate, where=m)
        np.copyto(self._out, out, where=m)
        return self.inconsistent()

    def inconsistent(self):
        if self._out.max() < self.debounce:
            return np.zeros(self._out.shape[1:3], dtype=bool)
        return self._out.max(axis=(0, 3)) >= self.debounce

    def out_of_band(self):
        """Pairs with at least one rate currently outside the band."""
        return (self._out > 0).any(axis=(0, 3))

"""Hidden-signature detection from received velocity estimates.

A vehicle that discovers an object switches to the hidden spring-damper law
and its speed decays along a characteristic curve.  Observers compare each
received speed against a one-step prediction taken from a canonical,
noise-free decay trajectory.  When the vehicle really follows the hidden law
the prediction errors are sign-random, so their sign-switch rate sits near
one half; any other motion leaves a persistent sign and a low switch rate.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .consistency import MIN_WINDOW, mre_update, two_sided_z
from .errors import ConfigError


@dataclass(frozen=True)
class DecayMap:
    """Tabulated canonical decay of the hidden model.

    ``distances[t]`` and ``speeds[t]`` are sampled every step of the
    noise-free trajectory.  ``seg`` marks the slice over which speed is
    strictly decreasing, which is where the lookups are defined.
    """

    distances: np.ndarray
    speeds: np.ndarray
    seg: slice
    l0_h: float
    v_min: float
    v_max: float

    @property
    def valid_speed_range(self):
        return self.v_min, self.v_max

    @property
    def duration(self):
        """Steps the canonical decay spends inside the valid speed range."""
        s = self.speeds[self.seg]
        return int(np.count_nonzero(s >= self.v_min))

    def remaining_steps(self, speed):
        """Canonical steps left in the valid range once the decay has slowed to ``speed``."""
        s = self.speeds[self.seg]
        return int(np.count_nonzero((s >= self.v_min) & (s <= speed)))

    def in_range(self, speed):
        return self.v_min <= speed <= self.v_max

    def _seg_arrays(self):
        s = self.speeds[self.seg]
        d = self.distances[self.seg]
        # ascending speed order for np.interp
        return s[::-1], d[::-1]

    def h(self, speed):
        """Speed expected one step after ``speed``."""
        s = self.speeds[self.seg]
        return float(np.interp(speed, s[:-1][::-1], s[1:][::-1]))

    def f(self, speed):
        """Distance to the object at which the decay passes through ``speed``."""
        s, d = self._seg_arrays()
        return float(np.interp(speed, s, d))


def build_decay_map(model, hp, delta_r, v_entry, v_floor=0.0, eps_v=1e-4, eps_d=None,
                    max_steps=200_000):
    """Integrate the noise-free hidden model radially and tabulate it.

    The trajectory starts ``delta_r`` from the object moving straight at it
    with speed ``v_entry``.  It stops once the speed is below ``eps_v`` and the
    distance is within ``eps_d`` of the rest length.  The monotone part of the
    speed curve, starting at its peak, defines the lookups; ``v_floor``
    raises the lower end of the valid speed range.
    """
    if eps_d is None:
        eps_d = 1e-3 * hp.l0_h
    # Radial start: the motion stays on the x-axis, where the hidden law is affine
    # in (distance, velocity), so one row pair of the discrete model suffices.
    Ad, Bd = model.discrete
    a00, a02, a22 = Ad[0, 0], Ad[0, 2], Ad[2, 2]
    b0, b2 = Bd[0, 0], Bd[2, 0]
    d, v = float(delta_r), -float(v_entry)
    dists, speeds = [], []
    for _ in range(max_steps):
        s = abs(v)
        dists.append(d)
        speeds.append(s)
        if s < eps_v and abs(d - hp.l0_h) < eps_d:
            break
        if not (np.isfinite(d) and np.isfinite(v)) or d <= 0 or d > 1e6:
            break
        u = -hp.k_h * (d - hp.l0_h) - hp.gamma_h * v
        d, v = a00 * d + a02 * v + b0 * u, a22 * v + b2 * u
    else:
        raise ConfigError(
            f"hidden model did not settle within {max_steps} steps "
            f"(k_h={hp.k_h}, gamma_h={hp.gamma_h}, dt={model.dt})")
    if not (speeds[-1] < eps_v and abs(dists[-1] - hp.l0_h) < eps_d):
        raise ConfigError(f"hidden model diverged (k_h={hp.k_h}, gamma_h={hp.gamma_h}, dt={model.dt})")
    dists = np.asarray(dists)
    speeds = np.asarray(speeds)
    start = int(np.argmax(speeds))
    stop = start + 1
    while stop < len(speeds) and speeds[stop] < speeds[stop - 1]:
        stop += 1
    seg = slice(start, stop)
    if stop - start < 3:
        raise ConfigError("hidden decay has no usable monotone segment")
    v_max = float(speeds[start])
    v_min = max(float(speeds[stop - 1]), float(v_floor))
    if v_min >= v_max:
        raise ConfigError(f"speed floor {v_floor} leaves no valid decay range (peak {v_max:.4g})")
    return DecayMap(dists, speeds, seg, hp.l0_h, v_min, v_max)


def hidden_velocity_residual(speed, prev_speed, decay_map):
    """Received speed minus the hidden-model prediction from the previous speed.

    Returns ``None`` when either speed falls outside the map's valid range.
    """
    if prev_speed is None:
        return None
    if not (decay_map.in_range(speed) and decay_map.in_range(prev_speed)):
        return None
    return speed - decay_map.h(prev_speed)


def signature_variance(window):
    if window < MIN_WINDOW:
        raise ConfigError(f"pseudo-window must be >= {MIN_WINDOW}, got {window}")
    return 1.0 / (4.0 * (2.0 * window - 1.0))


def signature_bounds(window, alpha_h):
    """Band around the fair-coin switch rate 1/2."""
    half = two_sided_z(alpha_h) * np.sqrt(signature_variance(window))
    return 0.5 - half, 0.5 + half


@dataclass(frozen=True)
class SignatureMonitor:
    observer: int
    target: int
    window: int = 20
    alpha_h: float = 0.01
    active_since: int = 0
    expires: int | None = None
    switch_rate: float = 0.5
    last_sign: int = None
    last_speed: float = None
    updates: int = 0
    dwell: int = 0
    bounds: tuple = None

    def __post_init__(self):
        if self.bounds is None:
            object.__setattr__(self, "bounds", signature_bounds(self.window, self.alpha_h))
        lo, hi = self.bounds
        if not lo < 0.5 < hi:
            raise ConfigError("signature band must straddle 1/2")

    @property
    def in_band(self):
        lo, hi = self.bounds
        return lo <= self.switch_rate <= hi


def sign_switch_step(mon, residual):
    """Register one hidden-velocity residual.

    A switch alarm fires when the sign flips relative to the previous
    residual.  The first residual after activation or after a gap only seeds
    the sign.  Dwell counts consecutive in-band updates once ``window``
    updates have passed.

    Returns ``(monitor, psi)``.
    """
    s = int(np.sign(residual))
    if mon.last_sign is None:
        return replace(mon, last_sign=s), 0
    psi = int(s != 0 and s == -mon.last_sign)
    rate = mre_update(mon.switch_rate, psi, mon.window)
    updates = mon.updates + 1
    mon = replace(mon, switch_rate=rate, last_sign=s, updates=updates)
    if updates > mon.window:
        mon = replace(mon, dwell=mon.dwell + 1 if mon.in_band else 0)
    return mon, psi


def signature_gap(mon):
    """Forget the previous sign after a skipped observation."""
    return replace(mon, last_sign=None, last_speed=None)


def detect_signature(mon, dwell):
    return mon.dwell >= dwell


def signature_expired(mon, k):
    """A real hidden decay cannot outlast the canonical one, so stop looking."""
    return mon.expires is not None and k > mon.expires


def estimate_object_position(p_hat, v_hat, decay_map, last_direction=None):
    """Object position implied by a neighbour's position and velocity.

    The distance comes from the speed-to-distance map and the direction is
    the neighbour's direction of travel.  Below the valid speed range the
    neighbour is assumed to sit at the rest length along ``last_direction``.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float)
    speed = float(np.hypot(v_hat[0], v_hat[1]))
    if speed < decay_map.v_min or speed == 0.0:
        if last_direction is None:
            if speed == 0.0:
                raise ValueError("no direction of travel available for the fallback estimate")
            last_direction = v_hat / speed
        return p_hat + decay_map.l0_h * np.asarray(last_direction, dtype=float)
    return p_hat + decay_map.f(speed) * (v_hat / speed)

"""Man-in-the-middle tampering of broadcasts in flight.

The attacker rewrites what receivers hear from one vehicle: the state
estimate is offset, every advertised obstacle is shifted and the neighbour
set is edited.  The sender keeps its own untouched copy.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .formation import Broadcast

SCHEDULE_KINDS = ("constant", "ramp", "sine")


@dataclass(frozen=True)
class SpoofSchedule:
    """Time profile of a spoof vector.

    ``constant`` holds ``vector``; ``ramp`` grows by ``vector`` every step of
    the attack; ``sine`` modulates ``vector`` with the given period in steps.
    With ``units="sigma"`` the vector is expressed in residual standard
    deviations and must be resolved with :meth:`in_absolute_units` first.
    """

    kind: str = "constant"
    vector: tuple = ()
    period: float = 100.0
    units: str = "abs"

    def __post_init__(self):
        if self.units not in ("abs", "sigma"):
            raise ConfigError("spoof units must be 'abs' or 'sigma'")
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown spoof schedule {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.kind == "sine" and not self.period > 0:
            raise ConfigError("sine schedule needs a positive period")

    def in_absolute_units(self, sigma):
        if self.units == "abs":
            return self
        v = np.asarray(self.vector, dtype=float) * np.asarray(sigma, dtype=float)
        return SpoofSchedule(self.kind, tuple(v.tolist()), self.period, "abs")

    def __call__(self, elapsed):
        """Spoof after ``elapsed`` attack steps (0 on the first attacked step)."""
        if self.units != "abs":
            raise ConfigError("spoof expressed in sigma units has not been resolved")
        v =np.asarray(self.vector, dtype=float)
        if self.kind == "constant":
            return v
        if self.kind == "ramp":
            return v * (elapsed + 1)
        return v * np.sin(2.0 * np.pi * elapsed / self.period)


@dataclass(frozen=True)
class AttackSpec:
    target: int
    start_step: int = 0
    end_step: int | None = None
    xi_x: SpoofSchedule = field(default_factory=SpoofSchedule)
    xi_o: tuple = ()
    remove_ids: frozenset = frozenset()
    add_ids: frozenset = frozenset()
    stealth_scale: float | None = None
    sigma: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "remove_ids", frozenset(self.remove_ids))
        object.__setattr__(self, "add_ids", frozenset(self.add_ids))
        if self.remove_ids & self.add_ids:
            raise ConfigError("remove_ids and add_ids must be disjoint")
        if self.target in self.add_ids:
            raise ConfigError("add_ids must not contain the attacked vehicle itself")
        if self.end_step is not None and self.end_step < self.start_step:
            raise ConfigError("end_step precedes start_step")
        if self.stealth_scale is not None:
            if not self.stealth_scale > 0:
                raise ConfigError("stealth_scale must be > 0")

    def resolved(self, sigma):
        """Copy with sigma-relative quantities turned into absolute ones."""
        return replace(self, xi_x=self.xi_x.in_absolute_units(sigma),
                       sigma=tuple(float(s) for s in sigma))

    def active(self, k):
        return k >= self.start_step and (self.end_step is None or k <= self.end_step)

    def state_spoof(self, k, n):
        """State offset at step ``k``; zero outside the window."""
        if not self.active(k) or len(self.xi_x.vector) == 0:
            return np.zeros(n)
        elapsed = k - self.start_step
        if self.stealth_scale is None:
            return self.xi_x(elapsed)
        if len(self.sigma) != n:
            raise ConfigError("stealth_scale needs per-element residual sigmas; call resolved()")
        return self._clipped(elapsed)

    def _clipped(self, elapsed):
        # every per-step increment of the offset limited to stealth_scale sigma
        cap = self.stealth_scale * np.asarray(self.sigma, dtype=float)
        v = np.asarray(self.xi_x.vector, dtype=float)
        if self.xi_x.kind == "constant":
            return np.clip(v, -cap, cap)
        if self.xi_x.kind == "ramp":
            return np.clip(v, -cap, cap) * (elapsed + 1)
        cache = self.__dict__.setdefault("_cum", [])
        while len(cache) <= elapsed:
            t = len(cache)
            inc = self.xi_x(t) - (self.xi_x(t - 1) if t else 0.0)
            prev = cache[-1] if cache else np.zeros_like(v)
            cache.append(prev + np.clip(inc, -cap, cap))
        return cache[elapsed]


def apply_mitm(msg, spec, k):
    """Return the broadcast as receivers see it under ``spec`` at step ``k``."""
    if msg.sender != spec.target or not spec.active(k):
        return msg
    x = msg.state_estimate + spec.state_spoof(k, msg.state_estimate.shape[0])
    obstacles = msg.obstacles
    if len(spec.xi_o) and len(obstacles):
        obstacles = obstacles + np.asarray(spec.xi_o, dtype=float)
    nbrs = (msg.neighbor_set - spec.remove_ids) | (spec.add_ids - {msg.sender})
    return Broadcast(sender=msg.sender, state_estimate=x, obstacles=obstacles,
                     neighbor_set=nbrs, step=msg.step)


def apply_attacks(msg, specs, k):
    for spec in specs:
        msg = apply_mitm(msg, spec, k)
    return msg

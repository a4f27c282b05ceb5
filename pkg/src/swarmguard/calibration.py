"""Offline Monte Carlo fit of the alarm-rate variance factor theta.

Under nominal conditions residual signs are i.i.d. fair coins, but the
alarms a CUSIGN statistic raises on them are serially correlated (an alarm
resets the statistic, so two alarms never fire back to back for tau > 1).
The MRE rate therefore does not have the plain Bernoulli variance; theta is
the ratio between what the rate really does and that formula.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consistency import alarm_rate_variance, expected_alarm_rate
from .errors import ConfigError


@dataclass(frozen=True)
class ThetaFit:
    theta: float
    stderr: float
    tau: int
    window: int
    chains: int
    steps: int
    burn_in: int
    seed: int

    def as_dict(self):
        return dict(self.__dict__)


def simulate_alarm_rates(tau, window, chains, steps, burn_in, rng):
    """Post-burn-in MRE alarm rates of ``chains`` independent nominal monitors.

    Returns an array ``(steps - burn_in, chains)``; only the positive side is
    tracked since the negative side is its mirror image.
    """
    expected = expected_alarm_rate(tau)
    s = np.zeros(chains, dtype=np.int64)
    rate = np.full(chains, expected)
    out = np.empty((steps - burn_in, chains))
    for t in range(steps):
        signs = rng.integers(0, 2, size=chains) * 2 - 1
        s = np.maximum(0, s + signs)
        alarm = s == tau
        s[alarm] = 0
        rate += (alarm - rate) / window
        if t >= burn_in:
            out[t - burn_in] = rate
    return out


def calibrate_theta(tau=2, window=20, chains=2000, steps=3000, burn_in=None, seed=0):
    """Fit theta as empirical Var[A] over the Bernoulli-formula variance.

    The standard error comes from the spread of per-chain variances, so it
    ignores the (small) correlation between a chain's early and late rates.
    """
    if burn_in is None:
        burn_in = 10 * window
    if chains < 2 or steps <= burn_in:
        raise ConfigError("calibration needs chains >= 2 and steps > burn_in")
    rng = np.random.default_rng(seed)
    rates = simulate_alarm_rates(tau, window, chains, steps, burn_in, rng)
    expected = expected_alarm_rate(tau)
    ref = alarm_rate_variance(expected, window, 1.0)
    # deviations from the known mean, not the sample mean, so short runs are not biased low
    per_chain = np.mean((rates - expected) ** 2, axis=0) / ref
    return ThetaFit(theta=float(per_chain.mean()),
                    stderr=float(per_chain.std(ddof=1) / np.sqrt(chains)),
                    tau=int(tau), window=int(window), chains=int(chains), steps=int(steps),
                    burn_in=int(burn_in), seed=int(seed))

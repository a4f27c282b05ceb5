import numpy as np
import pytest

from swarmguard.calibration import calibrate_theta, simulate_alarm_rates
from swarmguard.consistency import alarm_rate_variance, expected_alarm_rate
from swarmguard.errors import ConfigError


def exact_theta(tau, window, horizon=4000):
    """Stationary variance of the MRE rate from the alarm autocovariance.

    The statistic is a Markov chain on 0..tau-1 that returns to 0 on an
    alarm; after an alarm the chance of another one h steps later is
    1/2 * P(state tau-1 after h-1 steps from 0).
    """
    T = np.zeros((tau, tau))
    for s in range(tau):
        T[s, (s + 1) % tau] += 0.5
        T[s, max(s - 1, 0)] += 0.5
    E = expected_alarm_rate(tau)
    beta = 1.0 - 1.0 / window
    dist = np.zeros(tau)
    dist[0] = 1.0
    acc = E * (1 - E)
    for h in range(1, horizon):
        joint = E * 0.5 * dist[tau - 1]
        acc += 2 * beta ** h * (joint - E * E)
        dist = dist @ T
    var = acc / (window ** 2 * (1 - beta ** 2))
    return var / alarm_rate_variance(E, window, 1.0)


def test_exact_theta_is_one_for_independent_alarms():
    # with tau = 1 every + sign is an alarm, so alarms are i.i.d.
    assert exact_theta(1, 20) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("tau,window", [(1, 20), (2, 20), (3, 30)])
def test_monte_carlo_fit_matches_exact_theta(tau, window):
    fit = calibrate_theta(tau=tau, window=window, chains=1500, steps=2500, seed=tau)
    ref = exact_theta(tau, window)
    assert fit.theta == pytest.approx(ref, abs=4 * fit.stderr + 0.01)


def test_default_pinned_theta_is_the_calibrated_value():
    from swarmguard.scenario import MonitorParams
    assert MonitorParams().theta == pytest.approx(exact_theta(2, 20), abs=2e-3)


def test_rates_shape_and_range():
    rates = simulate_alarm_rates(2, 20, 7, 300, 100, np.random.default_rng(0))
    assert rates.shape == (200, 7)
    assert rates.min() >= 0 and rates.max() <= 1


def test_bad_calibration_setup():
    with pytest.raises(ConfigError):
        calibrate_theta(chains=1)
    with pytest.raises(ConfigError):
        calibrate_theta(steps=100, burn_in=200)


def test_fit_is_reproducible():
    assert calibrate_theta(chains=50, steps=400, seed=9) == calibrate_theta(chains=50, steps=400, seed=9)

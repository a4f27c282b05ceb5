import numpy as np
import pytest
from hypothesis import given, strategies as st

from swarmguard.dynamics import double_integrator, step_dynamics
from swarmguard.errors import ConfigError
from swarmguard.formation import HiddenParams, hidden_control
from swarmguard.signature import (SignatureMonitor, build_decay_map, detect_signature, estimate_object_position,
                                  hidden_velocity_residual, sign_switch_step, signature_bounds, signature_expired,
                                  signature_gap, signature_variance)

MODEL = double_integrator(dt=0.05)
HP = HiddenParams(k_h=0.5, gamma_h=3.0, l0_h=1.0)
DELTA_R = 3.0


def planar_decay(v_entry, heading, obj, steps):
    """Noise-free closed loop of the hidden law, integrated in the plane."""
    d = np.array([np.cos(heading), np.sin(heading)])
    x = np.concatenate([obj - DELTA_R * d, v_entry * d])
    traj = [x]
    for _ in range(steps):
        x = step_dynamics(MODEL, x, hidden_control(x, obj, HP))
        traj.append(x)
    return np.array(traj)


@pytest.fixture(scope="module")
def dm():
    return build_decay_map(MODEL, HP, DELTA_R, 0.8, v_floor=0.03)


def test_decay_map_matches_planar_integration(dm):
    obj = np.array([4.0, -1.0])
    traj = planar_decay(0.8, 0.7, obj, len(dm.speeds) - 1)
    speeds = np.hypot(traj[:, 2], traj[:, 3])
    dists = np.hypot(*(traj[:, :2] - obj).T)
    assert np.allclose(speeds, dm.speeds, atol=1e-10)
    assert np.allclose(dists, dm.distances, atol=1e-10)


def test_decay_map_range_and_monotone_segment(dm):
    s = dm.speeds[dm.seg]
    assert np.all(np.diff(s) < 0)
    assert dm.v_max == pytest.approx(s[0])
    assert dm.v_min == pytest.approx(0.03)
    assert dm.in_range(0.5) and not dm.in_range(0.01)
    assert dm.duration == np.count_nonzero(s >= 0.03)
    assert dm.remaining_steps(dm.v_max) == dm.duration
    assert dm.remaining_steps(0.02) == 0


def test_h_is_the_one_step_map(dm):
    s = dm.speeds[dm.seg]
    for t in (3, 40, 120):
        assert dm.h(s[t]) == pytest.approx(s[t + 1], abs=1e-12)


def test_floor_above_peak_is_a_config_error():
    with pytest.raises(ConfigError):
        build_decay_map(MODEL, HP, DELTA_R, 0.05, v_floor=1.0)


def test_noise_free_object_estimate_within_interpolation_tolerance(dm):
    obj = np.array([-2.0, 5.0])
    traj = planar_decay(0.8, -2.1, obj, 600)
    errs = []
    for x in traj[1:]:
        if dm.in_range(np.hypot(x[2], x[3])):
            errs.append(np.hypot(*(estimate_object_position(x[:2], x[2:], dm) - obj)))
    assert len(errs) > 100
    assert max(errs) <= 1e-3 * DELTA_R


def test_fallback_estimate_below_range(dm):
    p = estimate_object_position([1.0, 1.0], [0.001, 0.0], dm, last_direction=np.array([0.0, 1.0]))
    assert p == pytest.approx([1.0, 1.0 + HP.l0_h])
    p = estimate_object_position([1.0, 1.0], [0.0, 0.001], dm)
    assert p == pytest.approx([1.0, 2.0])
    with pytest.raises(ValueError):
        estimate_object_position([0, 0], [0, 0], dm)


def test_hidden_residual_needs_both_speeds_in_range(dm):
    assert hidden_velocity_residual(0.5, None, dm) is None
    assert hidden_velocity_residual(0.5, 0.01, dm) is None
    r = hidden_velocity_residual(0.5, 0.51, dm)
    assert r == pytest.approx(0.5 - dm.h(0.51))


def test_signature_variance_formula():
    assert signature_variance(20) == pytest.approx(1 / (4 * 39))
    with pytest.raises(ConfigError):
        signature_variance(9)
    lo, hi = signature_bounds(20, 0.01)
    assert lo < 0.5 < hi and 0.5 - lo == pytest.approx(hi - 0.5)


def test_alternating_residuals_switch_every_step():
    mon = SignatureMonitor(0, 1, window=10)
    for k in range(100):
        mon, psi = sign_switch_step(mon, (-1) ** k)
    assert psi == 1 and mon.switch_rate > 0.99


def test_persistent_sign_never_switches():
    mon = SignatureMonitor(0, 1, window=10)
    for _ in range(100):
        mon, psi = sign_switch_step(mon, 0.2)
    assert psi == 0 and mon.switch_rate < 0.01
    assert mon.dwell == 0 and not detect_signature(mon, 1)


def test_first_residual_only_seeds_sign():
    mon, psi = sign_switch_step(SignatureMonitor(0, 1), -0.1)
    assert (psi, mon.updates, mon.last_sign) == (0, 0, -1)
    mon = signature_gap(mon)
    assert mon.last_sign is None


def test_dwell_counts_after_window():
    rng = np.random.default_rng(0)
    mon = SignatureMonitor(0, 1, window=10, alpha_h=0.01)
    dwell_seen = []
    for _ in range(60):
        mon, _ = sign_switch_step(mon, rng.standard_normal())
        dwell_seen.append(mon.dwell)
    assert dwell_seen[9] == 0
    assert mon.dwell > 0


def test_expiry():
    mon = SignatureMonitor(0, 1, expires=10)
    assert not signature_expired(mon, 10) and signature_expired(mon, 11)
    assert not signature_expired(SignatureMonitor(0, 1), 10**9)


@pytest.mark.parametrize("window", [10, 20, 50])
def test_switch_rate_variance_matches_formula(window):
    # switches of i.i.d. fair signs are i.i.d. fair coins, so the MRE variance is exact
    rng = np.random.default_rng(window)
    mon = SignatureMonitor(0, 1, window=window)
    rates = []
    for r in rng.standard_normal(60_000):
        mon, _ = sign_switch_step(mon, r)
        rates.append(mon.switch_rate)
    rates = np.array(rates[10 * window:])
    assert rates.var() == pytest.approx(signature_variance(window), rel=0.1)


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=100))
def test_switch_rate_in_unit_interval(res):
    mon = SignatureMonitor(0, 1, window=10)
    for r in res:
        mon, psi = sign_switch_step(mon, r)
        assert 0 <= mon.switch_rate <= 1 and psi in (0, 1)

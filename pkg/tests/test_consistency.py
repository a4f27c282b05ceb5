import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.signal import lfilter
from scipy.stats import norm

from swarmguard.consistency import (CusignBank, CusignMonitor, DetectionBounds, alarm_rate_variance,
                                    check_consistency, cusign_step, detection_bounds,
                                    estimate_neighbor_input, expected_alarm_rate, monitor_step,
                                    mre_update, sgn, transient_matrix)
from swarmguard.errors import ConfigError
from swarmguard.formation import Broadcast, SwarmParams, primary_control


def hitting_time_oracle(tau):
    """Mean steps to absorption, written out as first-step equations.

    m(s) = 1 + 1/2 m(s+1) + 1/2 m(max(s-1, 0)), with m(tau) = 0.
    """
    A = np.zeros((tau, tau))
    b = np.ones(tau)
    for s in range(tau):
        A[s, s] += 1.0
        if s + 1 < tau:
            A[s, s + 1] -= 0.5
        A[s, max(s - 1, 0)] -= 0.5
    return np.linalg.solve(A, b)[0]


@pytest.mark.parametrize("tau", range(1, 11))
def test_expected_rate_matches_hitting_time_oracle(tau):
    assert expected_alarm_rate(tau) == pytest.approx(1.0 / hitting_time_oracle(tau), abs=1e-10)


@pytest.mark.parametrize("tau", range(1, 7))
def test_expected_rate_closed_form(tau):
    assert expected_alarm_rate(tau) == pytest.approx(1.0 / (tau * (tau + 1)), abs=1e-12)


def test_expected_rate_anchors():
    assert expected_alarm_rate(1) == pytest.approx(0.5)
    assert expected_alarm_rate(2) == pytest.approx(1 / 6)


def test_expected_rate_strictly_decreasing():
    rates = [expected_alarm_rate(t) for t in range(1, 11)]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def test_transient_matrix_rows():
    Q = transient_matrix(3)
    # the last transient state leaks its + probability into absorption
    assert Q.sum(axis=1) == pytest.approx([1.0, 1.0, 0.5])
    with pytest.raises(ConfigError):
        transient_matrix(0)


def test_mre_update_arithmetic():
    assert mre_update(0.5, 1, 10) == pytest.approx(0.55)
    with pytest.raises(ConfigError):
        mre_update(0.5, 1, 9)


def test_mre_constant_alarm_converges_geometrically():
    a, l = 0.0, 20
    for k in range(1, 50):
        a = mre_update(a, 1, l)
        assert 1 - a == pytest.approx((1 - 1 / l) ** k)


def test_mre_bernoulli_long_run_mean():
    rng = np.random.default_rng(5)
    alarms = rng.random(10**6) < 0.2
    a, l = 0.2, 20
    # the MRE is a first-order IIR filter, so run it over the stream in one go
    rates = lfilter([1 / l], [1, -(1 - 1 / l)], alarms.astype(float), zi=[(1 - 1 / l) * a])[0]
    assert rates.mean() == pytest.approx(0.2, rel=0.02)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=200), st.floats(0, 1), st.integers(10, 100))
def test_mre_stays_in_unit_interval(alarms, a0, l):
    a = a0
    for z in alarms:
        a = mre_update(a, z, l)
        assert 0.0 <= a <= 1.0


def test_variance_arithmetic():
    assert alarm_rate_variance(1 / 6, 20, 1.0) == pytest.approx((1 / 6) * (5 / 6) / 39)
    assert alarm_rate_variance(1 / 6, 20, 1.0) == pytest.approx(3.56e-3, abs=5e-6)
    assert alarm_rate_variance(0.0, 20) == 0.0
    assert alarm_rate_variance(1.0, 20) == 0.0
    with pytest.raises(ConfigError):
        alarm_rate_variance(0.2, 20, theta=0.0)


def test_detection_bounds_example():
    var = alarm_rate_variance(1 / 6, 20, 1.0)
    lo, hi = detection_bounds(1 / 6, var, 0.01)
    z = -norm.ppf(0.005)
    assert z == pytest.approx(2.576, abs=1e-3)
    assert lo == pytest.approx(1 / 6 - z * np.sqrt(var))
    assert (lo, hi) == pytest.approx((0.013, 0.320), abs=1e-3)


def test_detection_bounds_degenerate_and_clamped():
    lo, hi = detection_bounds(0.3, 0.01, 1 - 1e-12)
    assert lo == pytest.approx(0.3) and hi == pytest.approx(0.3)
    lo, hi = detection_bounds(0.5, 1.0, 0.01)
    assert (lo, hi) == (0.0, 1.0)
    with pytest.raises(ConfigError):
        detection_bounds(0.5, 0.1, 0.0)


def test_cusign_fires_and_resets_on_threshold():
    mon = CusignMonitor(0, 1, 0, tau=2)
    mon, zp, zm = cusign_step(mon, 1.0)
    assert (mon.s_plus, zp, zm) == (1, 0, 0)
    mon, zp, zm = cusign_step(mon, 0.3)
    assert (mon.s_plus, zp) == (0, 1)
    mon, zp, zm = cusign_step(mon, -1.0)
    mon, zp, zm = cusign_step(mon, -1.0)
    assert (mon.s_minus, zm) == (0, 1)


def test_sgn_tie():
    assert sgn(0.0) == 1
    assert sgn(0.0, tie=-1) == -1
    assert sgn(-2.0) == -1


@given(st.integers(1, 6), st.lists(st.floats(-1, 1), max_size=300))
def test_cusign_statistics_stay_bounded(tau, residuals):
    mon = CusignMonitor(0, 1, 0, tau=tau)
    for r in residuals:
        prev = mon
        mon, zp, zm = cusign_step(mon, r)
        assert 0 <= mon.s_plus < tau and -tau < mon.s_minus <= 0
        # a reset to zero happens exactly when an alarm fires
        reached = max(0, prev.s_plus + sgn(r)) == tau
        assert bool(zp) == reached


@pytest.mark.parametrize("tau", [1, 2])
def test_cusign_scalar_monte_carlo_rate(tau):
    rng = np.random.default_rng(tau)
    signs = rng.choice([-1.0, 1.0], size=100_000)
    mon = CusignMonitor(0, 1, 0, tau=tau)
    alarms = 0
    for s in signs:
        mon, zp, _ = cusign_step(mon, s)
        alarms += zp
    assert alarms / signs.size == pytest.approx(expected_alarm_rate(tau), rel=0.05)


@given(st.integers(1, 5), st.lists(st.lists(st.sampled_from([-1.0, 0.0, 0.5, 2.0]), min_size=3, max_size=3),
                                   min_size=1, max_size=50))
def test_cusign_array_path_matches_scalar(tau, stream):
    vec = CusignMonitor(0, 1, 0, tau=tau)
    scal = [CusignMonitor(0, 1, 0, tau=tau) for _ in range(3)]
    for row in stream:
        vec, zp, zm = cusign_step(vec, np.array(row))
        for c in range(3):
            scal[c], zps, zms = cusign_step(scal[c], row[c])
            assert (zp[c], zm[c]) == (zps, zms)
            assert (vec.s_plus[c], vec.s_minus[c]) == (scal[c].s_plus, scal[c].s_minus)


def test_check_consistency_debounce():
    b = DetectionBounds.for_test(2, 20, 1.0, 0.01)
    mon = CusignMonitor(0, 1, 0)
    assert check_consistency([mon], debounce=3)
    for _ in range(60):
        mon = monitor_step(mon, 1.0, b)
    # an all-positive stream drives A+ to 1/2 and A- to 0
    assert not check_consistency([mon], debounce=3)


def test_bank_matches_single_monitors():
    rng = np.random.default_rng(1)
    N, n = 3, 4
    bank = CusignBank(N, (0, 1, 2, 3), tau=2, window=20, theta=1.0, alpha=0.01, debounce=5)
    singles = {(i, j, q): CusignMonitor(i, j, q) for i in range(N) for j in range(N) for q in range(n)}
    b = bank.bounds
    for _ in range(300):
        mask = rng.random((N, N)) < 0.7
        r = rng.standard_normal((N, N, n)) + 0.4
        bank.update(mask, r)
        for (i, j, q), m in singles.items():
            if mask[i, j]:
                singles[(i, j, q)] = monitor_step(m, r[i, j, q], b)
    for (i, j, q), m in singles.items():
        assert bank.s_plus[i, j, q] == m.s_plus
        assert bank.rate_plus[i, j, q] == pytest.approx(m.alarm_rate_plus, abs=1e-12)
        assert bank.rate_minus[i, j, q] == pytest.approx(m.alarm_rate_minus, abs=1e-12)
        assert bank.out_plus[i, j, q] == m.outside_plus


def test_bank_frozen_when_masked_out():
    bank = CusignBank(2, (0,), debounce=5)
    before = bank.rate_plus.copy()
    bank.update(np.zeros((2, 2), bool), np.ones((2, 2, 4)))
    assert np.array_equal(bank.rate_plus, before)


def test_bank_ties_use_seeded_coin():
    def run(seed):
        bank = CusignBank(2, (0,), rng=np.random.default_rng(seed))
        for _ in range(40):
            bank.update(np.ones((2, 2), bool), np.zeros((2, 2, 4)))
        return bank.s_plus.copy(), bank.rate_plus.copy()

    a, b = run(3), run(3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_estimate_neighbor_input_reproduces_control():
    p = SwarmParams()
    msgs = {0: Broadcast(0, np.array([0.0, 0.0, 0.1, 0.0]), neighbor_set={1, 2}),
            1: Broadcast(1, np.array([2.5, 0.0, 0.0, 0.0]), neighbor_set={0}),
            2: Broadcast(2, np.array([0.0, 1.0, 0.0, 0.0]), neighbor_set={0})}
    u = estimate_neighbor_input(1, 0, msgs, (10.0, 0.0), p)
    ref = primary_control(msgs[0].state_estimate, np.array([[2.5, 0.0], [0.0, 1.0]]), np.zeros((0, 2)),
                          (10.0, 0.0), p)
    assert np.array_equal(u, ref)
    # a member the observer does not hear blocks the prediction
    assert estimate_neighbor_input(1, 0, {0: msgs[0], 1: msgs[1]}, None, p) is None

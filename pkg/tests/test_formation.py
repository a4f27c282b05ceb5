import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmguard.errors import ConfigError
from swarmguard.formation import (Broadcast, HiddenParams, SwarmParams, communication_matrix, communication_set,
                                  gabriel_matrix, gabriel_neighbors, hidden_control, primary_control,
                                  primary_control_batch, rasterize_rectangle, sense, sense_all)


def gabriel_oracle(i, ids, P, excluded=()):
    """Brute force: drop j when some witness lies strictly inside the circle on diameter (i, j).

    On integer coordinates everything below is exact: 4|p_h - m|^2 against |p_i - p_j|^2.
    """
    ids = [j for j in ids if j != i and j not in excluded]
    out = set()
    for j in ids:
        d2 = sum((P[i][c] - P[j][c]) ** 2 for c in range(2))
        inside = any(sum((2 * P[h][c] - P[i][c] - P[j][c]) ** 2 for c in range(2)) < d2
                     for h in ids if h != j)
        if not inside:
            out.add(j)
    return out


def random_integer_sets(seed, count, n_max=15, span=6):
    rng = np.random.default_rng(seed)
    grid = [(x, y) for x in range(-span, span + 1) for y in range(-span, span + 1)]
    for _ in range(count):
        n = int(rng.integers(2, n_max + 1))
        pick = rng.choice(len(grid), size=n, replace=False)
        yield [grid[k] for k in pick]


def test_gabriel_matches_oracle_on_integer_points():
    for pts in random_integer_sets(0, 300):
        P = np.array(pts, dtype=float)
        for i in range(len(pts)):
            assert gabriel_neighbors(i, range(len(pts)), P) == gabriel_oracle(i, range(len(pts)), pts)


def test_witness_on_the_circle_keeps_the_edge():
    # h sees (i, j) at exactly a right angle
    P = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0]])
    assert gabriel_neighbors(0, [1, 2], P) == {1, 2}
    P[2, 1] = 0.999
    assert gabriel_neighbors(0, [1, 2], P) == {2}


def test_excluded_vehicles_are_not_witnesses():
    P = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.1]])
    assert gabriel_neighbors(0, [1, 2], P) == {2}
    assert gabriel_neighbors(0, [1, 2], P, excluded={2}) == {1}


def test_gabriel_accepts_mapping_positions():
    pos = {3: np.array([0.0, 0.0]), 7: np.array([1.0, 0.0])}
    assert gabriel_neighbors(3, [7], pos) == {7}
    assert gabriel_neighbors(3, [], pos) == set()


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=12, unique=True),
       st.data())
def test_gabriel_symmetric_with_shared_view(pts, data):
    P = np.array(pts)
    n = len(P)
    excl = set(data.draw(st.lists(st.integers(0, n - 1), max_size=3)))
    for i in range(n):
        for j in range(n):
            if i == j or i in excl or j in excl:
                continue
            assert (j in gabriel_neighbors(i, range(n), P, excl)) == (i in gabriel_neighbors(j, range(n), P, excl))


@settings(max_examples=100)
@given(st.integers(2, 12), st.integers(0, 10**6))
def test_gabriel_matrix_matches_per_vehicle(n, seed):
    rng = np.random.default_rng(seed)
    own = rng.uniform(-5, 5, (n, 2))
    pub = own + rng.normal(0, 0.3, (n, 2)) * (rng.random((n, 1)) < 0.3)
    cand = rng.random((n, n)) < 0.7
    G = gabriel_matrix(own, pub, cand)
    for i in range(n):
        pos = {j: pub[j] for j in range(n)}
        pos[i] = own[i]
        assert set(np.flatnonzero(G[i])) == gabriel_neighbors(i, np.flatnonzero(cand[i]), pos)


def test_communication_range_is_inclusive():
    P = np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 0.5]])
    assert communication_set(P, 0, 4.0) == {1}
    adj = communication_matrix(P, 4.0)
    assert adj[0, 1] and adj[1, 0] and not adj[0, 2]
    assert not adj.diagonal().any()


def test_sensing_range_is_inclusive():
    obs, objs = sense([0, 0], [[3.0, 0.0], [3.0, 0.1]], [[0.0, -3.0]], 3.0)
    assert obs.tolist() == [[3.0, 0.0]]
    assert objs.tolist() == [0]


def test_sense_all_matches_sense():
    rng = np.random.default_rng(2)
    P, O, X = rng.uniform(0, 10, (6, 2)), rng.uniform(0, 10, (30, 2)), rng.uniform(0, 10, (3, 2))
    obs, objs = sense_all(P, O, X, 2.5)
    for i in range(6):
        o, x = sense(P[i], O, X, 2.5)
        assert np.array_equal(obs[i], o) and np.array_equal(objs[i], x)


def test_primary_control_hand_case():
    p = SwarmParams(k_v=2.0, k_g=0.5, l0_v=2.0, gamma_v=1.5)
    own = np.array([0.0, 0.0, 1.0, 0.0])
    # neighbour at 3 m pulls with 2 * (3 - 2) = 2 along +x; goal pulls 0.5 * (0, 4)
    u = primary_control(own, np.array([[3.0, 0.0]]), np.zeros((0, 2)), (0.0, 4.0), p)
    assert u == pytest.approx([2.0 - 1.5, 2.0])


def test_obstacle_within_rest_length_pushes_away():
    p = SwarmParams(k_o=1.0, l0_o=3.0, k_g=0.0)
    u = primary_control(np.zeros(4), np.zeros((0, 2)), np.array([[1.0, 0.0]]), None, p)
    assert u == pytest.approx([-2.0, 0.0])


def test_coincident_points_exert_no_force():
    p = SwarmParams(k_g=0.0)
    u = primary_control(np.zeros(4), np.array([[0.0, 0.0]]), np.zeros((0, 2)), None, p)
    assert np.array_equal(u, np.zeros(2))


def test_saturation():
    p = SwarmParams(k_g=1.0, max_accel=1.0)
    u = primary_control(np.zeros(4), np.zeros((0, 2)), np.zeros((0, 2)), (30.0, 40.0), p)
    assert np.hypot(*u) == pytest.approx(1.0)
    assert u == pytest.approx([0.6, 0.8])


@settings(max_examples=100)
@given(st.integers(1, 10), st.integers(0, 10**6), st.booleans())
def test_batch_control_matches_single(n, seed, as_matrix):
    rng = np.random.default_rng(seed)
    p = SwarmParams(max_accel=None if seed % 2 else 3.0)
    X = rng.uniform(-4, 4, (n, 4))
    S = rng.random((n, n)) < 0.5
    np.fill_diagonal(S, False)
    obs = [rng.uniform(-4, 4, (int(rng.integers(0, 4)), 2)) for _ in range(n)]
    sets = S if as_matrix else [set(np.flatnonzero(r)) for r in S]
    U = primary_control_batch(X, sets, obs, (5.0, 0.0), p)
    for j in range(n):
        ref = primary_control(X[j], X[np.flatnonzero(S[j]), :2], obs[j], (5.0, 0.0), p)
        assert np.allclose(U[j], ref, atol=1e-12)


def test_hidden_control_rest_point_and_damping():
    hp = HiddenParams(k_h=1.0, gamma_h=3.0, l0_h=1.0)
    assert np.allclose(hidden_control(np.array([1.0, 0.0, 0.0, 0.0]), (0.0, 0.0), hp), 0.0)
    u = hidden_control(np.array([2.0, 0.0, 0.5, 0.0]), (0.0, 0.0), hp)
    assert u == pytest.approx([-1.0 - 1.5, 0.0])


def test_params_validation_quotes_the_damping_condition():
    with pytest.raises(ConfigError, match="damping coefficients that satisfy gamma_v > 0"):
        SwarmParams(gamma_v=0.0)
    with pytest.raises(ConfigError):
        SwarmParams(delta_c=0.0)
    with pytest.raises(ConfigError):
        HiddenParams(gamma_h=0.0)
    with pytest.raises(ConfigError):
        HiddenParams(k_h=2.0, gamma_h=1.5).check_distinct(SwarmParams(k_v=2.0, gamma_v=1.5))


def test_broadcast_rejects_self_neighbour():
    with pytest.raises(ValueError):
        Broadcast(1, np.zeros(4), neighbor_set={1})
    a = Broadcast(0, np.zeros(4), neighbor_set=[2])
    assert a == Broadcast(0, np.zeros(4), neighbor_set={2})


def test_rasterized_rectangle_boundary():
    pts = rasterize_rectangle(0, 0, 4, 2, 1.0)
    assert len(pts) == 2 * 5 + 2 * 1
    on_edge = (np.isclose(pts[:, 0], 0) | np.isclose(pts[:, 0], 4) | np.isclose(pts[:, 1], 0)
               | np.isclose(pts[:, 1], 2))
    assert on_edge.all()
    assert len(np.unique(pts, axis=0)) == len(pts)
    with pytest.raises(ConfigError):
        rasterize_rectangle(0, 0, 0, 1, 0.1)

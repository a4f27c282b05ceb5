"""Virtual spring-damper formation control and proximity graphs.

All geometry is planar.  Positions are ``(2,)`` arrays; collections of
positions are ``(k, 2)`` arrays.  Sums over neighbours run in the order the
caller supplies them, so callers that need bit-identical results (the
consistency monitor re-evaluates other vehicles' inputs) must pass neighbours
in a canonical order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SwarmParams:
    k_v: float = 2.0
    k_o: float = 1.0
    k_g: float = 0.05
    l0_v: float = 2.0
    l0_o: float = 1.5
    gamma_v: float = 1.5
    delta_c: float = 4.0
    delta_r: float = 1.5
    max_accel: float | None = None

    def __post_init__(self):
        if not self.gamma_v > 0:
            raise ConfigError(
                "gamma_v must be > 0: the mesh needs damping coefficients that satisfy gamma_v > 0")
        for name in ("delta_c", "delta_r", "l0_v", "l0_o"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("k_v", "k_o", "k_g"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.max_accel is not None and not self.max_accel > 0:
            raise ConfigError("max_accel must be > 0 when set")


@dataclass(frozen=True)
class HiddenParams:
    k_h: float = 1.0
    gamma_h: float = 3.0
    l0_h: float = 1.0

    def __post_init__(self):
        if not self.gamma_h > 0:
            raise ConfigError("gamma_h must be > 0")
        if self.k_h < 0 or not self.l0_h > 0:
            raise ConfigError("k_h must be >= 0 and l0_h > 0")

    def check_distinct(self, params):
        """The signature is only identifiable if it differs from the primary mesh."""
        if self.k_h == params.k_v and self.gamma_h == params.gamma_v:
            raise ConfigError("hidden model must differ from the primary model (k_h != k_v or gamma_h != gamma_v)")


@dataclass(eq=False)
class Broadcast:
    sender: int
    state_estimate: np.ndarray
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    neighbor_set: frozenset = frozenset()
    step: int = 0

    def __post_init__(self):
        self.neighbor_set = frozenset(self.neighbor_set)
        if self.sender in self.neighbor_set:
            raise ValueError(f"neighbor set of vehicle {self.sender} contains itself")

    @property
    def position(self):
        return self.state_estimate[:2]

    @property
    def velocity(self):
        return self.state_estimate[2:4]

    def __eq__(self, other):
        if not isinstance(other, Broadcast):
            return NotImplemented
        return (self.sender == other.sender and self.step == other.step
                and self.neighbor_set == other.neighbor_set
                and np.array_equal(self.state_estimate, other.state_estimate)
                and np.array_equal(self.obstacles, other.obstacles))


def communication_set(positions, i, delta_c):
    """Ids within broadcast range of vehicle ``i`` (inclusive boundary)."""
    P = np.asarray(positions, dtype=float)
    d = np.hypot(P[:, 0] - P[i, 0], P[:, 1] - P[i, 1])
    mask = d <= delta_c
    mask[i] = False
    return set(np.flatnonzero(mask).tolist())


def communication_matrix(positions, delta_c):
    """Boolean ``(N, N)`` adjacency of the communication graph, no self loops."""
    P = np.asarray(positions, dtype=float)
    d = P[:, None, :] - P[None, :, :]
    adj = np.hypot(d[..., 0], d[..., 1]) <= delta_c
    adj.flat[::len(P) + 1] = False
    return adj


def gabriel_neighbors(i, candidates, positions, excluded=()):
    """Gabriel-rule neighbour set of vehicle ``i``.

    Parameters
    ----------
    i : int
        Observing vehicle.
    candidates : iterable of int
        Vehicles in communication range of ``i``.
    positions : mapping or array
        Position estimates indexed by vehicle id; must cover ``i`` and every
        candidate.
    excluded : iterable of int
        Vehicles deemed compromised.  They are dropped both as neighbours and
        as witnesses.

    Notes
    -----
    ``j`` is kept when every witness ``h`` sees the segment ``(i, j)`` under
    an angle of at most ``pi/2``, i.e. ``(p_i - p_h) . (p_j - p_h) >= 0``.
    A witness exactly on the diameter circle therefore does not remove the
    edge.
    """
    excluded = set(excluded)
    ids = sorted(set(candidates) - excluded - {i})
    if not ids:
        return set()
    pi = np.asarray(positions[i], dtype=float)
    P = np.array([positions[j] for j in ids], dtype=float)
    ax = pi[0] - P[:, 0]          # p_i - p_h, per witness h
    ay = pi[1] - P[:, 1]
    bx = P[:, None, 0] - P[None, :, 0]   # p_j - p_h, [j, h]
    by = P[:, None, 1] - P[None, :, 1]
    dots = ax[None, :] * bx + ay[None, :] * by
    np.fill_diagonal(dots, 0.0)
    keep = np.all(dots >= 0.0, axis=1)
    return {ids[k] for k in np.flatnonzero(keep)}


def gabriel_matrix(own_positions, positions, candidates):
    """Gabriel rule for every observer at once.

    Parameters
    ----------
    own_positions : array ``(N, 2)``
        Each observer's position as it knows it.
    positions : array ``(N, 2)``
        Positions as received from the others.
    candidates : bool array ``(N, N)``
        ``candidates[i, j]`` when ``j`` is heard by ``i`` and not excluded by
        ``i``.  Non-candidates are not witnesses either.

    Returns
    -------
    bool array ``(N, N)``
        Row ``i`` is :func:`gabriel_neighbors` of ``i``.
    """
    Q = np.asarray(own_positions, dtype=float)
    P = np.asarray(positions, dtype=float)
    n = len(P)
    cand = np.array(candidates, dtype=bool)
    cand.flat[::n + 1] = False
    a = Q[:, None, :] - P[None, :, :]          # [i, h]
    b = P[:, None, :] - P[None, :, :]          # [j, h]
    prod = a[:, None] * b[None]
    dots = prod[..., 0] + prod[..., 1]         # [i, j, h]; zero at h == j
    ok = (dots >= 0.0) | ~cand[:, None, :]
    return cand & ok.all(axis=2)


def _spring_terms(origin, others, k, rest):
    """Sum of ``k (l - rest) d`` with ``d`` the unit vector from origin to each other point."""
    if len(others) == 0:
        return np.zeros(2)
    d = np.asarray(others, dtype=float) - origin
    lengths = np.hypot(d[:, 0], d[:, 1])
    # coincident points exert no force
    safe = np.where(lengths > 0, lengths, 1.0)
    scale = np.where(lengths > 0, k * (lengths - rest) / safe, 0.0)
    return scale @ d


def _saturate(u, cap):
    if cap is None:
        return u
    norm = np.hypot(u[0], u[1])
    if norm > cap:
        return u * (cap / norm)
    return u


def primary_control(own_state, neighbor_positions, obstacles, goal, params):
    """Spring-damper input of the primary formation mesh.

    ``neighbor_positions`` is a ``(k, 2)`` array of the Gabriel neighbours'
    position estimates.  Obstacle springs use the same restoring form as
    vehicle springs, so with ``l0_o`` at or beyond the sensing range they only
    ever push away.  ``goal`` may be ``None``.
    """
    p = own_state[:2]
    v = own_state[2:4]
    u = _spring_terms(p, neighbor_positions, params.k_v, params.l0_v)
    u = u + _spring_terms(p, obstacles, params.k_o, params.l0_o)
    if goal is not None:
        u = u + params.k_g * (np.asarray(goal, dtype=float) - p)
    u = u - params.gamma_v * v
    return _saturate(u, params.max_accel)


def _accumulate(u, origins, owners, others, k, rest):
    if len(owners) == 0:
        return
    d = others - origins[owners]
    lengths = np.hypot(d[:, 0], d[:, 1])
    scale = np.divide(k * (lengths - rest), lengths, out=np.zeros_like(lengths), where=lengths > 0)
    n = len(u)
    u[:, 0] += np.bincount(owners, scale * d[:, 0], minlength=n)
    u[:, 1] += np.bincount(owners, scale * d[:, 1], minlength=n)


def primary_control_batch(states, neighbor_sets, obstacles, goal, params):
    """:func:`primary_control` for a whole swarm from broadcast data.

    ``neighbor_sets`` is either a boolean ``(N, N)`` matrix or a sequence
    whose entry ``j`` lists the ids whose positions (rows of ``states``)
    vehicle ``j`` attaches to.  ``obstacles[j]`` holds ``j``'s obstacle points.
    """
    X = np.asarray(states, dtype=float)
    P = X[:, :2]
    n = len(X)
    u = np.zeros((n, 2))
    if isinstance(neighbor_sets, np.ndarray):
        src, dst = np.nonzero(neighbor_sets)
    else:
        src = np.fromiter((j for j, S in enumerate(neighbor_sets) for _ in S), dtype=np.intp)
        dst = np.fromiter((h for S in neighbor_sets for h in sorted(S)), dtype=np.intp)
    _accumulate(u, P, src, P[dst], params.k_v, params.l0_v)
    counts = [len(o) for o in obstacles]
    if sum(counts):
        owners = np.repeat(np.arange(n), counts)
        _accumulate(u, P, owners, np.vstack([np.reshape(o, (-1, 2)) for o in obstacles]),
                    params.k_o, params.l0_o)
    if goal is not None:
        u += params.k_g * (np.asarray(goal, dtype=float) - P)
    u -= params.gamma_v * X[:, 2:4]
    if params.max_accel is not None:
        norm = np.hypot(u[:, 0], u[:, 1])
        over = norm > params.max_accel
        u[over] *= (params.max_accel / norm[over])[:, None]
    return u


def hidden_control(own_state, object_pos, hp, obstacles=None, params=None):
    """Hidden spring-damper input toward a discovered object.

    Neighbour and goal springs are detached.  Obstacle springs stay only when
    both ``obstacles`` and ``params`` are given.
    """
    p = own_state[:2]
    v = own_state[2:4]
    u = _spring_terms(p, np.asarray(object_pos, dtype=float)[None, :], hp.k_h, hp.l0_h)
    if obstacles is not None and params is not None:
        u = u + _spring_terms(p, obstacles, params.k_o, params.l0_o)
    u = u - hp.gamma_h * v
    return _saturate(u, None if params is None else params.max_accel)


def sense(own_position, obstacles, objects, delta_r):
    """Obstacle points and object indices within sensing range (inclusive).

    Returns ``(obstacles_in_range, object_indices_in_range)``.
    """
    p = np.asarray(own_position, dtype=float)
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    objects = np.asarray(objects, dtype=float).reshape(-1, 2)
    do = np.hypot(obstacles[:, 0] - p[0], obstacles[:, 1] - p[1])
    dp = np.hypot(objects[:, 0] - p[0], objects[:, 1] - p[1])
    return obstacles[do <= delta_r], np.flatnonzero(dp <= delta_r)


def sense_all(positions, obstacles, objects, delta_r):
    """:func:`sense` for every row of ``positions`` at once; returns two lists."""
    P = np.asarray(positions, dtype=float).reshape(-1, 2)
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    objects = np.asarray(objects, dtype=float).reshape(-1, 2)
    if not len(obstacles) and not len(objects):
        return [obstacles] * len(P), [np.zeros(0, dtype=np.intp)] * len(P)
    near_o = np.hypot(P[:, None, 0] - obstacles[None, :, 0], P[:, None, 1] - obstacles[None, :, 1]) <= delta_r
    near_p = np.hypot(P[:, None, 0] - objects[None, :, 0], P[:, None, 1] - objects[None, :, 1]) <= delta_r
    return [obstacles[m] for m in near_o], [np.flatnonzero(m) for m in near_p]


def rasterize_rectangle(xmin, ymin, xmax, ymax, spacing):
    """Boundary points of an axis-aligned rectangle at roughly ``spacing`` apart."""
    if xmax <= xmin or ymax <= ymin:
        raise ConfigError("rectangle needs xmax > xmin and ymax > ymin")
    if not spacing > 0:
        raise ConfigError("spacing must be > 0")
    nx = max(1, int(np.ceil((xmax - xmin) / spacing)))
    ny = max(1, int(np.ceil((ymax - ymin) / spacing)))
    xs = np.linspace(xmin, xmax, nx + 1)
    ys = np.linspace(ymin, ymax, ny + 1)
    pts = [(x, ymin) for x in xs] + [(x, ymax) for x in xs]
    pts += [(xmin, y) for y in ys[1:-1]] + [(xmax, y) for y in ys[1:-1]]
    return np.array(pts, dtype=float)

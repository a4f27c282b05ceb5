"""Synchronous, deterministic swarm simulation.

Every step runs the same round for all vehicles: estimate, compose and
broadcast, tamper in flight, select Gabriel neighbours from what was heard,
update the consistency and signature monitors, switch modes and actuate.
Decisions only ever read the current step's broadcasts and the vehicle's own
sensors; ground truth of other vehicles is used solely to decide who is in
radio and sensor range.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .adversary import apply_attacks
from .consistency import CusignBank
from .dynamics import residual_stds, steady_state
from .errors import InvariantViolation
from .formation import (Broadcast, communication_matrix, gabriel_matrix, hidden_control, primary_control,
                        primary_control_batch, sense_all)
from .signature import (SignatureMonitor, build_decay_map, detect_signature, estimate_object_position,
                        hidden_velocity_residual, sign_switch_step, signature_expired)

log = logging.getLogger(__name__)

# SeedSequence spawn-key namespaces: plant and sensor noise, monitor tie coins, link loss
_NOISE_STREAM, _MONITOR_STREAM, _NETWORK_STREAM = 0, 1, 2


class Mode(IntEnum):
    PRIMARY = 0
    HIDDEN_DISCOVERER = 1
    HIDDEN_FOLLOWER = 2


@dataclass(frozen=True)
class Percepts:
    sensed_objects: tuple = ()
    signature_estimate: np.ndarray | None = None
    task_complete: bool = False


def mode_transition(mode, percepts):
    """Next control mode of one vehicle given this step's percepts."""
    if mode == Mode.PRIMARY:
        if percepts.sensed_objects:
            return Mode.HIDDEN_DISCOVERER
        if percepts.signature_estimate is not None:
            return Mode.HIDDEN_FOLLOWER
        return Mode.PRIMARY
    if percepts.task_complete:
        return Mode.PRIMARY
    return mode


@dataclass(eq=False)
class VehicleAgent:
    """Per-vehicle decision state.  ``estimate`` is a row view of the world's estimate array."""

    id: int
    estimate: np.ndarray
    mode: Mode = Mode.PRIMARY
    compromised: set = field(default_factory=set)
    trusted: dict = field(default_factory=dict)
    neighbors: set = field(default_factory=set)
    excluded: frozenset = frozenset()
    signature_monitors: dict = field(default_factory=dict)
    decay_maps: dict = field(default_factory=dict)
    last_direction: dict = field(default_factory=dict)
    object_estimate: np.ndarray | None = None
    target_object: int | None = None
    completed_objects: set = field(default_factory=set)
    completed_sites: list = field(default_factory=list)
    task_dwell: int = 0
    u: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def site_done(self, p, radius):
        """Whether ``p`` lies within ``radius`` of a task this vehicle already finished."""
        return any(np.hypot(*(p - q)) <= radius for q in self.completed_sites)

    def hidden_target(self, objects):
        if self.mode == Mode.HIDDEN_DISCOVERER:
            return objects[self.target_object]
        if self.mode == Mode.HIDDEN_FOLLOWER:
            return self.object_estimate
        return None


@dataclass
class Event:
    step: int
    kind: str
    observer: int = -1
    target: int = -1
    x: float = float("nan")
    y: float = float("nan")
    value: float = float("nan")


class World:
    """Complete simulation state for one scenario and seed.

    Estimates, true states and inputs live in ``(N, n)`` arrays so the
    linear parts of a step run for the whole swarm at once.
    """

    def __init__(self, scn):
        self.scn = scn
        self.model = scn.noise.model()
        self.steady = steady_state(self.model)
        self.sigma_r = residual_stds(self.steady.gain, self.steady.meas_resid_cov)
        self.attacks = tuple(a.resolved(self.sigma_r) for a in scn.attacks)
        self.params = scn.swarm
        self.hp = scn.hidden
        self.goal = None if scn.goal is None else np.asarray(scn.goal, dtype=float)
        self.objects = np.asarray(scn.objects, dtype=float).reshape(-1, 2)
        self.obstacles = scn.obstacle_points()
        N, n = scn.n_vehicles, self.model.n
        self.N = N
        self.k = 0
        self.rng = np.random.default_rng(np.random.SeedSequence(scn.seed, spawn_key=(_NOISE_STREAM,)))
        self.x_true = np.array(scn.initial_states, dtype=float)
        L = np.linalg.cholesky(self.steady.post_cov + 1e-300 * np.eye(n))
        self.x_hat = self.x_true + self.rng.standard_normal((N, n)) @ L.T
        self.u = np.zeros((N, self.model.B.shape[1]))
        self.agents = [VehicleAgent(id=i, estimate=self.x_hat[i]) for i in range(N)]
        mon = scn.monitor
        self.bank = CusignBank(
            N, mon.elements, tau=mon.tau, window=mon.window, theta=mon.theta, alpha=mon.alpha,
            debounce=mon.debounce,
            rng=np.random.default_rng(np.random.SeedSequence(scn.seed, spawn_key=(_MONITOR_STREAM,))))
        self.net_rng = np.random.default_rng(np.random.SeedSequence(scn.seed, spawn_key=(_NETWORK_STREAM,)))
        self.pred = np.zeros((N, N, n))
        self.has_pred = np.zeros((N, N), dtype=bool)
        self.residuals = None
        self.monitored = np.zeros((N, N), dtype=bool)
        self.eye = np.eye(N, dtype=bool)
        self._decay_cache = {}
        self._meas_std = np.sqrt(np.diag(self.model.meas_noise_cov))
        self._proc_std = np.sqrt(np.diag(self.model.proc_noise_cov))
        self.events = []
        self.goal_arrival_step = None

    # ------------------------------------------------------------------
    def decay_map(self, v_entry):
        v = round(min(float(v_entry), self.scn.monitor.cruise_speed_cap), 2)
        dm = self._decay_cache.get(v)
        if dm is None:
            dm = build_decay_map(self.model, self.hp, self.params.delta_r, v,
                                 v_floor=self.scn.monitor.v_floor)
            self._decay_cache[v] = dm
        return dm

    def _emit(self, kind, observer=-1, target=-1, pos=None, value=float("nan")):
        x, y = (float("nan"), float("nan")) if pos is None else (float(pos[0]), float(pos[1]))
        ev = Event(self.k, kind, observer, target, x, y, float(value))
        self.events.append(ev)
        return ev


def _ids(row):
    return row.nonzero()[0].tolist()


def _publish(world, own_S, sensed_obs):
    """Apply in-flight tampering; returns public states, neighbour masks, obstacles and the tampered flags."""
    k, N = world.k, world.N
    active = sorted({s.target for s in world.attacks if s.active(k)})
    if not active:
        return world.x_hat.copy(), own_S, sensed_obs, np.zeros(N, dtype=bool)
    X_pub = world.x_hat.copy()
    S_pub = own_S.copy()
    obs_pub = list(sensed_obs)
    tampered = np.zeros(N, dtype=bool)
    for j in active:
        msg = Broadcast(j, world.x_hat[j].copy(), sensed_obs[j], frozenset(_ids(own_S[j])), k)
        pub = apply_attacks(msg, world.attacks, k)
        if pub is msg:
            continue
        tampered[j] = True
        X_pub[j] = pub.state_estimate
        S_pub[j] = False
        S_pub[j, sorted(pub.neighbor_set)] = True
        obs_pub[j] = pub.obstacles
    return X_pub, S_pub, obs_pub, tampered


def run_step(world, record=True):
    """Advance ``world`` by one synchronous round.

    Returns the trace record of the step, or ``None`` with ``record=False``.
    """
    scn, model, params = world.scn, world.model, world.params
    N, k, agents = world.N, world.k, world.agents
    mon_cfg = scn.monitor
    Ad, Bd = model.discrete
    C, K = model.C, world.steady.gain
    step_events_start = len(world.events)

    # 1. estimation (the initial estimate already is the step-0 posterior)
    if k > 0:
        y = world.x_true @ C.T + world.rng.standard_normal((N, model.n_sensors)) * world._meas_std
        prior = world.x_hat @ Ad.T + world.u @ Bd.T
        world.x_hat[:] = prior + (y - prior @ C.T) @ K.T

    for spec in world.attacks:
        if k == spec.start_step:
            world._emit("attack_on", target=spec.target)
        if spec.end_step is not None and k == spec.end_step + 1:
            world._emit("attack_off", target=spec.target)

    # 2. sensing from true positions
    sensed_obs, sensed_objs = sense_all(world.x_true[:, :2], world.obstacles, world.objects, params.delta_r)

    # 3. who hears whom
    heard = communication_matrix(world.x_true[:, :2], params.delta_c)
    if scn.network.loss_prob > 0:
        heard &= world.net_rng.random((N, N)) >= scn.network.loss_prob

    # 4. two-phase broadcast: positions first, then neighbour sets built from them.
    # Tampering never depends on the neighbour set, so the draft positions equal
    # the final public ones.
    X_draft, _, _, _ = _publish(world, np.zeros((N, N), dtype=bool), sensed_obs)
    excluded = np.zeros((N, N), dtype=bool)
    for a in agents:
        if a.compromised:
            excluded[a.id, sorted(a.compromised)] = True
        # verdicts reached later in this round take effect at the next selection
        a.excluded = frozenset(a.compromised)
    own_S = gabriel_matrix(world.x_hat[:, :2], X_draft[:, :2], heard & ~excluded)
    rows, cols = own_S.nonzero()
    for a in agents:
        a.neighbors = set()
    for i, j in zip(rows.tolist(), cols.tolist()):
        agents[i].neighbors.add(j)
    X_pub, S_pub, obs_pub, tampered = _publish(world, own_S, sensed_obs)

    # input every vehicle should apply according to its public broadcast; an
    # observer reproduces it exactly unless its own broadcast is tampered and
    # part of the target's neighbour set
    U_shared = primary_control_batch(X_pub, S_pub, obs_pub, world.goal, params)

    record_monitors = None
    record_signature = {}
    follow_requests = {}
    if mon_cfg.enabled:
        # 5. consistency monitors
        residuals = X_pub[None, :, :] - world.pred
        world.residuals = residuals
        mask = own_S & world.has_pred
        for a in agents:
            if a.trusted:
                mask[a.id, sorted(a.trusted)] = False
        bank = world.bank
        world.monitored = mask
        flagged = bank.update(mask, residuals) & mask
        if record:
            record_monitors = {"pairs": np.argwhere(mask), "A_plus": bank.rate_plus[mask],
                               "A_minus": bank.rate_minus[mask]}
        for i, j in zip(*np.nonzero(flagged)) if flagged.any() else ():
            i, j = int(i), int(j)
            a = agents[i]
            a.compromised.add(j)
            world._emit("isolate", observer=i, target=j)
            speed = float(np.hypot(*X_pub[j, 2:4]))
            dm = world.decay_map(speed)
            if dm.remaining_steps(speed) < mon_cfg.watch_steps:
                # too little decay left to ever confirm; stays isolated without a check
                continue
            a.decay_maps[j] = dm
            a.signature_monitors[j] = SignatureMonitor(
                i, j, window=mon_cfg.window, alpha_h=mon_cfg.signature_alpha, active_since=k,
                expires=k + dm.duration + mon_cfg.window + mon_cfg.dwell)
            world._emit("signature_watch", observer=i, target=j)

        # 6. signature monitors on isolated vehicles
        for a in agents:
            i = a.id
            for j in sorted(a.signature_monitors):
                sm = a.signature_monitors[j]
                if signature_expired(sm, k):
                    del a.signature_monitors[j]
                    del a.decay_maps[j]
                    world._emit("signature_expired", observer=i, target=j)
                    continue
                if not heard[i, j]:
                    a.signature_monitors[j] = replace(sm, last_sign=None, last_speed=None)
                    continue
                v_j = X_pub[j, 2:4]
                speed = float(np.hypot(v_j[0], v_j[1]))
                if speed > 0:
                    a.last_direction[j] = v_j / speed
                dm = a.decay_maps[j]
                r = hidden_velocity_residual(speed, sm.last_speed, dm)
                if r is None:
                    sm = replace(sm, last_sign=None, last_speed=speed)
                else:
                    sm, _ = sign_switch_step(sm, r)
                    sm = replace(sm, last_speed=speed)
                a.signature_monitors[j] = sm
                record_signature[(i, j)] = sm.switch_rate
                if detect_signature(sm, mon_cfg.dwell):
                    p_hat = estimate_object_position(X_pub[j, :2], v_j, dm, a.last_direction.get(j))
                    err = float("nan")
                    if len(world.objects):
                        err = float(np.min(np.hypot(*(world.objects - p_hat).T)))
                    world._emit("signature", observer=i, target=j, pos=p_hat, value=err)
                    world._emit("signature_latency", observer=i, target=j, value=k - sm.active_since)
                    a.compromised.discard(j)
                    a.trusted[j] = 0
                    del a.signature_monitors[j]
                    del a.decay_maps[j]
                    bank.reset(i, j)
                    if not a.site_done(p_hat, params.delta_r):
                        follow_requests.setdefault(i, p_hat)

        # trusted vehicles rejoin monitoring once seen to stop and then leave
        for a in agents:
            i = a.id
            for j in sorted(a.trusted):
                if not heard[i, j]:
                    continue
                speed = float(np.hypot(*X_pub[j, 2:4]))
                if speed < mon_cfg.v_floor:
                    a.trusted[j] += 1
                elif a.trusted[j] >= scn.mission.t_dwell:
                    del a.trusted[j]
                    bank.reset(i, j)
                    world._emit("release", observer=i, target=j)

        # 7. predictions for the next step.  Observer i can evaluate j's input
        # when it hears j and every member of j's advertised neighbour set.
        deaf = ~(heard | world.eye)
        if deaf.any():
            missing = S_pub.astype(np.int64) @ deaf.T.astype(np.int64)     # [j, i]
            avail = heard & (missing.T == 0)
        else:
            avail = heard
        world.pred[:] = (X_pub @ Ad.T + U_shared @ Bd.T)[None, :, :]
        for i in np.flatnonzero(tampered) if tampered.any() else ():
            for j in np.flatnonzero(avail[i] & S_pub[:, i]):
                # i's own view of itself differs from what j was told
                nbr = [world.x_hat[h, :2] if h == i else X_pub[h, :2] for h in _ids(S_pub[j])]
                u = primary_control(X_pub[j], np.array(nbr), obs_pub[j], world.goal, params)
                world.pred[i, j] = Ad @ X_pub[j] + Bd @ u
        world.has_pred[:] = avail

    # 8. mode transitions
    eps_d = scn.mission.eps_d_frac * world.hp.l0_h
    for a in agents:
        i = a.id
        if a.mode == Mode.PRIMARY and not len(sensed_objs[i]) and i not in follow_requests:
            continue
        fresh = tuple(int(o) for o in sensed_objs[i] if int(o) not in a.completed_objects)
        task_complete = False
        if a.mode != Mode.PRIMARY:
            target = a.hidden_target(world.objects)
            dist = float(np.hypot(*(a.estimate[:2] - target)))
            speed = float(np.hypot(*a.estimate[2:4]))
            if abs(dist - world.hp.l0_h) <= eps_d and speed < scn.mission.eps_v:
                a.task_dwell += 1
            else:
                a.task_dwell = 0
            task_complete = a.task_dwell >= scn.mission.t_dwell
        percepts = Percepts(fresh, follow_requests.get(i), task_complete)
        new_mode = mode_transition(a.mode, percepts)
        if new_mode == a.mode:
            continue
        if new_mode == Mode.HIDDEN_DISCOVERER:
            d = np.hypot(*(world.objects[list(fresh)] - world.x_true[i, :2]).T)
            a.target_object = fresh[int(np.argmin(d))]
            world._emit("discover", observer=i, target=a.target_object, pos=world.objects[a.target_object])
        elif new_mode == Mode.HIDDEN_FOLLOWER:
            a.object_estimate = np.asarray(percepts.signature_estimate, dtype=float)
            world._emit("follow", observer=i, pos=a.object_estimate)
        else:
            a.completed_sites.append(a.hidden_target(world.objects).copy())
            a.completed_objects.update(int(o) for o in sensed_objs[i])
            if a.target_object is not None:
                a.completed_objects.add(a.target_object)
            a.object_estimate = None
            a.target_object = None
            a.task_dwell = 0
            world._emit("task_complete", observer=i)
        a.mode = new_mode

    # 9. control and actuation.  An untampered vehicle applies the shared
    # evaluation, so nominal predictions match its input bit for bit.
    U = U_shared.copy()
    for a in agents:
        i = a.id
        if a.mode == Mode.PRIMARY:
            if tampered[i]:
                nbr = X_pub[_ids(own_S[i]), :2]
                U[i] = primary_control(world.x_hat[i], nbr, sensed_obs[i], world.goal, params)
        else:
            obs = sensed_obs[i] if scn.mission.obstacle_springs_in_hidden else None
            U[i] = hidden_control(a.estimate, a.hidden_target(world.objects), world.hp, obs,
                                  params if obs is not None else None)
        if a.neighbors & a.excluded:
            raise InvariantViolation(f"vehicle {i} controls against isolated vehicles at step {k}")
    if not np.isfinite(U).all():
        bad = int(np.flatnonzero(~np.isfinite(U).all(axis=1))[0])
        raise InvariantViolation(f"non-finite control for vehicle {bad} at step {k}")
    world.u[:] = U
    for a in agents:
        a.u = world.u[a.id]

    rec = None
    if record:
        rec = {
            "step": k,
            "x": world.x_true.copy(),
            "x_hat": world.x_hat.copy(),
            "u": world.u.copy(),
            "mode": [int(a.mode) for a in agents],
            "S": [sorted(a.neighbors) for a in agents],
            "R": [sorted(a.compromised) for a in agents],
            "monitors": record_monitors,
            "signature": record_signature,
            "events": world.events[step_events_start:],
        }

    w = world.rng.standard_normal((N, model.n)) * world._proc_std
    world.x_true[:] = world.x_true @ Ad.T + world.u @ Bd.T + w

    if world.goal is not None and world.goal_arrival_step is None:
        centroid = world.x_true[:, :2].mean(axis=0)
        if np.hypot(*(centroid - world.goal)) <= 2.0 * params.l0_v:
            world.goal_arrival_step = k
    world.k += 1
    return rec


# ----------------------------------------------------------------------
# whole runs

def summarize(world):
    """Run-level metrics computed from the event log."""
    ev = world.events
    attacks = []
    for spec in world.attacks:
        hits = [e.step for e in ev if e.kind == "isolate" and e.target == spec.target
                and e.step >= spec.start_step]
        attacks.append({"target": spec.target, "start": spec.start_step,
                        "latency": (min(hits) - spec.start_step) if hits else None})

    def attacked(j, k):
        return any(s.target == j and s.active(k) for s in world.attacks)

    hidden_ids = {e.observer for e in ev if e.kind in ("discover", "follow")}
    # an observer whose own broadcast is tampered predicts from a state its
    # neighbours never saw, so its verdicts are a symptom of the attack
    by_attacked = [e for e in ev if e.kind == "isolate" and attacked(e.observer, e.step)
                   and not attacked(e.target, e.step)]
    false_iso = [e for e in ev if e.kind == "isolate" and not attacked(e.target, e.step)
                 and not attacked(e.observer, e.step) and e.target not in hidden_ids]
    sig = [e for e in ev if e.kind == "signature"]
    sig_lat = [int(e.value) for e in ev if e.kind == "signature_latency"]
    return {
        "steps": world.k,
        "attacks": attacks,
        "isolations": sum(e.kind == "isolate" for e in ev),
        "false_isolations": len(false_iso),
        "isolations_by_attacked": len(by_attacked),
        "signature_detections": len(sig),
        "signature_latency": sig_lat,
        "object_estimate_error": [None if np.isnan(e.value) else e.value for e in sig],
        "discoveries": sum(e.kind == "discover" for e in ev),
        "goal_arrival_step": world.goal_arrival_step,
        "final_compromised": {str(a.id): sorted(a.compromised) for a in world.agents if a.compromised},
        "final_trusted": {str(a.id): sorted(a.trusted) for a in world.agents if a.trusted},
    }


def run_scenario(scn, out_dir=None, steps=None, callback=None):
    """Run ``scn`` for its horizon (or ``steps``) and return ``(world, metrics)``.

    With ``out_dir`` the trace files are streamed there.  ``callback`` is
    called with every record, after it has been written.
    """
    from .trace import TraceWriter

    horizon = scn.steps if steps is None else steps
    world = World(scn)
    writer = TraceWriter(out_dir) if out_dir is not None else None
    try:
        keep = writer is not None or callback is not None
        for _ in range(horizon):
            rec = run_step(world, record=keep)
            if writer is not None:
                writer.write(rec)
            if callback is not None:
                callback(world, rec)
    finally:
        metrics = summarize(world)
        if writer is not None:
            writer.close(metrics)
    return world, metrics

"""Declarative scenario description and its YAML representation.

A scenario file is a YAML mapping; every section is optional except the
vehicle list.  Unknown keys anywhere are rejected so that typos surface as
errors instead of silently falling back to defaults::

    name: two-vehicles
    seed: 7
    steps: 400
    vehicles:
      - [0.0, 0.0]
      - [2.0, 0.0, 0.1, 0.0]      # px, py[, vx, vy]
    goal: [20.0, 0.0]
    obstacles:
      - rect: [5.0, 3.0, 7.0, 5.0]
    objects:
      - [10.0, 6.0]
    swarm: {k_v: 3.0, gamma_v: 2.0}
    attacks:
      - target: 1
        start: 100
        state: {kind: constant, vector: [1, 0, 0, 0], units: sigma}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .adversary import AttackSpec, SpoofSchedule
from .dynamics import double_integrator
from .errors import ConfigError
from .formation import HiddenParams, SwarmParams, rasterize_rectangle

OUTPUT_CHOICES = ("full", "position")


@dataclass(frozen=True)
class NoiseParams:
    dt: float = 0.05
    proc_std: tuple = (0.005, 0.005, 0.001, 0.001)
    meas_std: tuple = (0.05, 0.05, 0.02, 0.02)
    output: str = "full"

    def __post_init__(self):
        if self.output not in OUTPUT_CHOICES:
            raise ConfigError(f"noise.output must be one of {OUTPUT_CHOICES}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigError("noise.dt must be finite and > 0")
        if len(self.proc_std) != 4:
            raise ConfigError("noise.proc_std needs 4 entries (px, py, vx, vy)")
        n_out = 4 if self.output == "full" else 2
        if len(self.meas_std) != n_out:
            raise ConfigError(f"noise.meas_std needs {n_out} entries for output={self.output!r}")
        if min(self.proc_std) < 0 or min(self.meas_std) < 0:
            raise ConfigError("noise standard deviations must be >= 0")

    def model(self):
        C = np.eye(4) if self.output == "full" else np.eye(4)[:2]
        return double_integrator(self.dt, self.proc_std, self.meas_std, C)


@dataclass(frozen=True)
class MonitorParams:
    tau: int = 2
    window: int = 20
    theta: float = 0.743
    alpha: float = 0.01
    debounce: int = 60
    dwell: int = 30
    alpha_h: float | None = None
    elements: tuple = (0, 1, 2, 3)
    cruise_speed_cap: float = 1.5
    v_floor: float = 0.1
    watch_margin: float = 2.0
    enabled: bool = True

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigError("monitor.tau must be >= 1")
        if self.window < 10:
            raise ConfigError("monitor.window must be >= 10")
        if not self.theta > 0:
            raise ConfigError("monitor.theta must be > 0")
        for name in ("alpha", "alpha_h"):
            a = getattr(self, name)
            if a is not None and not 0 < a < 1:
                raise ConfigError(f"monitor.{name} must lie in (0, 1)")
        if self.debounce < 1 or self.dwell < 1:
            raise ConfigError("monitor.debounce and monitor.dwell must be >= 1")
        if not self.elements or any(not 0 <= q < 4 for q in self.elements):
            raise ConfigError("monitor.elements must be indices in 0..3")
        if not self.cruise_speed_cap > 0 or self.v_floor < 0:
            raise ConfigError("monitor.cruise_speed_cap must be > 0 and v_floor >= 0")
        if self.watch_margin < 1:
            raise ConfigError("monitor.watch_margin must be >= 1")

    @property
    def watch_steps(self):
        """Canonical decay steps that must remain for a signature check to start."""
        return int(np.ceil(self.watch_margin * (self.window + self.dwell)))

    @property
    def signature_alpha(self):
        return self.alpha if self.alpha_h is None else self.alpha_h


@dataclass(frozen=True)
class MissionParams:
    eps_d_frac: float = 0.05
    eps_v: float = 0.01
    t_dwell: int = 50
    obstacle_springs_in_hidden: bool = True

    def __post_init__(self):
        if not self.eps_d_frac > 0 or not self.eps_v > 0 or self.t_dwell < 1:
            raise ConfigError("mission tolerances must be positive")


@dataclass(frozen=True)
class NetworkParams:
    loss_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob < 1.0:
            raise ConfigError("network.loss_prob must lie in [0, 1)")


@dataclass(frozen=True)
class ObstacleSpec:
    rect: tuple | None = None
    points: tuple | None = None
    spacing: float | None = None

    def __post_init__(self):
        if (self.rect is None) == (self.points is None):
            raise ConfigError("an obstacle needs exactly one of 'rect' or 'points'")
        if self.rect is not None and len(self.rect) != 4:
            raise ConfigError("obstacle rect is [xmin, ymin, xmax, ymax]")

    def boundary_points(self, delta_r):
        if self.points is not None:
            return np.asarray(self.points, dtype=float).reshape(-1, 2)
        spacing = self.spacing if self.spacing is not None else delta_r / 10.0
        return rasterize_rectangle(*self.rect, spacing)


@dataclass(frozen=True)
class Scenario:
    initial_states: tuple
    name: str = "scenario"
    seed: int = 0
    steps: int = 1000
    goal: tuple | None = None
    obstacles: tuple = ()
    objects: tuple = ()
    swarm: SwarmParams = field(default_factory=SwarmParams)
    hidden: HiddenParams = field(default_factory=HiddenParams)
    monitor: MonitorParams = field(default_factory=MonitorParams)
    mission: MissionParams = field(default_factory=MissionParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    network: NetworkParams = field(default_factory=NetworkParams)
    attacks: tuple = ()

    def __post_init__(self):
        n = len(self.initial_states)
        if n < 2:
            raise ConfigError("a scenario needs at least N >= 2 vehicles")
        if self.steps < 0:
            raise ConfigError("steps (horizon) must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for x in self.initial_states:
            if len(x) != 4 or not np.all(np.isfinite(x)):
                raise ConfigError("initial states are finite [px, py, vx, vy]")
        for a in self.attacks:
            ids = {a.target} | set(a.remove_ids) | set(a.add_ids)
            if any(not 0 <= v < n for v in ids):
                raise ConfigError(f"attack references a vehicle id outside 0..{n - 1}")
            if len(a.xi_x.vector) not in (0, 4):
                raise ConfigError("attack state spoof vector needs 4 entries")
            if len(a.xi_o) not in (0, 2):
                raise ConfigError("attack obstacle spoof needs 2 entries")
        self.hidden.check_distinct(self.swarm)

    @property
    def n_vehicles(self):
        return len(self.initial_states)

    def obstacle_points(self):
        pts = [o.boundary_points(self.swarm.delta_r) for o in self.obstacles]
        return np.vstack(pts) if pts else np.zeros((0, 2))


# --------------------------------------------------------------------------
# dict <-> dataclass

def _float_tuple(values, what):
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a list of numbers") from exc
    return out


def _build(cls, data, section):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(sorted(unknown))}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in '{section}': {exc}") from exc


def _attack_from_dict(d, idx):
    if not isinstance(d, dict):
        raise ConfigError(f"attacks[{idx}] must be a mapping")
    allowed = {"target", "start", "end", "state", "obstacle", "remove", "add", "stealth_scale"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in 'attacks[{idx}]': {', '.join(sorted(unknown))}")
    if "target" not in d:
        raise ConfigError(f"attacks[{idx}] needs a target")
    state = d.get("state") or {}
    st_allowed = {"kind", "vector", "period", "units"}
    if set(state) - st_allowed:
        raise ConfigError(f"unknown key(s) in 'attacks[{idx}].state': {', '.join(sorted(set(state) - st_allowed))}")
    sched = SpoofSchedule(kind=state.get("kind", "constant"),
                          vector=_float_tuple(state.get("vector", ()), "attack state vector"),
                          period=float(state.get("period", 100.0)),
                          units=state.get("units", "abs"))
    return AttackSpec(
        target=int(d["target"]),
        start_step=int(d.get("start", 0)),
        end_step=None if d.get("end") is None else int(d["end"]),
        xi_x=sched,
        xi_o=_float_tuple(d.get("obstacle", ()), "attack obstacle vector"),
        remove_ids=frozenset(int(v) for v in d.get("remove", ())),
        add_ids=frozenset(int(v) for v in d.get("add", ())),
        stealth_scale=None if d.get("stealth_scale") is None else float(d["stealth_scale"]),
    )


def scenario_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping at top level")
    allowed = {"name", "seed", "steps", "vehicles", "goal", "obstacles", "objects", "swarm",
               "hidden", "monitor", "mission", "noise", "network", "attacks"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    if "vehicles" not in data:
        raise ConfigError("scenario needs a 'vehicles' list")
    states = []
    for k, v in enumerate(data["vehicles"] or []):
        v = _float_tuple(v, f"vehicles[{k}]")
        if len(v) == 2:
            v = v + (0.0, 0.0)
        if len(v) != 4:
            raise ConfigError(f"vehicles[{k}] must be [px, py] or [px, py, vx, vy]")
        states.append(v)
    obstacles = []
    for k, o in enumerate(data.get("obstacles") or []):
        if not isinstance(o, dict):
            raise ConfigError(f"obstacles[{k}] must be a mapping")
        o = dict(o)
        if "rect" in o:
            o["rect"] = _float_tuple(o["rect"], f"obstacles[{k}].rect")
        if "points" in o:
            o["points"] = tuple(_float_tuple(p, f"obstacles[{k}].points") for p in o["points"])
        obstacles.append(_build(ObstacleSpec, o, f"obstacles[{k}]"))
    monitor = dict(data.get("monitor") or {})
    if "elements" in monitor:
        monitor["elements"] = tuple(int(q) for q in monitor["elements"])
    noise = dict(data.get("noise") or {})
    for key in ("proc_std", "meas_std"):
        if key in noise:
            noise[key] = _float_tuple(noise[key], f"noise.{key}")
    goal = data.get("goal")
    return Scenario(
        initial_states=tuple(states),
        name=str(data.get("name", "scenario")),
        seed=int(data.get("seed", 0)),
        steps=int(data.get("steps", 1000)),
        goal=None if goal is None else _float_tuple(goal, "goal"),
        obstacles=tuple(obstacles),
        objects=tuple(_float_tuple(p, "objects entry") for p in data.get("objects") or []),
        swarm=_build(SwarmParams, data.get("swarm"), "swarm"),
        hidden=_build(HiddenParams, data.get("hidden"), "hidden"),
        monitor=_build(MonitorParams, monitor, "monitor"),
        mission=_build(MissionParams, data.get("mission"), "mission"),
        noise=_build(NoiseParams, noise, "noise"),
        network=_build(NetworkParams, data.get("network"), "network"),
        attacks=tuple(_attack_from_dict(a, k) for k, a in enumerate(data.get("attacks") or [])),
    )


def _plain(value):
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, (frozenset, set)):
        return sorted(value)
    return value


def scenario_to_dict(scn):
    out = {"name": scn.name, "seed": scn.seed, "steps": scn.steps,
           "vehicles": [list(x) for x in scn.initial_states]}
    if scn.goal is not None:
        out["goal"] = list(scn.goal)
    if scn.obstacles:
        out["obstacles"] = [{k: _plain(v) for k, v in dataclasses.asdict(o).items() if v is not None}
                            for o in scn.obstacles]
    if scn.objects:
        out["objects"] = [list(p) for p in scn.objects]
    for section in ("swarm", "hidden", "monitor", "mission", "noise", "network"):
        out[section] = {k: _plain(v) for k, v in dataclasses.asdict(getattr(scn, section)).items()}
    if scn.attacks:
        attacks = []
        for a in scn.attacks:
            d = {"target": a.target, "start": a.start_step}
            if a.end_step is not None:
                d["end"] = a.end_step
            if a.xi_x.vector:
                d["state"] = {"kind": a.xi_x.kind, "vector": list(a.xi_x.vector),
                              "period": a.xi_x.period, "units": a.xi_x.units}
            if a.xi_o:
                d["obstacle"] = list(a.xi_o)
            if a.remove_ids:
                d["remove"] = sorted(a.remove_ids)
            if a.add_ids:
                d["add"] = sorted(a.add_ids)
            if a.stealth_scale is not None:
                d["stealth_scale"] = a.stealth_scale
            attacks.append(d)
        out["attacks"] = attacks
    return out


def dump_scenario(scn):
    return yaml.safe_dump(scenario_to_dict(scn), sort_keys=False, default_flow_style=None)


def parse_scenario(text, source="<string>"):
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{source}: YAML parse error at {where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML parse error: {exc}") from exc
    try:
        return scenario_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from exc
    return parse_scenario(text, str(path))


def save_scenario(scn, path):
    Path(path).write_text(dump_scenario(scn))


def builtin_names():
    root = resources.files("swarmguard") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def builtin_scenario(name):
    """Load one of the scenarios shipped with the package by name."""
    if name not in builtin_names():
        raise ConfigError(f"unknown built-in scenario {name!r}; available: {', '.join(builtin_names())}")
    text = (resources.files("swarmguard") / "scenarios" / f"{name}.yaml").read_text()
    return parse_scenario(text, f"<builtin {name}>")


def resolve_scenario(ref):
    """A scenario file path, or the name of a built-in scenario."""
    if Path(ref).exists() or str(ref).endswith((".yaml", ".yml")):
        return load_scenario(ref)
    return builtin_scenario(ref)

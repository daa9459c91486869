"""Scenario configuration: robot, workspace, sensors, components and faults.

A scenario is a YAML mapping; :func:`load_scenario` validates it and returns
frozen dataclasses. Poses are written either as ``[x, y, z, qw, qx, qy, qz]``
or as ``{xyz: [...], rpy_deg: [...]}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from cellkit.geometry import GraspRecord, JointVector, Pose6D
from cellkit.sim.contact import ContactParams, HoleSpec
from cellkit.sim.faults import FaultConfigError, FaultSpec
from cellkit.sim.kinematics import DEFAULT_DH, DHParams


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending file or key."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    depends_on: tuple[str, ...] = ()
    delay_s: float = 0.0
    heartbeat_ms: int = 100
    load_time_s: float = 0.0
    race_mode: bool = False
    launch: tuple[str, ...] | None = None


@dataclass(frozen=True)
class SensorConfig:
    ft_sigma_n: float = 0.5
    camera_p_detect: float = 1.0
    camera_pos_sigma_m: float = 0.0
    camera_rot_sigma_rad: float = 0.0
    camera_fov_half_angle_deg: float = 35.0
    camera_range_m: float = 1.0
    camera_latency_s: float = 0.05


@dataclass(frozen=True)
class PlannerConfig:
    p_fail: float = 0.0
    planning_time_s: float = 0.05
    joint_speed_rad_s: float = 1.0


@dataclass(frozen=True)
class GripperConfig:
    speed_per_s: float = 2.0
    attach_tolerance_m: float = 0.01
    release_aperture: float = 0.8


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    pose: Pose6D
    width: float = 0.4  # aperture at which the fingers stop on the object


@dataclass(frozen=True)
class WatchdogPolicy:
    stall_multiplier: float = 5.0
    poll_interval_ms: float = 50.0
    backoff_initial_ms: float = 500.0
    backoff_multiplier: float = 2.0
    max_restarts: int = 5
    window_s: float = 60.0
    max_system_restarts: int = 2
    system_window_s: float = 600.0
    restart_grace_s: float = 2.0
    audit_period_s: float = 1.0
    expected_controllers: tuple[str, ...] = ("joint_trajectory_controller", "force_torque_sensor_controller")
    log_patterns: tuple[dict, ...] = ()


@dataclass(frozen=True)
class Scenario:
    seed: int = 0
    dh: DHParams = DHParams()
    home: JointVector = JointVector((0.0,) * 6)
    keyframes: dict[str, JointVector] = field(default_factory=dict)
    named_poses: dict[str, Pose6D] = field(default_factory=dict)
    objects: dict[str, ObjectSpec] = field(default_factory=dict)
    grasp_db: dict[str, GraspRecord] = field(default_factory=dict)
    surface_height_m: float = 0.0
    holes: dict[str, HoleSpec] = field(default_factory=dict)
    contact: ContactParams = ContactParams()
    sensors: SensorConfig = SensorConfig()
    planner: PlannerConfig = PlannerConfig()
    gripper: GripperConfig = GripperConfig()
    components: dict[str, ComponentSpec] = field(default_factory=dict)
    faults: tuple[FaultSpec, ...] = ()
    watchdog: WatchdogPolicy = WatchdogPolicy()
    bus_latency_s: float = 0.0005
    source: str | None = None

    def with_changes(self, **changes: Any) -> "Scenario":
        from dataclasses import replace
        return replace(self, **changes)

    def keyframe(self, name: str) -> JointVector:
        try:
            return self.keyframes[name]
        except KeyError:
            raise KeyError(f"unknown keyframe {name!r}") from None


def parse_pose(value: Any, where: str) -> Pose6D:
    try:
        if isinstance(value, dict):
            rpy = [math.radians(v) for v in value.get("rpy_deg", (0.0, 0.0, 0.0))]
            return Pose6D.from_xyz_rpy(value["xyz"], rpy)
        return Pose6D.from_list(value)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad pose: {exc}", where) from None


def _dataclass_from(cls, data: Any, where: str, convert: dict | None = None):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", where)
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", where)
    kwargs = {}
    for k, v in data.items():
        if convert and k in convert:
            v = convert[k](v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where) from None


def _check_prob(p: float, where: str) -> None:
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"probability {p} outside [0, 1]", where)


def scenario_from_dict(d: dict, source: str | None = None) -> Scenario:
    if not isinstance(d, dict):
        raise ConfigError("scenario must be a mapping", source)
    allowed = ({f.name for f in fields(Scenario)} - {"source", "surface_height_m", "holes"}) | {"taskboard"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", source)
    kw: dict[str, Any] = {"source": source}
    if "seed" in d:
        kw["seed"] = int(d["seed"])
    try:
        kw["dh"] = DHParams(tuple(tuple(r) for r in d.get("dh", DEFAULT_DH)))
        kw["home"] = JointVector(tuple(d.get("home", (0.0,) * 6)))
        kw["keyframes"] = {k: JointVector(tuple(v)) for k, v in (d.get("keyframes") or {}).items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "dh/home/keyframes") from None
    kw["named_poses"] = {k: parse_pose(v, f"named_poses.{k}") for k, v in (d.get("named_poses") or {}).items()}
    objects = {}
    for name, spec in (d.get("objects") or {}).items():
        objects[name] = ObjectSpec(name, parse_pose(spec.get("pose"), f"objects.{name}.pose"), float(spec.get("width", 0.4)))
    kw["objects"] = objects
    db = {}
    for name, spec in (d.get("grasp_db") or {}).items():
        try:
            db[name] = GraspRecord(name, parse_pose(spec["pose"], f"grasp_db.{name}.pose"), float(spec.get("closure", 1.0)))
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc), f"grasp_db.{name}") from None
    kw["grasp_db"] = db
    board = d.get("taskboard") or {}
    kw["surface_height_m"] = float(board.get("surface_height_m", 0.0))
    holes = {}
    for name, spec in (board.get("holes") or {}).items():
        spec = dict(spec)
        center = parse_pose(spec.pop("center"), f"taskboard.holes.{name}.center")
        holes[name] = _dataclass_from(HoleSpec, {"center": center, **spec}, f"taskboard.holes.{name}")
    kw["holes"] = holes
    kw["contact"] = _dataclass_from(ContactParams, d.get("contact"), "contact")
    kw["sensors"] = _dataclass_from(SensorConfig, d.get("sensors"), "sensors")
    _check_prob(kw["sensors"].camera_p_detect, "sensors.camera_p_detect")
    if kw["sensors"].ft_sigma_n < 0:
        raise ConfigError("sigma must be >= 0", "sensors.ft_sigma_n")
    kw["planner"] = _dataclass_from(PlannerConfig, d.get("planner"), "planner")
    _check_prob(kw["planner"].p_fail, "planner.p_fail")
    kw["gripper"] = _dataclass_from(GripperConfig, d.get("gripper"), "gripper")
    comps = {}
    for name, spec in (d.get("components") or {}).items():
        spec = dict(spec or {})
        conv = {"depends_on": tuple, "launch": lambda v: None if v is None else tuple(str(x) for x in v)}
        comps[name] = _dataclass_from(ComponentSpec, {"name": name, **spec}, f"components.{name}", conv)
    kw["components"] = comps
    try:
        kw["faults"] = tuple(FaultSpec.from_dict(f) for f in (d.get("faults") or ()))
    except (FaultConfigError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "faults") from None
    conv = {"expected_controllers": tuple, "log_patterns": lambda v: tuple(dict(p) for p in v)}
    kw["watchdog"] = _dataclass_from(WatchdogPolicy, d.get("watchdog"), "watchdog", conv)
    if "bus_latency_s" in d:
        kw["bus_latency_s"] = float(d["bus_latency_s"])
    sc = Scenario(**kw)
    validate_scenario(sc)
    return sc


def validate_scenario(sc: Scenario) -> None:
    for f in sc.faults:
        if f.component not in sc.components:
            raise ConfigError(f"fault targets unknown component {f.component!r}", "faults")
    for c in sc.components.values():
        for dep in c.depends_on:
            if dep not in sc.components:
                raise ConfigError(f"{c.name} depends on unknown component {dep!r}", "components")
        if c.delay_s < 0 or c.heartbeat_ms < 10:
            raise ConfigError("delay must be >= 0 and heartbeat period >= 10 ms", f"components.{c.name}")
    for name in sc.objects:
        if name in sc.holes:
            raise ConfigError(f"{name!r} is both an object and a hole", "objects")


def load_scenario(path: str | Path | None = None) -> Scenario:
    """Load a scenario file; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("cellkit.data").joinpath("scenario.yaml").read_text()
        source = "<default scenario>"
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("file not found", str(p))
        text = p.read_text()
        source = str(p)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML error: {exc}", source) from None
    return scenario_from_dict(data or {}, source)

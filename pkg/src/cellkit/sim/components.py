"""Cell components: device drivers that serve ``svc/*`` topics over the bus.

All physics lives in one :class:`~cellkit.sim.cell.CellModel` owned by the
world server. Drivers reach it through a :class:`WorldLink`: in-process when
the whole cell shares a virtual clock, over ``sim/world`` requests when each
driver is its own process. Driver code is the same in both cases.
"""
from __future__ import annotations

import logging
import math
import random
from typing import Callable

import numpy as np

from cellkit.bus.endpoint import Endpoint, PendingRequest
from cellkit.bus.wire import Message
from cellkit.geometry import JointVector, Pose6D, quat_from_axis_angle, quat_multiply, quat_normalize
from cellkit.sim.cell import CellModel
from cellkit.sim.faults import FaultSchedule, FaultSpec
from cellkit.sim.kinematics import ik
from cellkit.sim.scenario import ComponentSpec, Scenario

log = logging.getLogger(__name__)

WORLD_TOPIC = "sim/world"
WORLD_EVENTS = "sim/events"
ANNOUNCE_TOPIC = "sys/announce"
DEAF_LINES = {"arm": "pipeline producer overflowed"}
TRAJECTORY_CONTROLLER = "joint_trajectory_controller"

Reply = Callable[[dict | None], None]


# -- world access -------------------------------------------------------------

class WorldServer:
    """Owns the cell model; reports jams on ``sim/events``."""

    def __init__(self, cell: CellModel, endpoint: Endpoint | None = None):
        self.cell = cell
        self.endpoint = endpoint
        self.jam_listeners: list[Callable[[float], None]] = []
        self._was_jammed = False
        if endpoint is not None:
            endpoint.serve(WORLD_TOPIC, self._on_request)

    def handle(self, op: str, args: dict, now: float) -> dict:
        self.cell.advance_to(now)
        out = self.cell.handle(op, args)
        if op == "reset":
            self._was_jammed = False
        self.check_jam(now)
        return out

    def check_jam(self, now: float) -> bool:
        self.cell.advance_to(now)
        if self.cell.jammed and not self._was_jammed:
            self._was_jammed = True
            for cb in self.jam_listeners:
                cb(now)
            if self.endpoint is not None:
                self.endpoint.publish(WORLD_EVENTS, {"event": "jam", "time_s": now})
        return self.cell.jammed

    def _on_request(self, m: Message) -> dict:
        body = dict(m.body)
        op = body.pop("op", "")
        return self.handle(op, body, self.endpoint.reactor.now())


class WorldLink:
    def call(self, op: str, args: dict, cb: Reply) -> None:
        raise NotImplementedError


class DirectWorldLink(WorldLink):
    def __init__(self, server: WorldServer, clock: Callable[[], float]):
        self.server = server
        self.clock = clock

    def call(self, op: str, args: dict, cb: Reply) -> None:
        cb(self.server.handle(op, args, self.clock()))


class BusWorldLink(WorldLink):
    def __init__(self, endpoint: Endpoint, timeout_ms: float = 1000.0):
        self.endpoint = endpoint
        self.timeout_ms = timeout_ms

    def call(self, op: str, args: dict, cb: Reply) -> None:
        def done(p: PendingRequest) -> None:
            cb(p.reply)
        self.endpoint.request(WORLD_TOPIC, {"op": op, **args}, self.timeout_ms, on_done=done)


# -- driver base ---------------------------------------------------------------

class CellComponent:
    """One supervised device driver.

    ``exit_process`` ends the component abruptly (a real ``os._exit`` in a child
    process, a killed endpoint on the virtual clock).
    """

    kind = "component"

    def __init__(self, spec: ComponentSpec, scenario: Scenario, endpoint: Endpoint, world: WorldLink,
                 incarnation: int = 0, exit_process: Callable[[], None] | None = None,
                 faults: tuple[FaultSpec, ...] | None = None, fault_epoch_s: float | None = None):
        self.spec = spec
        self.name = spec.name
        self.scenario = scenario
        self.endpoint = endpoint
        self.reactor = endpoint.reactor
        self.world = world
        self.incarnation = incarnation
        self.rng = random.Random(f"{scenario.seed}:{self.name}:{incarnation}")
        self._exit = exit_process or endpoint.close
        self.faults = tuple(f for f in (scenario.faults if faults is None else faults) if f.component == self.name)
        self.fault_epoch_s = fault_epoch_s
        self.deaf = False
        self.stalled = False
        self.alive = False
        self.started_at = 0.0
        self.services: list[str] = []
        self.fault_log: list[tuple[float, str]] = []
        self._timers: set = set()
        self.heartbeat = None

    # lifecycle
    def start(self) -> "CellComponent":
        self.alive = True
        self.started_at = self.reactor.now()
        self.setup()
        self.heartbeat = self.endpoint.emit_heartbeats(self.name, self.spec.heartbeat_ms)
        self.endpoint.publish(ANNOUNCE_TOPIC, {"component": self.name, "services": self.services,
                                               "incarnation": self.incarnation})
        self.log(f"{self.name} started (incarnation {self.incarnation})")
        self._schedule_faults()
        return self

    def setup(self) -> None:
        """Register services; subclasses override."""

    def serve(self, topic: str, handler: Callable[[Message], dict | None]) -> None:
        def guarded(m: Message) -> dict | None:
            if self.deaf or self.stalled or not self.alive:
                return None
            return handler(m)
        if topic not in self.services:
            self.services.append(topic)
        self.endpoint.serve(topic, guarded)

    def later(self, delay_s: float, fn: Callable, *args) -> None:
        holder = []

        def run():
            self._timers.discard(holder[0])
            if self.alive and not self.endpoint.closed:
                fn(*args)
        holder.append(self.reactor.call_later(delay_s, run))
        self._timers.add(holder[0])

    def reply_later(self, m: Message, delay_s: float, body_fn: Callable[[], dict | None]) -> None:
        def send():
            if self.deaf or self.stalled:
                return
            body = body_fn()
            if body is not None:
                self.endpoint.reply(m, body)
        self.later(delay_s, send)

    def log(self, line: str, level: str = "info") -> None:
        self.endpoint.publish(f"log/{self.name}", {"line": line, "level": level})

    def crash(self, reason: str) -> None:
        if not self.alive:
            return
        self.log(f"{self.name} exiting: {reason}", "error")
        self.shutdown()
        self._exit()

    def shutdown(self) -> None:
        self.alive = False
        for t in self._timers:
            t.cancel()
        self._timers.clear()

    # faults
    def _schedule_faults(self) -> None:
        epoch = self.started_at if self.fault_epoch_s is None else self.fault_epoch_s
        for spec in self.faults:
            sched = iter(FaultSchedule(spec, self.rng, start_s=epoch))
            self._arm_next(spec, sched)

    def _arm_next(self, spec: FaultSpec, sched) -> None:
        now = self.reactor.now()
        for t in sched:
            if t >= now:
                def fire(spec=spec, sched=sched):
                    self.inject(spec)
                    if self.alive:
                        self._arm_next(spec, sched)
                self.later(t - now, fire)
                return

    def inject(self, spec: FaultSpec) -> None:
        """Apply one fault occurrence now."""
        now = self.reactor.now()
        self.fault_log.append((now, spec.mode))
        mode = spec.mode
        if mode == "crash":
            self.crash("injected crash")
        elif mode == "stall":
            self.stalled = True
            if self.heartbeat is not None:
                self.heartbeat.paused = True
        elif mode == "deaf":
            self.deaf = True
            self._deaf_chatter()
        else:
            self.on_model_fault(spec)

    def _deaf_chatter(self) -> None:
        line = DEAF_LINES.get(self.name)
        if line is None or not self.alive:
            return
        self.log(line, "error")
        self.later(2.0, self._deaf_chatter)

    def on_model_fault(self, spec: FaultSpec) -> None:
        log.warning("%s ignores fault mode %s", self.name, spec.mode)

    def now(self) -> float:
        return self.reactor.now()


# -- drivers -------------------------------------------------------------------

class ArmDriver(CellComponent):
    kind = "arm"

    def setup(self) -> None:
        self.p_fail = self.scenario.planner.p_fail
        self.controllers = set(self.scenario.watchdog.expected_controllers) | {TRAJECTORY_CONTROLLER}
        self.serve("svc/arm.plan_move", self._plan_move)
        self.serve("svc/arm.state", self._state)
        self.serve("svc/arm.controllers", self._controllers)

    def on_model_fault(self, spec: FaultSpec) -> None:
        if spec.mode == "planner_fail":
            self.p_fail = float(spec.params.get("p_fail", 1.0))
        elif spec.mode == "controller_missing":
            name = spec.params.get("controller", TRAJECTORY_CONTROLLER)
            self.controllers.discard(name)
            self.log(f"controller {name} failed to start", "error")
        else:
            super().on_model_fault(spec)

    def _plan_move(self, m: Message) -> None:
        target = m.body.get("target", {})

        def respond(body: dict) -> None:
            if self.alive and not (self.deaf or self.stalled):
                self.endpoint.reply(m, body)

        if TRAJECTORY_CONTROLLER not in self.controllers:
            return {"ok": False, "reason": f"controller {TRAJECTORY_CONTROLLER} not active"}

        def with_state(st: dict | None) -> None:
            if st is None or not self.alive:
                return
            current = JointVector(tuple(st["joints"]))
            try:
                if "joints" in target:
                    goal = JointVector(tuple(target["joints"]))
                elif "pose" in target:
                    goal = ik(Pose6D.from_list(target["pose"]), current, self.scenario.dh)
                    if goal is None:
                        respond({"ok": False, "reason": "no IK solution"})
                        return
                else:
                    respond({"ok": False, "reason": "target needs joints or pose"})
                    return
            except ValueError as exc:
                respond({"ok": False, "reason": str(exc)})
                return
            if goal.max_abs_diff(current) < 1e-9:
                respond({"ok": True, "duration_s": 0.0, "goal": list(goal.q)})
                return
            self.later(self.scenario.planner.planning_time_s, self._execute, goal, respond)

        self.world.call("state", {}, with_state)
        return None

    def _execute(self, goal: JointVector, respond: Callable[[dict], None]) -> None:
        # stochastic planner: fails even when a plan exists
        if self.rng.random() < self.p_fail:
            respond({"ok": False, "reason": "planning failed"})
            return

        def started(r: dict | None) -> None:
            if r is None:
                return
            if not r.get("ok"):
                respond({"ok": False, "reason": r.get("reason", "execution failed")})
                return
            respond({"ok": True, "duration_s": r["duration_s"], "goal": list(goal.q)})

        self.world.call("trajectory", {"goal": list(goal.q)}, started)

    def _state(self, m: Message) -> None:
        def done(st: dict | None) -> None:
            if st is not None and not (self.deaf or self.stalled) and self.alive:
                self.endpoint.reply(m, {"ok": True, "joints": st["joints"], "tool_pose": st["tool_pose"],
                                        "moving": st["moving"], "jammed": st["jammed"]})
        self.world.call("state", {}, done)
        return None

    def _controllers(self, m: Message) -> dict:
        op = m.body.get("op", "list")
        if op == "list":
            return {"ok": True, "active": sorted(self.controllers)}
        if op == "restart":
            name = str(m.body.get("name", ""))
            self.later(0.3, self._controller_up, name)
            return {"ok": True}
        return {"ok": False, "reason": f"unknown op {op!r}"}

    def _controller_up(self, name: str) -> None:
        self.controllers.add(name)
        self.log(f"controller {name} started")


class ArmDescription(CellComponent):
    kind = "arm_description"

    def setup(self) -> None:
        self.serve("svc/arm_description.get", self._get)

    def ready(self) -> bool:
        return self.now() >= self.started_at + self.spec.load_time_s

    def _get(self, m: Message) -> dict:
        if not self.ready():
            return {"ok": False, "reason": "description not yet published"}
        return {"ok": True, "dh": [list(r) for r in self.scenario.dh.rows]}


class ForceServo(CellComponent):
    """Cartesian velocity servo. Needs the arm description at start: in race mode a missing
    description is fatal, otherwise the servo keeps asking until it appears."""

    kind = "force_servo"

    def setup(self) -> None:
        self.description: list | None = None
        # announced up front so log lines naming the service resolve to this component
        self.services.append("svc/arm.servo")
        self._fetch_description()

    def _fetch_description(self) -> None:
        def done(p: PendingRequest) -> None:
            if not self.alive:
                return
            if p.reply is not None and p.reply.get("ok"):
                self.description = p.reply["dh"]
                self.serve("svc/arm.servo", self._servo)
                self.log("force servo controller active")
                return
            if self.spec.race_mode:
                self.log("robot_description not found", "error")
                self.crash("robot_description not found")
            else:
                self.later(0.5, self._fetch_description)
        self.endpoint.request("svc/arm_description.get", {}, 500.0, on_done=done)

    def _servo(self, m: Message) -> None:
        def done(r: dict | None) -> None:
            if r is not None and self.alive and not (self.deaf or self.stalled):
                self.endpoint.reply(m, r)
        self.world.call("servo", {"velocity": list(m.body["velocity"]), "duration_s": float(m.body["duration_s"])}, done)
        return None


class GripperDriver(CellComponent):
    kind = "gripper"

    def setup(self) -> None:
        self.serve("svc/gripper", self._command)

    def _command(self, m: Message) -> None:
        cmd = m.body.get("command")
        if cmd == "open":
            aperture = 1.0
        elif cmd == "close":
            aperture = 0.0
        elif "closure" in m.body:
            c = float(m.body["closure"])
            if not 0.0 <= c <= 1.0:
                return {"ok": False, "reason": "closure outside [0, 1]"}
            aperture = 1.0 - c
        else:
            return {"ok": False, "reason": "unknown gripper command"}

        def started(r: dict | None) -> None:
            if r is None:
                return
            if not r.get("ok"):
                self.endpoint.reply(m, r)
                return

            self._reply_when(m, r["duration_s"])

        self.world.call("gripper", {"aperture": aperture}, started)
        return None

    def _reply_when(self, m: Message, delay: float) -> None:
        # bus-linked worlds answer asynchronously, so poll the state once the motion is due
        def attempt():
            if self.deaf or self.stalled:
                return

            def got(st: dict | None) -> None:
                if st is not None and self.alive and not (self.deaf or self.stalled):
                    self.endpoint.reply(m, {"ok": True, "aperture": st["gripper_aperture"],
                                            "attached": st["attached_object"]})
            self.world.call("state", {}, got)
        self.later(delay, attempt)


class CameraDriver(CellComponent):
    kind = "camera"

    def setup(self) -> None:
        self.serve("svc/camera.detect", self._detect)

    def _detect(self, m: Message) -> None:
        name = str(m.body.get("object", ""))

        def seen(obs: dict | None) -> None:
            if obs is None or not self.alive:
                return
            poses = self.detect(name, obs)
            self.reply_later(m, self.scenario.sensors.camera_latency_s, lambda: {"ok": True, "poses": poses})
        self.world.call("observe", {}, seen)
        return None

    def detect(self, name: str, obs: dict) -> list[list[float]]:
        """Field-of-view cone around the tool +z axis, then a Bernoulli detection with pose noise."""
        s = self.scenario.sensors
        truth = obs["objects"].get(name) or obs["holes"].get(name)
        if truth is None:
            return []
        tool = Pose6D.from_list(obs["tool_pose"])
        target = Pose6D.from_list(truth)
        ray = np.subtract(target.position, tool.position)
        dist = float(np.linalg.norm(ray))
        if dist > s.camera_range_m:
            return []
        if dist > 0:
            cos_angle = float(ray @ tool.z_axis()) / dist
            if cos_angle < math.cos(math.radians(s.camera_fov_half_angle_deg)):
                return []
        if self.rng.random() >= s.camera_p_detect:
            return []
        pos = tuple(p + self.rng.gauss(0.0, s.camera_pos_sigma_m) if s.camera_pos_sigma_m else p
                    for p in target.position)
        q = target.orientation
        if s.camera_rot_sigma_rad:
            dq = quat_from_axis_angle((0.0, 0.0, 1.0), self.rng.gauss(0.0, s.camera_rot_sigma_rad))
            q = tuple(quat_normalize(quat_multiply(q, dq)))
        return [Pose6D(pos, q).to_list()]


class ForceTorqueSensor(CellComponent):
    kind = "ft"

    def setup(self) -> None:
        self.sigma = self.scenario.sensors.ft_sigma_n
        self.serve("svc/ft.read", self._read)

    def on_model_fault(self, spec: FaultSpec) -> None:
        if spec.mode == "ft_noise":
            self.sigma = float(spec.params.get("sigma_n", 5.0))
            self.log(f"force-torque noise level rose to {self.sigma:g} N", "warning")
        else:
            super().on_model_fault(spec)

    def sample(self, force: list[float], n: int = 1) -> list[float]:
        if self.sigma == 0.0:
            return [float(v) for v in force[:3]]
        acc = [0.0, 0.0, 0.0]
        for _ in range(n):
            for i in range(3):
                acc[i] += force[i] + self.rng.gauss(0.0, self.sigma)
        return [a / n for a in acc]

    def _read(self, m: Message) -> None:
        n = max(1, int(m.body.get("samples", 1)))

        def got(r: dict | None) -> None:
            if r is None or not self.alive or self.deaf or self.stalled:
                return
            f = self.sample(r["wrench"], n)
            self.endpoint.reply(m, {"ok": True, "wrench": f + list(r["wrench"][3:]), "samples": n,
                                    "contact": r["contact"]})
        self.world.call("wrench", {}, got)
        return None


class GraspDatabase(CellComponent):
    kind = "grasp_db"

    def setup(self) -> None:
        self.serve("svc/grasp_db.lookup", self._lookup)

    def _lookup(self, m: Message) -> dict:
        name = str(m.body.get("object", ""))
        rec = self.scenario.grasp_db.get(name)
        if rec is None:
            return {"ok": False, "reason": f"object {name!r} not in grasp database"}
        return {"ok": True, "object": name, "pose": rec.grasp_pose_in_object.to_list(), "closure": rec.closure}


DRIVERS: dict[str, type[CellComponent]] = {
    "arm": ArmDriver,
    "arm_description": ArmDescription,
    "force_servo": ForceServo,
    "gripper": GripperDriver,
    "camera": CameraDriver,
    "ft": ForceTorqueSensor,
    "grasp_db": GraspDatabase,
}


def driver_for(name: str) -> type[CellComponent]:
    try:
        return DRIVERS[name]
    except KeyError:
        raise KeyError(f"no driver for component {name!r}") from None

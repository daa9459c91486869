"""Action leaves that turn ticks into bus requests against the cell.

Every skill keeps at most one request in flight. The request's completion cell
is filled on the endpoint's reactor and read on the next tick. A request that
times out is logged (``request timeout on <topic>``) and the skill keeps
returning RUNNING; the surrounding Timeout decorator decides when to give up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cellkit.bt.status import NodeStatus
from cellkit.bus.endpoint import Endpoint, PendingRequest
from cellkit.geometry import GraspRecord, JointVector, Pose6D
from cellkit.sim.scenario import Scenario
from cellkit.skills.control import (IN_HOLE_STATES, MoveUntilForce, NonJammingInsert, SpiralParams, SpiralSearch,
                                    StraightPush, noise_floor)

RUNNING, SUCCESS, FAILURE = NodeStatus.RUNNING, NodeStatus.SUCCESS, NodeStatus.FAILURE

POS_TOL = 1e-3
ROT_TOL = 1e-2
JOINT_TOL = 1e-3


@dataclass
class SkillEnv:
    """What every skill needs: the executor's endpoint and the scenario tables."""

    endpoint: Endpoint
    scenario: Scenario
    request_timeout_ms: float = 1000.0
    poll_s: float = 0.05
    timeouts: list = field(default_factory=list)


def _float(params: dict, key: str, default: float) -> float:
    try:
        return float(params.get(key, default))
    except ValueError:
        raise ValueError(f"parameter {key}={params[key]!r} is not a number") from None


def _bool(params: dict, key: str, default: bool = False) -> bool:
    v = str(params.get(key, default)).strip().lower()
    return v in ("1", "true", "yes", "on")


class BusSkill:
    """Base for bus-backed leaves. Subclasses implement ``begin`` and ``advance``."""

    # re-issue a timed-out request instead of waiting for the outer Timeout
    resend_on_timeout = False

    def __init__(self, env: SkillEnv, params: dict[str, str]):
        self.env = env
        self.params = dict(params)
        self.pending: PendingRequest | None = None
        self.stuck = False

    # request plumbing
    def send(self, topic: str, body: dict) -> None:
        self.pending = self.env.endpoint.request(topic, body, self.env.request_timeout_ms)
        self.stuck = False

    def take(self, ctx) -> dict | None:
        """Reply body once available; ``None`` while waiting or after a timeout."""
        p = self.pending
        if p is None or not p.done():
            return None
        if p.timed_out:
            if not self.stuck:
                self.stuck = True
                ctx.log(f"request timeout on {p.topic}")
                self.env.timeouts.append((ctx.now(), p.topic))
            if self.resend_on_timeout:
                self.send(p.topic, p.body)
            return None
        self.pending = None
        return p.reply

    # Behavior protocol
    def on_start(self, ctx) -> NodeStatus:
        self.pending = None
        self.stuck = False
        return self.begin(ctx)

    def on_running(self, ctx) -> NodeStatus:
        return self.advance(ctx)

    def on_halted(self, ctx) -> None:
        # late replies land in a completion cell nobody reads
        self.pending = None

    def begin(self, ctx) -> NodeStatus:
        raise NotImplementedError

    def advance(self, ctx) -> NodeStatus:
        raise NotImplementedError


# -- motion ---------------------------------------------------------------------

class _ArmMotion(BusSkill):
    """Plan, wait for the trajectory's duration, then confirm the goal from the arm state."""

    def start_motion(self, ctx, target: dict) -> NodeStatus:
        self.phase = "plan"
        self.due = 0.0
        self.send("svc/arm.plan_move", {"target": target})
        return RUNNING

    def advance(self, ctx) -> NodeStatus:
        r = self.take(ctx)
        if self.phase == "plan":
            if r is None:
                return RUNNING
            if not r.get("ok"):
                ctx.log(f"{type(self).__name__}: {r.get('reason', 'plan failed')}")
                return FAILURE
            self.goal_joints = JointVector(tuple(r["goal"]))
            if r["duration_s"] == 0.0:
                return self.finish(ctx)
            self.phase = "move"
            self.due = ctx.now() + float(r["duration_s"])
            return RUNNING
        if self.phase == "move":
            if ctx.now() >= self.due:
                self.phase = "confirm"
                self.send("svc/arm.state", {})
            return RUNNING
        # confirm
        if r is None:
            if self.stuck:
                # the arm went quiet; ask again in case it came back
                self.phase = "move"
                self.due = ctx.now() + self.env.poll_s
            return RUNNING
        if self.reached(r):
            return self.finish(ctx)
        if not r.get("moving"):
            ctx.log(f"{type(self).__name__}: trajectory ended away from goal")
            return FAILURE
        self.phase = "move"
        self.due = ctx.now() + self.env.poll_s
        return RUNNING

    def reached(self, state: dict) -> bool:
        return JointVector(tuple(state["joints"])).max_abs_diff(self.goal_joints) <= JOINT_TOL

    def finish(self, ctx) -> NodeStatus:
        return SUCCESS


class MoveJoint(_ArmMotion):
    """``target``: keyframe name or six comma-separated joint values."""

    def __init__(self, env, params):
        super().__init__(env, params)
        if "target" not in params:
            raise ValueError("MoveJoint needs a target")
        self.keyframe: str | None = None
        raw = params["target"]
        parts = raw.replace(",", " ").split()
        if len(parts) == 6:
            try:
                self.joints = JointVector(tuple(float(p) for p in parts))
                return
            except ValueError:
                pass
        self.keyframe = raw
        self.joints = None

    def begin(self, ctx) -> NodeStatus:
        joints = self.joints
        if joints is None:
            joints = self.env.scenario.keyframes.get(self.keyframe)
            if joints is None:
                ctx.log(f"MoveJoint: unknown keyframe {self.keyframe!r}")
                return FAILURE
        return self.start_motion(ctx, {"joints": list(joints.q)})

    def finish(self, ctx) -> NodeStatus:
        if self.keyframe is not None:
            ctx.bb.put("arm/keyframe", self.keyframe)
        return SUCCESS


def resolve_pose(ctx, ref: str) -> Pose6D | None:
    """A blackboard key holding a Pose6D, or seven comma-separated numbers."""
    v = ctx.bb.get(ref)
    if isinstance(v, Pose6D):
        return v
    parts = ref.replace(",", " ").split()
    if len(parts) == 7:
        try:
            return Pose6D.from_list([float(p) for p in parts])
        except ValueError:
            return None
    return None


class MoveEE(_ArmMotion):
    """Move the tool to ``target``. With ``holding=<object>`` the target is read as the pose
    of the held object and converted through its grasp record; ``approach`` lifts it along +z."""

    def __init__(self, env, params):
        super().__init__(env, params)
        if "target" not in params:
            raise ValueError("MoveEE needs a target")
        self.approach = _float(params, "approach", 0.0)
        self.holding = params.get("holding")

    def goal_pose(self, ctx) -> Pose6D | None:
        pose = resolve_pose(ctx, self.params["target"])
        if pose is None:
            ctx.log(f"MoveEE: no pose at {self.params['target']!r}")
            return None
        if self.approach:
            pose = Pose6D(tuple(np.add(pose.position, (0.0, 0.0, self.approach))), pose.orientation)
        if self.holding:
            rec = ctx.bb.get(f"grasprec/{self.holding}")
            if not isinstance(rec, GraspRecord):
                ctx.log(f"MoveEE: no grasp record for {self.holding!r}")
                return None
            pose = pose.compose(rec.grasp_pose_in_object)
        return pose

    def begin(self, ctx) -> NodeStatus:
        self.goal = self.goal_pose(ctx)
        if self.goal is None:
            return FAILURE
        return self.start_motion(ctx, {"pose": self.goal.to_list()})

    def reached(self, state: dict) -> bool:
        tool = Pose6D.from_list(state["tool_pose"])
        return tool.translation_error(self.goal) <= POS_TOL and tool.rotation_error(self.goal) <= ROT_TOL


class Grasp(BusSkill):
    """``command``: open, close, or a closure fraction in [0, 1]. With ``object`` a close must end
    holding that object, and the outcome is written to ``grasped/<object>``."""

    def __init__(self, env, params):
        super().__init__(env, params)
        cmd = params.get("command", "close")
        if cmd in ("open", "close"):
            self.body = {"command": cmd}
            self.closure = 0.0 if cmd == "open" else 1.0
        else:
            c = float(cmd)
            if not 0.0 <= c <= 1.0:
                raise ValueError("closure must lie in [0, 1]")
            self.body = {"closure": c}
            self.closure = c
        self.object = params.get("object")

    def begin(self, ctx) -> NodeStatus:
        self.send("svc/gripper", self.body)
        return RUNNING

    def advance(self, ctx) -> NodeStatus:
        r = self.take(ctx)
        if r is None:
            return RUNNING
        if not r.get("ok"):
            ctx.log(f"Grasp: {r.get('reason', 'gripper fault')}")
            return FAILURE
        attached = r.get("attached")
        if self.object:
            if self.closure > 0.0 and attached != self.object:
                ctx.log(f"Grasp: fingers closed without holding {self.object}")
                ctx.bb.put(f"grasped/{self.object}", False)
                return FAILURE
            ctx.bb.put(f"grasped/{self.object}", attached == self.object)
            if self.body.get("command") == "open":
                ctx.bb.put(f"released/{self.object}", True)
        elif attached is None and abs(r["aperture"] - (1.0 - self.closure)) > 0.01:
            ctx.log("Grasp: aperture off target")
            return FAILURE
        return SUCCESS


# -- perception -----------------------------------------------------------------

class EstimatePose(BusSkill):
    def __init__(self, env, params):
        super().__init__(env, params)
        if not params.get("object"):
            raise ValueError("EstimatePose needs an object")
        self.object = params["object"]

    def begin(self, ctx) -> NodeStatus:
        self.send("svc/camera.detect", {"object": self.object})
        return RUNNING

    def advance(self, ctx) -> NodeStatus:
        r = self.take(ctx)
        if r is None:
            return RUNNING
        poses = r.get("poses") or []
        if not r.get("ok") or not poses:
            ctx.log(f"EstimatePose: {self.object} not found")
            return FAILURE
        ctx.bb.put(f"pose/{self.object}", Pose6D.from_list(poses[0]))
        return SUCCESS


class ComputeGrasp(BusSkill):
    def __init__(self, env, params):
        super().__init__(env, params)
        if not params.get("object"):
            raise ValueError("ComputeGrasp needs an object")
        self.object = params["object"]

    def begin(self, ctx) -> NodeStatus:
        pose = ctx.bb.get(f"pose/{self.object}")
        if not isinstance(pose, Pose6D):
            ctx.log(f"ComputeGrasp: no pose/{self.object} on the blackboard")
            return FAILURE
        self.object_pose = pose
        self.send("svc/grasp_db.lookup", {"object": self.object})
        return RUNNING

    def advance(self, ctx) -> NodeStatus:
        r = self.take(ctx)
        if r is None:
            return RUNNING
        if not r.get("ok"):
            ctx.log(f"ComputeGrasp: {r.get('reason', 'lookup failed')}")
            return FAILURE
        rec = GraspRecord(self.object, Pose6D.from_list(r["pose"]), float(r["closure"]))
        ctx.bb.put(f"grasprec/{self.object}", rec)
        ctx.bb.put(f"grasp/{self.object}", compose_grasp(self.object_pose, rec))
        return SUCCESS


def compose_grasp(object_pose: Pose6D, record: GraspRecord) -> Pose6D:
    return object_pose.compose(record.grasp_pose_in_object)


# -- force control ----------------------------------------------------------------

class _ForceLoop(BusSkill):
    """Read the averaged wrench, command a velocity, wait out the control period, repeat.

    Every step is idempotent, so a lost request is simply sent again.
    """

    samples = 5
    resend_on_timeout = True

    def __init__(self, env, params):
        super().__init__(env, params)
        self.step_s = _float(params, "step_ms", 10.0) / 1000.0
        if self.step_s <= 0:
            raise ValueError("step_ms must be positive")
        self.sigma = env.scenario.sensors.ft_sigma_n

    def begin(self, ctx) -> NodeStatus:
        self.phase = "pose"
        self.tool: Pose6D | None = None
        self.next_step = ctx.now()
        self.reset_law(ctx)
        self.send("svc/arm.state", {})
        return RUNNING

    def reset_law(self, ctx) -> None:
        pass

    def advance(self, ctx) -> NodeStatus:
        r = self.take(ctx)
        if self.phase == "wait":
            if ctx.now() >= self.next_step:
                self.phase = "read"
                self.send("svc/ft.read", {"samples": self.samples})
            return RUNNING
        if r is None:
            return RUNNING
        if self.phase == "pose":
            self.tool = Pose6D.from_list(r["tool_pose"])
            self.phase = "read"
            self.send("svc/ft.read", {"samples": self.samples})
            return RUNNING
        if self.phase == "read":
            force = np.asarray(r["wrench"][:3], dtype=float)
            done = self.check(ctx, force, r.get("contact", "free"))
            if done is not None:
                self.send_stop()
                return done
            v = self.velocity(ctx, force)
            self.phase = "servo"
            self.next_step = ctx.now() + self.step_s
            self.send("svc/arm.servo", {"velocity": [float(x) for x in v], "duration_s": 2.0 * self.step_s})
            return RUNNING
        # servo acknowledged
        if r.get("ok") and "tool_pose" in r:
            self.tool = Pose6D.from_list(r["tool_pose"])
        self.phase = "wait"
        return RUNNING

    def send_stop(self) -> None:
        # fire and forget: the next command replaces it anyway
        self.env.endpoint.request("svc/arm.servo", {"velocity": [0.0, 0.0, 0.0], "duration_s": self.step_s},
                                  self.env.request_timeout_ms)

    def on_halted(self, ctx) -> None:
        super().on_halted(ctx)
        self.send_stop()

    def check(self, ctx, force: np.ndarray, contact: str) -> NodeStatus | None:
        raise NotImplementedError

    def velocity(self, ctx, force: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class MoveUntilFF(_ForceLoop):
    """Advance along the tool +z axis until the filtered force exceeds ``threshold``.

    ``threshold`` is a magnitude in newtons, or ``fx,fy,fz`` with ``per_axis="true"``.
    """

    def __init__(self, env, params):
        super().__init__(env, params)
        raw = params.get("threshold", "5.0").replace(",", " ").split()
        values = [float(v) for v in raw]
        self.per_axis = _bool(params, "per_axis")
        if len(values) not in (1, 3):
            raise ValueError("threshold is one magnitude or three per-axis values")
        floor = noise_floor(self.sigma)
        if min(values) <= floor:
            raise ValueError(f"threshold {min(values)} N is not above the sensor noise floor {floor:.3g} N")
        self.threshold = values[0] if len(values) == 1 else tuple(values)
        self.speed = _float(params, "speed", 0.005)

    def reset_law(self, ctx) -> None:
        self.law = None

    def check(self, ctx, force, contact):
        if self.law is None:
            self.law = MoveUntilForce(self.tool.z_axis(), self.speed, self.threshold, self.per_axis)
        return SUCCESS if self.law.triggered(force) else None

    def velocity(self, ctx, force):
        return self.law.command(force)


class SearchAlign(_ForceLoop):
    """Archimedean spiral on the contact plane until the tip drops into a hole."""

    def __init__(self, env, params):
        super().__init__(env, params)
        self.spiral = SpiralParams(
            pitch=_float(params, "pitch", 0.001),
            max_radius=_float(params, "max_radius", 0.008),
            tangential_speed=_float(params, "speed", 0.005),
            contact_force=_float(params, "contact_force", 3.0),
        )
        for hole in env.scenario.holes.values():
            self.spiral.check_coverage(hole.detection_radius_m)

    def reset_law(self, ctx) -> None:
        self.law = SpiralSearch(self.spiral)

    def check(self, ctx, force, contact):
        if contact in IN_HOLE_STATES:
            return SUCCESS
        return None

    def velocity(self, ctx, force):
        return self.law.command(force, np.asarray(self.tool.position[:2]), self.step_s)


class NJInsert(_ForceLoop):
    """Non-jamming insertion; ``policy="straight"`` swaps in the plain push baseline."""

    def __init__(self, env, params):
        super().__init__(env, params)
        self.seat_threshold = _float(params, "seat_threshold", 10.0)
        self.tilt_deg = _float(params, "tilt_deg", 2.0)
        self.speed = _float(params, "speed", 0.005)
        self.press_force = _float(params, "press_force", 12.0)
        self.policy = params.get("policy", "nj")
        if self.policy not in ("nj", "straight"):
            raise ValueError("policy is nj or straight")
        self.object = params.get("object")

    def reset_law(self, ctx) -> None:
        if self.policy == "straight":
            self.law = StraightPush(self.speed, self.seat_threshold)
        else:
            self.law = NonJammingInsert(self.speed, self.tilt_deg, self.press_force, noise_floor(self.sigma),
                                        self.seat_threshold)

    def check(self, ctx, force, contact):
        if self.law.seated(force, contact):
            if self.object:
                ctx.bb.put(f"inserted/{self.object}", True)
            return SUCCESS
        return None

    def velocity(self, ctx, force):
        return self.law.command(force)


ACTIONS = {
    "MoveJoint": MoveJoint,
    "MoveEE": MoveEE,
    "Grasp": Grasp,
    "MoveUntilFF": MoveUntilFF,
    "SearchAlign": SearchAlign,
    "NJInsert": NJInsert,
    "EstimatePose": EstimatePose,
    "ComputeGrasp": ComputeGrasp,
}

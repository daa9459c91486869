"""Kinematic world model of the cell.

The model advances lazily: callers move it forward with :meth:`CellModel.advance_to`
(or :meth:`CellModel.step`), and joint trajectories are evaluated analytically
at the requested time. Cartesian servo commands integrate the contact model in
small substeps so jams are caught mid-motion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cellkit.geometry import JointVector, Pose6D, Wrench
from cellkit.sim.contact import FREE, JAMMED, ContactState, HoleSpec, hole_contact, peg_misalignment
from cellkit.sim.kinematics import fk, ik
from cellkit.sim.scenario import Scenario

SERVO_SUBSTEP_S = 0.001


@dataclass(frozen=True)
class WorldState:
    time_s: float
    tool_pose: Pose6D
    joints: JointVector
    gripper_aperture: float
    attached_object: str | None
    objects: dict[str, Pose6D]
    surface_height_m: float
    holes: dict[str, HoleSpec]
    contact: str = FREE

    def to_dict(self) -> dict:
        return {
            "time_s": self.time_s,
            "tool_pose": self.tool_pose.to_list(),
            "joints": list(self.joints.q),
            "gripper_aperture": self.gripper_aperture,
            "attached_object": self.attached_object,
            "objects": {k: v.to_list() for k, v in self.objects.items()},
            "contact": self.contact,
        }


@dataclass
class _Trajectory:
    start: np.ndarray
    goal: np.ndarray
    t0: float
    t1: float

    def at(self, t: float) -> np.ndarray:
        if t >= self.t1 or self.t1 <= self.t0:
            return self.goal
        s = (t - self.t0) / (self.t1 - self.t0)
        return self.start + s * (self.goal - self.start)


@dataclass
class _ServoSegment:
    velocity: np.ndarray
    t1: float
    substep_s: float


@dataclass
class _GripperMotion:
    a0: float
    a1: float
    t0: float
    t1: float
    attach: str | None

    def at(self, t: float) -> float:
        if t >= self.t1 or self.t1 <= self.t0:
            return self.a1
        return self.a0 + (t - self.t0) / (self.t1 - self.t0) * (self.a1 - self.a0)


class CellModel:
    def __init__(self, scenario: Scenario, start_time: float = 0.0):
        self.scenario = scenario
        self.time_s = float(start_time)
        self.reset()

    # -- lifecycle
    def reset(self) -> None:
        """Put the cell back in its initial configuration. Clears jams; time keeps running."""
        sc = self.scenario
        self._joints = sc.home.array()
        self._joints_stale = False
        self._tool = fk(self._joints, sc.dh)
        self._traj: _Trajectory | None = None
        self._grip: _GripperMotion | None = None
        self._servo: _ServoSegment | None = None
        self.aperture = 1.0
        self.attached: str | None = None
        self._attach_offset: Pose6D | None = None
        self.objects: dict[str, Pose6D] = {n: o.pose for n, o in sc.objects.items()}
        self.jammed = False
        self._contact = self._evaluate_contact()

    # -- time
    def advance_to(self, t: float) -> None:
        if t <= self.time_s:
            return
        if self._servo is not None:
            self._integrate_servo(t)
        if self._traj is not None:
            self._set_joints(self._traj.at(t))
            if t >= self._traj.t1:
                self._traj = None
        if self._grip is not None:
            self.aperture = self._grip.at(t)
            if t >= self._grip.t1:
                if self._grip.attach is not None:
                    self._attach(self._grip.attach)
                self._grip = None
        self.time_s = t

    def step(self, dt: float) -> WorldState:
        if not 0.0 < dt <= 0.01:
            raise ValueError("dt must lie in (0, 0.01]")
        self.advance_to(self.time_s + dt)
        return self.state()

    # -- arm
    @property
    def joints(self) -> JointVector:
        if self._joints_stale:
            q = ik(self._tool, self._joints, self.scenario.dh)
            if q is not None:
                self._joints = q.array()
            self._joints_stale = False
        return JointVector(tuple(self._joints))

    @property
    def tool_pose(self) -> Pose6D:
        return self._tool

    @property
    def moving(self) -> bool:
        return self._traj is not None

    def _set_joints(self, q: np.ndarray) -> None:
        self._joints = np.asarray(q, dtype=float)
        self._joints_stale = False
        self._set_tool(fk(self._joints, self.scenario.dh))

    def _set_tool(self, pose: Pose6D) -> None:
        self._tool = pose
        if self.attached is not None:
            self.objects[self.attached] = pose.compose(self._attach_offset)

    def start_trajectory(self, goal: JointVector, speed_rad_s: float | None = None) -> float | None:
        """Linear joint-space motion under a common velocity limit. Returns the duration,
        or ``None`` when the arm cannot move (jammed)."""
        if self.jammed:
            return None
        speed = speed_rad_s or self.scenario.planner.joint_speed_rad_s
        start = self.joints.array()
        target = goal.array()
        duration = float(np.max(np.abs(target - start))) / speed
        self._traj = _Trajectory(start, target, self.time_s, self.time_s + duration)
        if duration == 0.0:
            self._set_joints(target)
            self._traj = None
        return duration

    def stop(self) -> None:
        self._servo = None
        if self._traj is not None:
            self._set_joints(self._traj.at(self.time_s))
            self._traj = None

    def command_velocity(self, velocity, duration_s: float, substep_s: float = SERVO_SUBSTEP_S) -> None:
        """Hold a world-frame tool velocity (m/s) for ``duration_s`` from now; replaces any previous command."""
        self.stop()
        v = np.asarray(velocity, dtype=float)
        if v.shape != (3,) or not np.all(np.isfinite(v)):
            raise ValueError("velocity must be a finite 3-vector")
        if duration_s <= 0 or substep_s <= 0:
            raise ValueError("duration and substep must be positive")
        self._servo = _ServoSegment(v, self.time_s + duration_s, substep_s)

    def _integrate_servo(self, t: float) -> None:
        seg = self._servo
        end = min(t, seg.t1)
        span = end - self.time_s
        if span > 0:
            n = max(1, int(math.ceil(span / seg.substep_s - 1e-9)))
            h = span / n
            for _ in range(n):
                if not self.jammed:
                    pos = np.asarray(self._tool.position) + seg.velocity * h
                    self._set_tool(Pose6D(tuple(pos), self._tool.orientation))
                    self._joints_stale = True
                self._contact = self._evaluate_contact()
        if end >= seg.t1:
            self._servo = None

    def servo(self, velocity, duration_s: float, substep_s: float = SERVO_SUBSTEP_S) -> ContactState:
        """Translate the tool at constant ``velocity`` for ``duration_s`` and advance the clock.
        A jammed tool does not move."""
        self.command_velocity(velocity, duration_s, substep_s)
        self.advance_to(self.time_s + duration_s)
        return self._contact

    def place_tool(self, pose: Pose6D) -> None:
        """Teleport the tool (test and scenario setup)."""
        self.stop()
        self._set_tool(pose)
        self._joints_stale = True
        self._contact = self._evaluate_contact()

    # -- gripper
    def _graspable(self) -> str | None:
        tol = self.scenario.gripper.attach_tolerance_m
        for name, pose in self.objects.items():
            rec = self.scenario.grasp_db.get(name)
            if rec is None:
                continue
            target = pose.compose(rec.grasp_pose_in_object)
            if target.translation_error(self._tool) <= tol and target.rotation_error(self._tool) <= 0.2:
                return name
        return None

    def command_gripper(self, aperture: float) -> float:
        """Drive the fingers towards ``aperture`` (1 open, 0 closed); returns the motion duration."""
        if not 0.0 <= aperture <= 1.0:
            raise ValueError("aperture must lie in [0, 1]")
        self.advance_to(self.time_s)
        a0 = self.aperture
        target, attach = aperture, None
        if aperture < a0 and self.attached is None:
            obj = self._graspable()
            if obj is not None:
                width = self.scenario.objects[obj].width
                if aperture <= width:
                    target, attach = width, obj
        if aperture > a0 and self.attached is not None:
            self._detach()
        duration = abs(target - a0) / self.scenario.gripper.speed_per_s
        self._grip = _GripperMotion(a0, target, self.time_s, self.time_s + duration, attach)
        if duration == 0.0:
            self.aperture = target
            if attach:
                self._attach(attach)
            self._grip = None
        return duration

    def hold(self, name: str, tip: np.ndarray | None = None) -> None:
        """Put ``name`` in the closed gripper at its database grasp, optionally with its tip at ``tip``."""
        rec = self.scenario.grasp_db[name]
        obj = self.objects[name]
        if tip is not None:
            obj = Pose6D(tuple(float(v) for v in tip), obj.orientation)
        self.place_tool(obj.compose(rec.grasp_pose_in_object))
        self.objects[name] = obj
        self.aperture = self.scenario.objects[name].width
        self._attach(name)
        self._contact = self._evaluate_contact()

    @property
    def gripper_moving(self) -> bool:
        return self._grip is not None

    def _attach(self, name: str) -> None:
        self.attached = name
        self._attach_offset = self._tool.inverse().compose(self.objects[name])

    def _detach(self) -> None:
        self.attached = None
        self._attach_offset = None
        self._contact = self._evaluate_contact()

    # -- contact
    def _evaluate_contact(self) -> ContactState:
        sc = self.scenario
        if self.attached is not None:
            peg = self.objects[self.attached]
            tip = np.asarray(peg.position)
            mis = peg_misalignment(peg)
            is_peg = True
        else:
            tip = np.asarray(self._tool.position)
            mis, is_peg = 0.0, False
        c = hole_contact(tip, mis, sc.surface_height_m, sc.holes, sc.contact, is_peg=is_peg, jammed=self.jammed)
        if c.classification == JAMMED:
            self.jammed = True
        return c

    def contact(self) -> ContactState:
        self._contact = self._evaluate_contact()
        return self._contact

    def wrench(self) -> Wrench:
        return self.contact().wrench

    def insertion_depth(self) -> float:
        """Depth of the held peg's tip below the board surface, capped at the bore bottom of the
        nearest hole (spring penetration into the bottom is a model artefact, not insertion)."""
        tip = self.objects[self.attached].position if self.attached else self._tool.position
        depth = self.scenario.surface_height_m - tip[2]
        c = self._contact
        if c.hole is not None:
            depth = min(depth, self.scenario.holes[c.hole].depth_m)
        return depth

    # -- snapshot
    def state(self) -> WorldState:
        sc = self.scenario
        return WorldState(self.time_s, self._tool, self.joints, self.aperture, self.attached, dict(self.objects),
                          sc.surface_height_m, dict(sc.holes), self._contact.classification)

    def observe(self) -> dict:
        """Ground truth for the camera: tool pose plus every object and hole pose."""
        return {
            "tool_pose": self._tool.to_list(),
            "objects": {k: v.to_list() for k, v in self.objects.items()},
            "holes": {k: h.center.to_list() for k, h in self.scenario.holes.items()},
        }

    # -- message interface used by the world component
    def handle(self, op: str, args: dict) -> dict:
        if op == "state":
            st = self.state()
            return {"ok": True, **st.to_dict(), "moving": self.moving, "gripper_moving": self.gripper_moving,
                    "jammed": self.jammed}
        if op == "trajectory":
            dur = self.start_trajectory(JointVector(tuple(args["goal"])), args.get("speed_rad_s"))
            if dur is None:
                return {"ok": False, "reason": "arm is jammed"}
            return {"ok": True, "duration_s": dur}
        if op == "stop":
            self.stop()
            return {"ok": True}
        if op == "servo":
            if self.jammed:
                return {"ok": False, "reason": "arm is jammed", "tool_pose": self._tool.to_list()}
            self.command_velocity(args["velocity"], float(args["duration_s"]))
            return {"ok": True, "tool_pose": self._tool.to_list()}
        if op == "gripper":
            dur = self.command_gripper(float(args["aperture"]))
            return {"ok": True, "duration_s": dur}
        if op == "wrench":
            c = self.contact()
            return {"ok": True, "contact": c.classification, "wrench": c.wrench.to_list()}
        if op == "observe":
            return {"ok": True, **self.observe()}
        if op == "reset":
            self.reset()
            return {"ok": True}
        return {"ok": False, "reason": f"unknown world op {op!r}"}

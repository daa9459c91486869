"""Transport-free control laws behind the force skills.

Each law maps one filtered force reading to a world-frame tool velocity. The
bus skills feed them from ``svc/ft.read`` and send the result to
``svc/arm.servo``; :func:`run_law` drives them directly against a
:class:`~cellkit.sim.cell.CellModel` for batch experiments.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

IN_HOLE_STATES = ("in_hole", "seated")


@dataclass(frozen=True)
class SpiralParams:
    pitch: float = 0.001
    max_radius: float = 0.008
    tangential_speed: float = 0.005
    contact_force: float = 3.0

    def __post_init__(self) -> None:
        if not self.pitch > 0 or not self.max_radius > 0 or not self.tangential_speed > 0:
            raise ValueError("pitch, max_radius and tangential_speed must be positive")

    def check_coverage(self, detection_radius: float) -> None:
        if self.pitch > 2.0 * detection_radius:
            raise ValueError(f"pitch {self.pitch} exceeds detection diameter {2 * detection_radius}")

    def path_length_bound(self) -> float:
        return math.pi * self.max_radius ** 2 / self.pitch + 2.0 * math.pi * self.max_radius


def noise_floor(sigma_n: float) -> float:
    return 3.0 * sigma_n


class BlockAverage:
    """Mean of the last ``n`` samples."""

    def __init__(self, n: int = 5):
        self.buf: deque[np.ndarray] = deque(maxlen=n)

    def add(self, x) -> np.ndarray:
        self.buf.append(np.asarray(x, dtype=float))
        return np.mean(self.buf, axis=0)


def _force_hold(fz: float, target: float, speed: float, ramp: float) -> float:
    """Vertical velocity (negative is down) that settles the axial reaction at ``target``."""
    return -speed * max(-1.0, min(1.0, (target - fz) / ramp))


@dataclass
class MoveUntilForce:
    """Travel along ``axis`` at ``speed`` until the force magnitude (or any axis) exceeds the threshold."""

    axis: np.ndarray
    speed: float = 0.005
    threshold: tuple[float, float, float] | float = 5.0
    per_axis: bool = False

    def triggered(self, force) -> bool:
        f = np.asarray(force, dtype=float)
        if self.per_axis:
            th = np.broadcast_to(np.asarray(self.threshold, dtype=float), (3,))
            return bool(np.any(np.abs(f) > th))
        th = float(np.linalg.norm(self.threshold)) if np.ndim(self.threshold) else float(self.threshold)
        return float(np.linalg.norm(f)) > th

    def command(self, force) -> np.ndarray:
        if self.triggered(force):
            return np.zeros(3)
        a = np.asarray(self.axis, dtype=float)
        return self.speed * a / np.linalg.norm(a)


@dataclass
class SpiralSearch:
    """Archimedean spiral r = pitch * theta / 2pi around the start point, pressing with ``contact_force``."""

    params: SpiralParams = field(default_factory=SpiralParams)
    origin: np.ndarray | None = None
    theta: float = 0.0
    force_ramp: float = 2.0

    def start(self, xy) -> None:
        self.origin = np.asarray(xy, dtype=float)[:2].copy()
        self.theta = 0.0

    @property
    def radius(self) -> float:
        return self.params.pitch * self.theta / (2.0 * math.pi)

    @property
    def exhausted(self) -> bool:
        return self.radius > self.params.max_radius

    def point(self, theta: float) -> np.ndarray:
        r = self.params.pitch * theta / (2.0 * math.pi)
        return self.origin + r * np.array([math.cos(theta), math.sin(theta)])

    def command(self, force, tool_xy, dt: float) -> np.ndarray:
        if self.origin is None:
            self.start(tool_xy)
        p = self.params
        b = p.pitch / (2.0 * math.pi)
        vz = _force_hold(float(force[2]), p.contact_force, p.tangential_speed, self.force_ramp)
        if self.exhausted:
            return np.array([0.0, 0.0, vz])
        # arc-length step ds = sqrt(r^2 + b^2) dtheta
        self.theta += p.tangential_speed * dt / math.hypot(self.radius, b)
        vxy = (self.point(self.theta) - np.asarray(tool_xy, dtype=float)[:2]) / dt
        return np.array([vxy[0], vxy[1], vz])


@dataclass
class NonJammingInsert:
    """Descend while steering ``tilt_deg`` off the axis, away from the dominant lateral reaction.

    The axial reaction is held near ``press_force`` so it stays between the seat
    threshold and the jam force. Below ``noise_floor`` the lateral force is
    treated as noise and the push is straight.
    """

    speed: float = 0.005
    tilt_deg: float = 2.0
    press_force: float = 12.0
    noise_floor: float = 1.5
    seat_threshold: float = 10.0
    force_ramp: float = 4.0
    directions: list = field(default_factory=list)

    def command(self, force) -> np.ndarray:
        f = np.asarray(force, dtype=float)
        tilt = math.radians(self.tilt_deg)
        lat = f[:2]
        n = float(np.linalg.norm(lat))
        if n >= self.noise_floor:
            # reaction force points back at the hole axis: push along it
            u = lat / n
            self.directions.append(u)
        else:
            u = np.zeros(2)
        vz = _force_hold(float(f[2]), self.press_force, self.speed * math.cos(tilt), self.force_ramp)
        vxy = self.speed * math.sin(tilt) * u
        return np.array([vxy[0], vxy[1], vz])

    def seated(self, force, contact: str) -> bool:
        return contact == "seated" and float(force[2]) > self.seat_threshold


@dataclass
class StraightPush:
    """Baseline: constant descent along the axis, no force regulation."""

    speed: float = 0.005
    seat_threshold: float = 10.0

    def command(self, force) -> np.ndarray:
        return np.array([0.0, 0.0, -self.speed])

    def seated(self, force, contact: str) -> bool:
        return contact == "seated" and float(force[2]) > self.seat_threshold


def direction_autocorrelation(directions) -> float:
    """Mean cosine between consecutive commanded lateral directions (1 for a steady heading)."""
    d = [np.asarray(u, dtype=float) for u in directions]
    if len(d) < 2:
        return 1.0
    return float(np.mean([a @ b for a, b in zip(d[:-1], d[1:])]))


@dataclass
class LawResult:
    done: bool
    steps: int
    contact: str
    path_length: float
    final_position: np.ndarray


def run_law(cell, law, *, step_s: float = 0.01, max_steps: int = 10_000, sigma_n: float = 0.0,
            samples: int = 5, rng: np.random.Generator | None = None, substep_s: float | None = None) -> LawResult:
    """Close the loop between a law and the world model without the bus.

    Each step reads ``samples`` noisy wrench samples, averages them, commands the
    law's velocity for ``step_s`` and checks the law's completion condition.
    """
    rng = rng or np.random.default_rng(0)
    sub = substep_s or step_s
    path = 0.0
    for k in range(max_steps):
        c = cell.contact()
        f = np.asarray(c.wrench.force)
        if sigma_n > 0:
            f = f + rng.normal(0.0, sigma_n, size=(samples, 3)).mean(axis=0)
        tool = np.asarray(cell.tool_pose.position)
        if isinstance(law, SpiralSearch):
            if c.classification in IN_HOLE_STATES:
                return LawResult(True, k, c.classification, path, tool)
            v = law.command(f, tool[:2], step_s)
        elif isinstance(law, MoveUntilForce):
            if law.triggered(f):
                return LawResult(True, k, c.classification, path, tool)
            v = law.command(f)
        else:
            if law.seated(f, c.classification):
                return LawResult(True, k, c.classification, path, tool)
            v = law.command(f)
        cell.servo(v, step_s, substep_s=sub)
        path += float(np.linalg.norm(np.asarray(cell.tool_pose.position)[:2] - tool[:2]))
    c = cell.contact()
    return LawResult(False, max_steps, c.classification, path, np.asarray(cell.tool_pose.position))

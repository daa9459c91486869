"""Peg / taskboard contact with a linear-spring penalty model.

Geometry around a hole of radius R, clearance c and detection radius w (all
lateral distances ``e`` measured from the hole axis to the tip centre):

* ``e >= w``: flat board at ``surface_height``.
* ``c < e < w``: conical entry chamfer; the support height falls linearly
  from the board surface at ``e = w`` towards the bore at ``e = c``. The cone
  normal pushes the tip back towards the axis.
* ``e <= c``: the bore; the tip is supported only by the hole bottom.

Jamming is absorbing: callers keep the flag and pass it back in; only a world reset clears it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cellkit.geometry import Pose6D, Wrench

FREE, SURFACE, IN_HOLE, SEATED, JAMMED = "free", "surface", "in_hole", "seated", "jammed"
CLASSIFICATIONS = (FREE, SURFACE, IN_HOLE, SEATED, JAMMED)


@dataclass(frozen=True)
class HoleSpec:
    center: Pose6D
    radius_m: float = 0.004
    clearance_m: float = 0.00005
    depth_m: float = 0.015
    detection_radius_m: float = 0.002

    def __post_init__(self) -> None:
        if not 0 < self.clearance_m < self.detection_radius_m:
            raise ValueError("need 0 < clearance < detection radius")
        if self.radius_m <= self.clearance_m or self.depth_m <= 0:
            raise ValueError("hole radius must exceed clearance and depth must be positive")


@dataclass(frozen=True)
class ContactParams:
    k_n: float = 1e4
    chamfer_angle_deg: float = 45.0
    jam_angle_deg: float = 1.5
    jam_force_n: float = 15.0
    seat_threshold_n: float = 10.0
    seat_tolerance_m: float = 1e-4


@dataclass(frozen=True)
class ContactState:
    classification: str
    wrench: Wrench
    lateral_offset_m: float = math.inf
    hole: str | None = None


ZERO = Wrench()


def _nearest_hole(tip: np.ndarray, holes: dict[str, HoleSpec]) -> tuple[str | None, HoleSpec | None, float, np.ndarray]:
    best = (None, None, math.inf, np.zeros(2))
    for name, h in holes.items():
        d = tip[:2] - np.asarray(h.center.position[:2])
        e = float(math.hypot(d[0], d[1]))
        if e < best[2]:
            best = (name, h, e, d)
    return best


def hole_contact(tip: np.ndarray, misalignment_rad: float, surface_height: float, holes: dict[str, HoleSpec],
                 params: ContactParams, is_peg: bool = True, jammed: bool = False) -> ContactState:
    """Classify the tip against the board and return the reaction wrench on the tool (world frame).

    ``tip`` is the tip centre; ``misalignment_rad`` the angle between the peg axis and the hole axis.
    """
    tip = np.asarray(tip, dtype=float)
    z = float(tip[2])
    name, hole, e, radial = _nearest_hole(tip, holes)
    k = params.k_n
    beta = math.radians(params.chamfer_angle_deg)

    if hole is None or e >= hole.detection_radius_m:
        delta = surface_height - z
        if jammed:
            return ContactState(JAMMED, Wrench((0.0, 0.0, k * max(delta, 0.0))), e, name)
        if delta <= 0.0:
            return ContactState(FREE, ZERO, e, name)
        return ContactState(SURFACE, Wrench((0.0, 0.0, k * delta)), e, name)

    c, w = hole.clearance_m, hole.detection_radius_m
    below_surface = z < surface_height
    if e > c:
        support = surface_height - (w - e) * math.tan(beta)
        delta = support - z
        force = (0.0, 0.0, 0.0)
        if delta > 0.0:
            normal = k * delta * math.cos(beta)
            u = -radial / e  # towards the axis
            lat = normal * math.sin(beta)
            force = (lat * u[0], lat * u[1], normal * math.cos(beta))
        wrench = Wrench(force)
        if jammed:
            return ContactState(JAMMED, wrench, e, name)
        if not below_surface:
            return ContactState(FREE, ZERO, e, name)
        if is_peg and (misalignment_rad > math.radians(params.jam_angle_deg) or force[2] > params.jam_force_n):
            return ContactState(JAMMED, wrench, e, name)
        return ContactState(IN_HOLE, wrench, e, name)

    bottom = surface_height - hole.depth_m
    delta = bottom - z
    wrench = Wrench((0.0, 0.0, k * delta)) if delta > 0.0 else ZERO
    if jammed:
        return ContactState(JAMMED, wrench, e, name)
    if not below_surface:
        return ContactState(FREE, ZERO, e, name)
    if is_peg and misalignment_rad > math.radians(params.jam_angle_deg):
        return ContactState(JAMMED, wrench, e, name)
    if z <= bottom + params.seat_tolerance_m and wrench.force[2] >= params.seat_threshold_n:
        return ContactState(SEATED, wrench, e, name)
    return ContactState(IN_HOLE, wrench, e, name)


def peg_misalignment(peg_pose: Pose6D, hole: HoleSpec | None = None) -> float:
    """Angle between the peg's +z axis and the hole axis (world +z unless the hole frame says otherwise)."""
    axis = peg_pose.z_axis()
    ref = hole.center.z_axis() if hole is not None else np.array([0.0, 0.0, 1.0])
    return float(math.acos(max(-1.0, min(1.0, float(axis @ ref)))))

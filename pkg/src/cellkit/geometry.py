"""Rigid-body value types shared by the executor, the cell and the wire format.

Quaternions are stored scalar-first ``(w, x, y, z)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
JOINT_LIMIT = TWO_PI


def _tuple(values: Iterable[float], n: int, what: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) != n:
        raise ValueError(f"{what} needs {n} components, got {len(out)}")
    return out


def quat_multiply(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: Sequence[float]) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite quaternion")
    q = q / n
    # canonical hemisphere keeps equality checks stable
    if q[0] < 0.0:
        q = -q
    return q


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    s = math.sin(angle / 2.0) / n
    return np.array([math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; robust for all rotation matrices."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def rotation_vector(q: Sequence[float]) -> np.ndarray:
    """Axis-angle vector (axis * angle) of a unit quaternion, angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * math.atan2(s, q[0])
    return v / s * angle


@dataclass(frozen=True)
class Pose6D:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _tuple(self.position, 3, "position"))
        q = _tuple(self.orientation, 4, "orientation")
        if not all(math.isfinite(v) for v in self.position + q):
            raise ValueError("pose components must be finite")
        if abs(math.sqrt(sum(v * v for v in q)) - 1.0) > 1e-9:
            q = tuple(quat_normalize(q))
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> "Pose6D":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose6D":
        return cls(tuple(m[:3, 3]), tuple(matrix_to_quat(m[:3, :3])))

    @classmethod
    def from_xyz_rpy(cls, xyz: Sequence[float], rpy: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose6D":
        r, p, y = rpy
        q = quat_multiply(quat_from_axis_angle((0, 0, 1), y),
                          quat_multiply(quat_from_axis_angle((0, 1, 0), p),
                                        quat_from_axis_angle((1, 0, 0), r)))
        return cls(tuple(xyz), tuple(quat_normalize(q)))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.orientation)
        m[:3, 3] = self.position
        return m

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def compose(self, other: "Pose6D") -> "Pose6D":
        """``self ∘ other``: ``other`` expressed in the frame of ``self``."""
        r = quat_to_matrix(self.orientation)
        p = np.asarray(self.position) + r @ np.asarray(other.position)
        q = quat_normalize(quat_multiply(self.orientation, other.orientation))
        return Pose6D(tuple(p), tuple(q))

    __matmul__ = compose

    def inverse(self) -> "Pose6D":
        qc = quat_conjugate(self.orientation)
        p = -(quat_to_matrix(qc) @ np.asarray(self.position))
        return Pose6D(tuple(p), tuple(quat_normalize(qc)))

    def translation_error(self, other: "Pose6D") -> float:
        return float(np.linalg.norm(np.subtract(self.position, other.position)))

    def rotation_error(self, other: "Pose6D") -> float:
        rel = quat_multiply(quat_conjugate(self.orientation), other.orientation)
        return float(np.linalg.norm(rotation_vector(rel)))

    def z_axis(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)[:, 2]

    def to_list(self) -> list[float]:
        return list(self.position) + list(self.orientation)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose6D":
        values = list(values)
        return cls(tuple(values[:3]), tuple(values[3:7]))


@dataclass(frozen=True)
class JointVector:
    q: tuple[float, ...] = (0.0,) * 6

    def __post_init__(self) -> None:
        q = _tuple(self.q, 6, "joint vector")
        for i, v in enumerate(q):
            if not math.isfinite(v) or abs(v) > JOINT_LIMIT + 1e-12:
                raise ValueError(f"joint {i} = {v} outside [-2pi, 2pi]")
        object.__setattr__(self, "q", q)

    def array(self) -> np.ndarray:
        return np.array(self.q)

    def max_abs_diff(self, other: "JointVector") -> float:
        return float(np.max(np.abs(np.subtract(self.q, other.q))))


@dataclass(frozen=True)
class Wrench:
    force: tuple[float, float, float] = (0.0, 0.0, 0.0)
    torque: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        f = _tuple(self.force, 3, "force")
        t = _tuple(self.torque, 3, "torque")
        if not all(math.isfinite(v) for v in f + t):
            raise ValueError("wrench components must be finite")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    def magnitude(self) -> float:
        return math.sqrt(sum(v * v for v in self.force))

    def exceeds(self, threshold: "Wrench", per_axis: bool = False) -> bool:
        """Force-magnitude test by default; per-axis compares |component| against each non-zero threshold."""
        if not per_axis:
            return self.magnitude() > threshold.magnitude()
        pairs = zip(self.force + self.torque, threshold.force + threshold.torque)
        return any(t != 0.0 and abs(v) > abs(t) for v, t in pairs)

    def to_list(self) -> list[float]:
        return list(self.force) + list(self.torque)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Wrench":
        values = list(values)
        return cls(tuple(values[:3]), tuple(values[3:6]))


@dataclass(frozen=True)
class GraspRecord:
    object_name: str
    grasp_pose_in_object: Pose6D = field(default_factory=Pose6D)
    closure: float = 1.0

    def __post_init__(self) -> None:
        if not self.object_name:
            raise ValueError("object_name must be non-empty")
        if not 0.0 <= self.closure <= 1.0:
            raise ValueError(f"closure {self.closure} outside [0, 1]")

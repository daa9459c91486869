"""Standard-DH forward kinematics and damped least-squares inverse kinematics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cellkit.geometry import JOINT_LIMIT, JointVector, Pose6D, quat_conjugate, quat_multiply, rotation_vector

# UR5e-like elbow arm: (a [m], alpha [rad], d [m], theta_offset [rad])
DEFAULT_DH = (
    (0.0, math.pi / 2, 0.1625, 0.0),
    (-0.425, 0.0, 0.0, 0.0),
    (-0.3922, 0.0, 0.0, 0.0),
    (0.0, math.pi / 2, 0.1333, 0.0),
    (0.0, -math.pi / 2, 0.0997, 0.0),
    (0.0, 0.0, 0.0996, 0.0),
)


@dataclass(frozen=True)
class DHParams:
    rows: tuple[tuple[float, float, float, float], ...] = DEFAULT_DH

    def __post_init__(self) -> None:
        rows = tuple(tuple(float(v) for v in row) for row in self.rows)
        if len(rows) != 6 or any(len(r) != 4 for r in rows):
            raise ValueError("DH table needs six rows of (a, alpha, d, theta_offset)")
        if not all(math.isfinite(v) for r in rows for v in r):
            raise ValueError("DH parameters must be finite")
        object.__setattr__(self, "rows", rows)

    @property
    def reach(self) -> float:
        """Upper bound on the distance from the base origin to the tool origin."""
        return sum(abs(a) + abs(d) for a, _, d, _ in self.rows)


def dh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _frames(q: Sequence[float], dh: DHParams) -> list[np.ndarray]:
    out = [np.eye(4)]
    t = np.eye(4)
    for qi, (a, alpha, d, off) in zip(q, dh.rows):
        t = t @ dh_transform(a, alpha, d, qi + off)
        out.append(t)
    return out


def fk_matrix(q: Sequence[float], dh: DHParams = DHParams()) -> np.ndarray:
    return _frames(q, dh)[-1]


def fk(q: JointVector | Sequence[float], dh: DHParams = DHParams()) -> Pose6D:
    qv = q.q if isinstance(q, JointVector) else q
    return Pose6D.from_matrix(fk_matrix(qv, dh))


def jacobian(q: Sequence[float], dh: DHParams = DHParams()) -> tuple[np.ndarray, np.ndarray]:
    """Geometric Jacobian (linear rows first) and the tool transform."""
    frames = _frames(q, dh)
    p_end = frames[-1][:3, 3]
    j = np.zeros((6, 6))
    for i in range(6):
        z = frames[i][:3, 2]
        p = frames[i][:3, 3]
        j[:3, i] = np.cross(z, p_end - p)
        j[3:, i] = z
    return j, frames[-1]


def pose_error(goal: Pose6D, current: np.ndarray) -> np.ndarray:
    cur = Pose6D.from_matrix(current)
    dp = np.subtract(goal.position, cur.position)
    # rotation taking current to goal, expressed in the base frame
    dq = quat_multiply(goal.orientation, quat_conjugate(cur.orientation))
    return np.concatenate([dp, rotation_vector(dq)])


def _wrap(q: np.ndarray) -> np.ndarray:
    # keep joints inside [-2pi, 2pi] without changing the pose
    return np.where(q > JOINT_LIMIT, q - 2 * math.pi, np.where(q < -JOINT_LIMIT, q + 2 * math.pi, q))


def ik(goal: Pose6D, seed: JointVector | Sequence[float], dh: DHParams = DHParams(), *,
       max_iter: int = 500, tol_pos: float = 1e-6, tol_rot: float = 1e-5, damping: float = 1e-2) -> JointVector | None:
    """Levenberg-Marquardt style damped least squares. Returns ``None`` when no solution is found."""
    if np.linalg.norm(goal.position) > dh.reach:
        return None
    q = np.array(seed.q if isinstance(seed, JointVector) else seed, dtype=float)
    lam = damping
    j, t = jacobian(q, dh)
    err = pose_error(goal, t)
    cost = float(err @ err)
    for _ in range(max_iter):
        if np.linalg.norm(err[:3]) < tol_pos and np.linalg.norm(err[3:]) < tol_rot:
            return JointVector(tuple(_wrap(q)))
        jt = j.T
        dq = jt @ np.linalg.solve(j @ jt + (lam ** 2) * np.eye(6), err)
        q_new = q + dq
        j_new, t_new = jacobian(q_new, dh)
        err_new = pose_error(goal, t_new)
        cost_new = float(err_new @ err_new)
        if cost_new < cost:
            q, j, err, cost = q_new, j_new, err_new, cost_new
            lam = max(lam * 0.3, 1e-9)
        else:
            lam = min(lam * 4.0, 1e3)
    if np.linalg.norm(err[:3]) < tol_pos and np.linalg.norm(err[3:]) < tol_rot:
        return JointVector(tuple(_wrap(q)))
    return None

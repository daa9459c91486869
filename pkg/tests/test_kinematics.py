import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellkit.geometry import JointVector, Pose6D, Wrench, GraspRecord, quat_from_axis_angle
from cellkit.sim.kinematics import DEFAULT_DH, DHParams, fk, fk_matrix, ik

# pinned from an independent Rz(theta) Tz(d) Tx(a) Rx(alpha) product of the default table
ZERO_POSE = np.array([
    [1.0, 0.0, 0.0, -0.8172],
    [0.0, 0.0, -1.0, -0.2329],
    [0.0, 1.0, 0.0, 0.0628],
    [0.0, 0.0, 0.0, 1.0],
])
LIPSCHITZ_M_PER_RAD = 1.2


def dh_oracle(q, rows=DEFAULT_DH):
    t = np.eye(4)
    for (a, alpha, d, off), qi in zip(rows, q):
        th = qi + off
        rz = np.array([[math.cos(th), -math.sin(th), 0, 0], [math.sin(th), math.cos(th), 0, 0], [0, 0, 1, d], [0, 0, 0, 1]])
        rx = np.array([[1, 0, 0, a], [0, math.cos(alpha), -math.sin(alpha), 0], [0, math.sin(alpha), math.cos(alpha), 0],
                       [0, 0, 0, 1]])
        t = t @ rz @ rx
    return t


finite = st.floats(-5, 5, allow_nan=False)
angles = st.floats(-math.pi, math.pi, allow_nan=False)
poses = st.builds(lambda p, r: Pose6D.from_xyz_rpy(p, r), st.tuples(finite, finite, finite),
                  st.tuples(angles, angles, angles))
joint_q = st.tuples(*[st.floats(-math.pi, math.pi, allow_nan=False)] * 6)


# geometry

def test_pose_normalizes_quaternion():
    p = Pose6D((0, 0, 0), (2.0, 0.0, 0.0, 0.0))
    assert p.orientation == (1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        Pose6D((math.nan, 0, 0))


@settings(max_examples=200)
@given(poses, poses, poses)
def test_pose_group_laws(a, b, c):
    left = a.compose(b).compose(c)
    right = a.compose(b.compose(c))
    assert left.translation_error(right) < 1e-9 and left.rotation_error(right) < 1e-9
    ident = a.compose(a.inverse())
    assert ident.translation_error(Pose6D()) < 1e-9 and ident.rotation_error(Pose6D()) < 1e-9
    assert abs(np.linalg.norm(a.orientation) - 1.0) < 1e-9


@settings(max_examples=100)
@given(poses)
def test_pose_matrix_roundtrip(p):
    q = Pose6D.from_matrix(p.matrix())
    assert q.translation_error(p) < 1e-9 and q.rotation_error(p) < 1e-9
    assert Pose6D.from_list(p.to_list()) == p


def test_joint_limits():
    JointVector((2 * math.pi,) * 6)
    with pytest.raises(ValueError):
        JointVector((7.0, 0, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        JointVector((0.0,) * 5)


def test_wrench_threshold_modes():
    w = Wrench((3.0, 4.0, 0.0))
    assert w.magnitude() == 5.0
    assert w.exceeds(Wrench((0, 0, 4.9)))
    assert not w.exceeds(Wrench((0, 0, 5.0)))
    assert w.exceeds(Wrench((2.0, 0, 0)), per_axis=True)
    assert not w.exceeds(Wrench((0, 0, 1.0)), per_axis=True)


def test_grasp_record_validation():
    with pytest.raises(ValueError):
        GraspRecord("")
    with pytest.raises(ValueError):
        GraspRecord("x", closure=1.5)


# forward kinematics

def test_fk_zero_matches_pinned_home():
    np.testing.assert_allclose(fk_matrix([0.0] * 6), ZERO_POSE, atol=1e-9)
    np.testing.assert_allclose(dh_oracle([0.0] * 6), ZERO_POSE, atol=1e-9)


def test_fk_matches_oracle_on_random_configurations():
    rng = np.random.default_rng(2)
    for _ in range(200):
        q = rng.uniform(-2 * math.pi, 2 * math.pi, 6)
        np.testing.assert_allclose(fk_matrix(q), dh_oracle(q), atol=1e-12)


def test_fk_lipschitz():
    rng = np.random.default_rng(3)
    for _ in range(500):
        q = rng.uniform(-math.pi, math.pi, 6)
        d = rng.normal(size=6)
        d *= 1e-3 / np.linalg.norm(d)
        step = np.linalg.norm(np.subtract(fk(q + d).position, fk(q).position))
        assert step <= LIPSCHITZ_M_PER_RAD * 1e-3


def test_fk_planar_chain():
    rows = ((0.5, 0.0, 0.0, 0.0), (0.3, 0.0, 0.0, 0.0), (0.2, 0.0, 0.0, 0.0),
            (0.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 0.0))
    dh = DHParams(rows)
    q = (0.3, -0.7, 1.1, 0.0, 0.0, 0.0)
    c = np.cumsum(q[:3])
    x = 0.5 * math.cos(c[0]) + 0.3 * math.cos(c[1]) + 0.2 * math.cos(c[2])
    y = 0.5 * math.sin(c[0]) + 0.3 * math.sin(c[1]) + 0.2 * math.sin(c[2])
    np.testing.assert_allclose(fk(q, dh).position, (x, y, 0.0), atol=1e-12)


def test_dh_validation():
    with pytest.raises(ValueError):
        DHParams(DEFAULT_DH[:5])
    with pytest.raises(ValueError):
        DHParams(((math.inf, 0, 0, 0),) + DEFAULT_DH[1:])


# inverse kinematics

def test_ik_identity_seed():
    q = JointVector((0.2, -1.2, 1.4, -1.5, -1.4, 0.3))
    sol = ik(fk(q), q)
    assert sol is not None and sol.max_abs_diff(q) < 1e-6


def _in_workspace(rng):
    # away from the wrist and shoulder singularities
    return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-2.5, -0.6), rng.uniform(0.4, 2.4),
                     rng.uniform(-math.pi, math.pi), rng.uniform(0.3, 2.8) * rng.choice([-1, 1]),
                     rng.uniform(-math.pi, math.pi)])


def ik_roundtrip_errors(n, seed):
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, 0
    for _ in range(n):
        q = _in_workspace(rng)
        goal = fk(q)
        sol = ik(goal, q + 0.1 * rng.uniform(-1, 1, 6))
        if sol is None:
            failures += 1
            continue
        worst = max(worst, fk(sol).translation_error(goal))
    return worst, failures


def test_ik_roundtrip_sample():
    worst, failures = ik_roundtrip_errors(100, 4)
    assert failures == 0 and worst < 1e-6


def test_ik_unreachable():
    far = Pose6D((2 * DHParams().reach, 0.0, 0.0))
    assert ik(far, JointVector()) is None
    just_out = Pose6D((1.5, 0.0, 0.3))
    assert ik(just_out, JointVector((0.0, -1.0, 1.0, 0.0, 1.0, 0.0))) is None


def test_ik_result_within_limits():
    q = JointVector((3.0, -1.0, 1.5, 3.0, 1.0, 3.0))
    sol = ik(fk(q), np.asarray(q.q) + 0.05)
    assert sol is not None and all(abs(v) <= 2 * math.pi for v in sol.q)


def test_axis_angle_quaternion():
    q = quat_from_axis_angle((0, 0, 1), math.pi)
    np.testing.assert_allclose(np.abs(q), (0, 0, 0, 1), atol=1e-12)

import math
from importlib.resources import files

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellkit.bt import Blackboard, InstantiationError, NodeStatus, load_tree, parse_tree
from cellkit.geometry import GraspRecord, Pose6D
from cellkit.harness.executor import Executor
from cellkit.sim.cell import CellModel
from cellkit.sim.launch import SimCell
from cellkit.sim.scenario import SensorConfig, load_scenario
from cellkit.skills import (BlockAverage, MoveUntilForce, NonJammingInsert, SpiralParams, SpiralSearch, StraightPush,
                            compose_grasp, direction_autocorrelation, noise_floor, run_law)

from oracles import spiral_bound

SC = load_scenario()
HOLE = np.array(SC.holes["housing_hole"].center.position)
SURF = SC.surface_height_m
DOWN = (0.0, 1.0, 0.0, 0.0)
TREES = str(files("cellkit.data") / "trees")


# control laws

def test_spiral_params_bound_and_coverage():
    p = SpiralParams()
    assert p.path_length_bound() == pytest.approx(spiral_bound(0.008, 0.001))
    assert p.path_length_bound() == pytest.approx(0.2513, abs=1e-4)
    p.check_coverage(0.002)
    with pytest.raises(ValueError):
        SpiralParams(pitch=0.005).check_coverage(0.002)
    with pytest.raises(ValueError):
        SpiralParams(pitch=0.0)


def test_spiral_traces_archimedean_path():
    law = SpiralSearch(SpiralParams())
    law.start((0.0, 0.0))
    xy = np.zeros(2)
    for _ in range(2000):
        v = law.command(np.zeros(3), xy, 0.01)
        xy = xy + v[:2] * 0.01
        assert abs(np.hypot(*xy) - law.radius) < 1e-9
    # radius grows one pitch per turn
    assert law.radius == pytest.approx(0.001 * law.theta / (2 * math.pi))


def test_spiral_presses_toward_contact_force():
    law = SpiralSearch(SpiralParams())
    law.start((0.0, 0.0))
    assert law.command(np.zeros(3), np.zeros(2), 0.01)[2] < 0  # no contact: descend
    assert law.command(np.array([0, 0, 3.0]), np.zeros(2), 0.01)[2] == pytest.approx(0.0)
    assert law.command(np.array([0, 0, 10.0]), np.zeros(2), 0.01)[2] > 0


def spiral_trial(rng, radius=0.006):
    r = radius * math.sqrt(rng.random())
    a = rng.random() * 2 * math.pi
    start = HOLE[:2] - r * np.array([math.cos(a), math.sin(a)])
    cell = CellModel(SC)
    cell.place_tool(Pose6D((start[0], start[1], SURF - 0.0003), DOWN))
    p = SpiralParams()
    return run_law(cell, SpiralSearch(p), max_steps=int(p.path_length_bound() / (p.tangential_speed * 0.01)) + 100)


def test_spiral_finds_hole_within_bound_sample():
    rng = np.random.default_rng(0)
    bound = SpiralParams().path_length_bound()
    for _ in range(30):
        res = spiral_trial(rng)
        assert res.done and res.contact in ("in_hole", "seated")
        assert res.path_length <= bound


def test_spiral_gives_up_far_from_hole():
    cell = CellModel(SC)
    cell.place_tool(Pose6D((HOLE[0] + 0.03, HOLE[1], SURF - 0.0003), DOWN))
    res = run_law(cell, SpiralSearch(SpiralParams()), max_steps=6000)
    assert not res.done and res.contact == "surface"


def insertion(law, offset, sigma=0.0, seed=1):
    cell = CellModel(SC)
    cell.hold("housing", tip=(HOLE[0] + offset, HOLE[1], SURF + 0.001))
    res = run_law(cell, law, sigma_n=sigma, max_steps=6000, rng=np.random.default_rng(seed))
    return res, cell


@pytest.mark.parametrize("offset_mm, nj_seats, sp_seats", [
    (0.0, True, True), (0.05, True, True), (0.10, True, False), (0.30, True, False), (0.50, True, False),
])
def test_insertion_outcomes_by_offset(offset_mm, nj_seats, sp_seats):
    nj, cnj = insertion(NonJammingInsert(), offset_mm / 1000)
    sp, csp = insertion(StraightPush(), offset_mm / 1000)
    assert nj.done == nj_seats and sp.done == sp_seats
    if nj_seats:
        assert nj.contact == "seated" and cnj.insertion_depth() == pytest.approx(SC.holes["housing_hole"].depth_m)
    if not sp_seats:
        assert sp.contact == "jammed" and csp.jammed


def test_nj_under_heavy_noise_keeps_heading_uncorrelated():
    law = NonJammingInsert(noise_floor=noise_floor(5.0 / math.sqrt(5)))
    res, _ = insertion(law, 0.0, sigma=5.0)
    assert res.done
    assert direction_autocorrelation(law.directions) < 0.2


def test_nj_steers_towards_reaction():
    law = NonJammingInsert()
    v = law.command(np.array([-4.0, 0.0, 12.0]))
    assert v[0] < 0 and v[1] == 0.0 and v[2] == pytest.approx(0.0)
    quiet = law.command(np.array([0.5, 0.5, 0.0]))
    assert quiet[0] == quiet[1] == 0.0 and quiet[2] < 0
    assert len(law.directions) == 1


def test_direction_autocorrelation():
    assert direction_autocorrelation([]) == 1.0
    assert direction_autocorrelation([np.array([1.0, 0.0])] * 5) == pytest.approx(1.0)
    flip = [np.array([1.0, 0.0]), np.array([-1.0, 0.0])] * 5
    assert direction_autocorrelation(flip) == pytest.approx(-1.0)


def test_block_average_window():
    avg = BlockAverage(3)
    assert avg.add([3.0]) == pytest.approx([3.0])
    avg.add([6.0])
    avg.add([9.0])
    assert avg.add([12.0]) == pytest.approx([9.0])


def test_noise_floor_is_three_sigma():
    assert noise_floor(0.5) == pytest.approx(1.5)
    assert noise_floor(0.0) == 0.0


def test_move_until_force_magnitude_and_per_axis():
    mag = MoveUntilForce(np.array([0, 0, -1.0]), 0.005, 5.0)
    assert not mag.triggered([2.0, 3.0, 3.0])
    assert mag.triggered([3.0, 3.0, 3.1])
    axis = MoveUntilForce(np.array([0, 0, -1.0]), 0.005, (10.0, 10.0, 2.0), per_axis=True)
    assert axis.triggered([0.0, 0.0, 2.5])
    assert not axis.triggered([9.0, 9.0, 1.9])
    np.testing.assert_allclose(mag.command([0, 0, 0]), (0, 0, -0.005))
    np.testing.assert_allclose(mag.command([0, 0, 6]), (0, 0, 0))


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 20.0))
def test_move_until_force_stops_at_threshold(threshold):
    cell = CellModel(SC)
    cell.place_tool(Pose6D((HOLE[0] + 0.05, HOLE[1], SURF + 0.002), DOWN))
    law = MoveUntilForce(np.array([0.0, 0.0, -1.0]), 0.005, threshold)
    res = run_law(cell, law, max_steps=2000)
    assert res.done
    fz = cell.wrench().force[2]
    # overshoot is at most one control step of travel
    assert threshold < fz <= threshold + SC.contact.k_n * 0.005 * 0.01 + 1e-9


# bus skills

def run_tree(xml, until=60.0, scenario=SC, bb=None, setup=None, tick_hz=100):
    cs = SimCell(scenario)
    cs.boot()
    if setup:
        setup(cs)
    tree = parse_tree(xml) if xml.lstrip().startswith("<") else load_tree(xml)
    ex = Executor(tree, scenario, cs.broker.connect("executor"), tick_hz=tick_hz, blackboard=bb)
    done = []
    ex.on_complete.append(lambda s: (done.append(s), ex.stop()))
    cs.reactor.call_at(6.0, ex.start)
    cs.reactor.run_until(until, stop=lambda: bool(done))
    return (done[0] if done else None), ex, cs


def leaf(body):
    return f"<BehaviorTree><Sequence>{body}</Sequence></BehaviorTree>"


def test_full_insertion_tree_succeeds():
    status, ex, cs = run_tree(f"{TREES}/insert_housing.xml", until=120.0)
    assert status == NodeStatus.SUCCESS
    bb = ex.blackboard
    assert bb.get("inserted/housing") is True and bb.get("released/housing") is True
    assert cs.cell.attached is None
    # the released housing stays at the bottom of the bore
    tip = np.array(cs.cell.objects["housing"].position)
    assert np.hypot(*(tip - HOLE)[:2]) < SC.holes["housing_hole"].clearance_m
    assert tip[2] == pytest.approx(SURF - SC.holes["housing_hole"].depth_m, abs=2e-3)


def test_estimate_pose_writes_blackboard():
    status, ex, cs = run_tree(leaf('<Action name="EstimatePose" object="housing"/>'))
    assert status == NodeStatus.SUCCESS
    pose = ex.blackboard.get("pose/housing")
    assert pose.translation_error(cs.cell.objects["housing"]) < 0.003


def test_estimate_pose_out_of_view_fails():
    status, ex, _ = run_tree(leaf('<Action name="EstimatePose" object="housing_hole"/>'))
    assert status == NodeStatus.FAILURE and ex.blackboard.get("pose/housing_hole") is None


def test_compute_grasp_composes_record():
    bb = Blackboard()
    obj = Pose6D((-0.5, -0.2, 0.0))
    bb.put("pose/housing", obj)
    status, ex, _ = run_tree(leaf('<Action name="ComputeGrasp" object="housing"/>'), bb=bb)
    assert status == NodeStatus.SUCCESS
    rec = ex.blackboard.get("grasprec/housing")
    assert isinstance(rec, GraspRecord)
    assert ex.blackboard.get("grasp/housing") == compose_grasp(obj, rec)
    np.testing.assert_allclose(ex.blackboard.get("grasp/housing").position, (-0.5, -0.2, 0.03), atol=1e-12)


def test_compute_grasp_without_pose_fails():
    status, _, _ = run_tree(leaf('<Action name="ComputeGrasp" object="housing"/>'))
    assert status == NodeStatus.FAILURE


def test_move_joint_reaches_keyframe():
    status, ex, cs = run_tree(leaf('<Action name="MoveJoint" target="view_board"/>'))
    assert status == NodeStatus.SUCCESS
    cs.cell.advance_to(cs.reactor.now())
    assert cs.cell.joints.max_abs_diff(SC.keyframe("view_board")) < 1e-3
    assert ex.blackboard.get("arm/keyframe") == "view_board"


def test_move_joint_unknown_keyframe_fails():
    status, _, _ = run_tree(leaf('<Action name="MoveJoint" target="nowhere"/>'))
    assert status == NodeStatus.FAILURE


def test_move_until_ff_stops_on_contact():
    def lower(cs):
        cs.cell.place_tool(Pose6D((HOLE[0] + 0.05, HOLE[1], SURF + 0.003), DOWN))
    status, _, cs = run_tree(leaf('<Action name="MoveUntilFF" threshold="5" speed="0.005"/>'), setup=lower)
    assert status == NodeStatus.SUCCESS
    cs.cell.advance_to(cs.reactor.now())
    assert cs.cell.contact().classification == "surface"
    assert cs.cell.wrench().force[2] == pytest.approx(5.0, abs=2.5)


def test_grasp_without_object_fails_with_object_param():
    status, ex, _ = run_tree(leaf('<Action name="Grasp" command="close" object="housing"/>'))
    assert status == NodeStatus.FAILURE
    assert ex.blackboard.get("grasped/housing") is False


def test_grasp_open_succeeds():
    status, _, cs = run_tree(leaf('<Action name="Grasp" command="open"/>'))
    assert status == NodeStatus.SUCCESS and cs.cell.aperture == pytest.approx(1.0)


@pytest.mark.parametrize("body", [
    '<Action name="MoveUntilFF" threshold="1.0"/>',  # inside the 3 sigma noise floor
    '<Action name="MoveUntilFF" threshold="6,6"/>',
    '<Action name="SearchAlign" pitch="0.01"/>',  # would skip the hole
    '<Action name="NJInsert" policy="wiggle"/>',
    '<Action name="Grasp" command="1.5"/>',
    '<Action name="EstimatePose"/>',
    '<Action name="MoveJoint"/>',
    '<Condition name="KeyEquals" key="k"/>',
])
def test_skill_parameter_errors(body):
    cs = SimCell(SC)
    with pytest.raises((InstantiationError, ValueError)):
        Executor(parse_tree(leaf(body)), SC, cs.broker.connect("executor"))


def test_noise_floor_rule_follows_sensor_sigma():
    quiet = SC.with_changes(sensors=SensorConfig(ft_sigma_n=0.1))
    cs = SimCell(quiet)
    Executor(parse_tree(leaf('<Action name="MoveUntilFF" threshold="1.0"/>')), quiet, cs.broker.connect("executor"))


def test_conditions():
    bb = Blackboard()
    bb.put("flag", True)
    bb.put("mode", "auto")
    xml = leaf('<Condition name="IsTrue" key="flag"/><Condition name="HasKey" key="mode"/>'
               '<Condition name="KeyEquals" key="mode" value="auto"/><Condition name="KeyEquals" key="flag" value="TRUE"/>')
    status, _, _ = run_tree(xml, bb=bb)
    assert status == NodeStatus.SUCCESS
    status, _, _ = run_tree(leaf('<Condition name="IsTrue" key="missing"/>'))
    assert status == NodeStatus.FAILURE


def test_camera_timeout_is_logged_and_skill_keeps_running():
    def deafen(cs):
        cs.reactor.call_at(5.5, lambda: setattr(cs.instances["camera"], "deaf", True))
    xml = leaf('<Timeout ms="3000"><Action name="EstimatePose" object="housing"/></Timeout>')
    status, ex, _ = run_tree(xml, setup=deafen)
    assert status == NodeStatus.FAILURE
    assert [t for _, t in ex.env.timeouts] == ["svc/camera.detect"]

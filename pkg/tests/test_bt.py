import itertools
import time
from importlib.resources import files

import pytest
from hypothesis import given, settings, strategies as st

from cellkit.bt import (Blackboard, BehaviorRegistry, InstantiationError, NodeStatus, SnapshotError, TickTrace,
                        TraceError, TraceEvent, TreeParseError, TreeStructureError, as_trace, evaluate_control,
                        instantiate, load_tree, parse_tree, replay, restore, run, snapshot)
from cellkit.geometry import GraspRecord, JointVector, Pose6D, Wrench

from oracles import control_oracle

S, F, R, I = NodeStatus.SUCCESS, NodeStatus.FAILURE, NodeStatus.RUNNING, NodeStatus.IDLE
TREES = files("cellkit.data") / "trees"


class Clock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


class Scripted:
    """Action returning the next scripted status each tick; the last entry repeats."""

    def __init__(self, script, log, name):
        self.script = list(script)
        self.log = log
        self.name = name
        self.halted = 0

    def _next(self):
        self.log.append(self.name)
        return self.script.pop(0) if len(self.script) > 1 else self.script[0]

    def on_start(self, ctx):
        return self._next()

    def on_running(self, ctx):
        return self._next()

    def on_halted(self, ctx):
        self.halted += 1


def make_registry(scripts, log, flags=None):
    reg = BehaviorRegistry()
    made = {}
    flags = flags if flags is not None else {}

    def factory(name):
        def build(params):
            made[name] = Scripted(scripts[name], log, name)
            return made[name]
        return build

    for name in scripts:
        reg.register_action(name, factory(name))
    reg.register_condition("Flag", lambda params: (lambda ctx: flags.get(params["key"], False)))
    return reg, made


def build(xml, scripts, flags=None, clock=None):
    log = []
    reg, made = make_registry(scripts, log, flags)
    tree = instantiate(parse_tree(xml), reg, clock=clock or Clock())
    return tree, made, log


# evaluate_control

@pytest.mark.parametrize("kind,statuses,k,expected", [
    ("Sequence", [S, S], None, S),
    ("Fallback", [F, S], None, S),
    ("Parallel", [S, R, S], 2, S),
    ("Sequence", [S, R], None, R),
    ("Sequence", [S, F, R], None, F),
    ("Fallback", [F, F], None, F),
    ("Parallel", [F, R, R], 3, F),
    ("Parallel", [F, R, R], 2, R),
])
def test_evaluate_control_examples(kind, statuses, k, expected):
    assert evaluate_control(kind, statuses, {"k": k} if k else None) is expected


def test_evaluate_control_matches_oracle_exhaustively():
    mismatches = []
    for kind in ("Sequence", "ReactiveSequence", "Fallback", "Parallel"):
        for n in (1, 2, 3):
            for combo in itertools.product((R, S, F), repeat=n):
                for k in (range(1, n + 1) if kind == "Parallel" else [None]):
                    got = evaluate_control(kind, list(combo), {"k": k} if k else None)
                    if got is not control_oracle(kind, list(combo), k):
                        mismatches.append((kind, combo, k, got))
    assert mismatches == []


def test_evaluate_control_rejects_empty_and_unknown():
    with pytest.raises(ValueError):
        evaluate_control("Sequence", [])
    with pytest.raises(ValueError):
        evaluate_control("Action", [S])
    with pytest.raises(ValueError):
        evaluate_control("Retry", [S, S])


# parsing

def test_parse_minimal_tree():
    d = parse_tree('<BehaviorTree><Sequence><Action name="Grasp"/></Sequence></BehaviorTree>')
    assert d.root.kind == "Sequence"
    assert [c.kind for c in d.root.children] == ["Action"]
    assert d.root.children[0].name == "Grasp"


def test_parse_insert_housing_tree():
    d = load_tree(TREES / "insert_housing.xml")
    pick = d.root.children[0]
    assert pick.kind == "Fallback" and pick.name == "pick_housing"
    assert pick.children[0].kind == "Condition"
    assert pick.children[1].name == "find_and_pick"
    leaves = d.leaf_names()
    for name in ("EstimatePose", "ComputeGrasp", "MoveEE", "Grasp", "MoveUntilFF", "SearchAlign", "NJInsert"):
        assert name in leaves


def test_parse_roundtrip_through_xml():
    d = load_tree(TREES / "loop_task.xml")
    again = parse_tree(d.to_xml())
    assert [(n.kind, n.name, n.params) for n in again.root.walk()] == [(n.kind, n.name, n.params) for n in d.root.walk()]


@pytest.mark.parametrize("xml", [
    '<BehaviorTree><Parallel k="3"><Action name="A"/></Parallel></BehaviorTree>',
    '<BehaviorTree><Timeout ms="5"><Action name="A"/><Action name="B"/></Timeout></BehaviorTree>',
    '<BehaviorTree><Sequence/></BehaviorTree>',
    '<BehaviorTree><Sequence color="red"><Action name="A"/></Sequence></BehaviorTree>',
    '<BehaviorTree><Action name="A"><Action name="B"/></Action></BehaviorTree>',
    '<BehaviorTree><Loop><Action name="A"/></Loop></BehaviorTree>',
    '<BehaviorTree><Timeout><Action name="A"/></Timeout></BehaviorTree>',
    '<Tree><Action name="A"/></Tree>',
])
def test_parse_structural_errors(xml):
    with pytest.raises(TreeStructureError):
        parse_tree(xml)


def test_parse_malformed_xml_reports_position():
    with pytest.raises(TreeParseError) as exc:
        parse_tree('<BehaviorTree>\n  <Sequence>\n</BehaviorTree>')
    assert exc.value.line is not None and exc.value.column is not None


# instantiation

def test_instantiate_all_idle_no_side_effects():
    xml = '<BehaviorTree><Sequence><Action name="A"/><Action name="B"/></Sequence></BehaviorTree>'
    tree, made, log = build(xml, {"A": [S], "B": [S]})
    assert all(n.status is I for n in tree.nodes())
    assert log == []


def test_instantiate_names_every_missing_behavior():
    d = load_tree(TREES / "insert_housing.xml")
    reg = BehaviorRegistry()
    for name in d.leaf_names():
        if name != "EstimatePose":
            reg.register_action(name, lambda p: Scripted([S], [], "x"))
            reg.register_condition(name, lambda p: (lambda ctx: True))
    with pytest.raises(InstantiationError) as exc:
        instantiate(d, reg)
    assert "EstimatePose" in str(exc.value)


def test_instantiate_empty_registry_fails():
    with pytest.raises(InstantiationError):
        instantiate(parse_tree('<BehaviorTree><Sequence><Action name="A"/></Sequence></BehaviorTree>'),
                    BehaviorRegistry())


# tick semantics

def test_single_true_condition_succeeds_in_one_tick():
    tree, _, _ = build('<BehaviorTree><Condition name="Flag" key="x"/></BehaviorTree>', {}, {"x": True})
    assert tree.tick() is S


def test_sequence_short_circuits():
    xml = '<BehaviorTree><Sequence><Action name="A"/><Action name="B"/><Action name="C"/></Sequence></BehaviorTree>'
    tree, _, log = build(xml, {"A": [S], "B": [R, R, S], "C": [S]})
    assert tree.tick() is R
    assert log == ["A", "B"]
    assert tree.tick() is R
    assert log == ["A", "B", "B"]  # A already succeeded, not re-ticked
    assert tree.tick() is S
    assert log[-2:] == ["B", "C"]


def test_fallback_short_circuits():
    xml = '<BehaviorTree><Fallback><Action name="A"/><Action name="B"/><Action name="C"/></Fallback></BehaviorTree>'
    tree, _, log = build(xml, {"A": [F], "B": [S], "C": [S]})
    assert tree.tick() is S
    assert log == ["A", "B"]


def test_parallel_ticks_all_running_children():
    xml = '<BehaviorTree><Parallel k="2"><Action name="A"/><Action name="B"/><Action name="C"/></Parallel></BehaviorTree>'
    tree, _, log = build(xml, {"A": [R, R, S], "B": [R], "C": [R, S]})
    assert tree.tick() is R
    assert sorted(log) == ["A", "B", "C"]
    assert tree.tick() is R
    assert tree.tick() is S


def test_reactive_sequence_halts_running_sibling():
    xml = ('<BehaviorTree><ReactiveSequence><Condition name="Flag" key="ok"/><Action name="A"/>'
           '</ReactiveSequence></BehaviorTree>')
    flags = {"ok": True}
    tree, made, log = build(xml, {"A": [R]}, flags)
    assert tree.tick() is R
    flags["ok"] = False
    assert tree.tick() is F
    assert made["A"].halted == 1
    assert tree.find("A").status is I


def test_timeout_fails_after_deadline():
    clock = Clock()
    tree, made, _ = build('<BehaviorTree><Timeout ms="50"><Action name="A"/></Timeout></BehaviorTree>',
                          {"A": [R]}, clock=clock)
    assert tree.tick() is R
    clock.t = 0.049
    assert tree.tick() is R
    clock.t = 0.050
    assert tree.tick() is F
    assert made["A"].halted == 1


def test_retry_reticks_failed_child():
    tree, _, log = build('<BehaviorTree><Retry n="3"><Action name="A"/></Retry></BehaviorTree>', {"A": [F, F, S]})
    assert tree.tick() is S
    assert log == ["A", "A", "A"]


def test_retry_gives_up_after_n_retries():
    tree, _, log = build('<BehaviorTree><Retry n="2"><Action name="A"/></Retry></BehaviorTree>', {"A": [F]})
    assert tree.tick() is F
    assert len(log) == 3


def test_raising_behavior_maps_to_failure():
    reg = BehaviorRegistry()

    @reg.action("Boom")
    def boom(ctx, params):
        raise RuntimeError("broken")

    lines = []
    tree = instantiate(parse_tree('<BehaviorTree><Action name="Boom"/></BehaviorTree>'), reg)
    tree.log_listeners.append(lines.append)
    assert tree.tick() is F
    assert lines


def test_condition_fault_maps_to_failure():
    reg = BehaviorRegistry()
    reg.register_condition("Bad", lambda params: (lambda ctx: 1 / 0))
    tree = instantiate(parse_tree('<BehaviorTree><Condition name="Bad"/></BehaviorTree>'), reg)
    assert tree.tick() is F


def test_invalid_status_from_behavior_is_failure():
    reg = BehaviorRegistry()
    reg.action("Idle")(lambda ctx, p: NodeStatus.IDLE)
    tree = instantiate(parse_tree('<BehaviorTree><Action name="Idle"/></BehaviorTree>'), reg)
    assert tree.tick() is F


def test_reset_keeps_blackboard():
    tree, made, _ = build('<BehaviorTree><Action name="A"/></BehaviorTree>', {"A": [R]})
    tree.blackboard.put("k", 1)
    tree.tick()
    tree.reset()
    assert tree.status is I
    assert made["A"].halted == 1
    assert tree.blackboard.get("k") == 1


# traces

def test_trace_order_and_replay():
    xml = '<BehaviorTree><Sequence><Action name="A"/><Action name="B"/></Sequence></BehaviorTree>'
    clock = Clock()
    tree, _, _ = build(xml, {"A": [R, S], "B": [S]}, clock=clock)
    tree.tick()
    clock.t = 0.001
    tree.tick()
    evs = tree.trace.events
    assert [e.tick_index for e in evs] == sorted(e.tick_index for e in evs)
    assert all(a.timestamp_us <= b.timestamp_us for a, b in zip(evs, evs[1:]))
    seq = replay(tree.trace)
    assert seq == tree.trace.transitions()
    assert seq[-1] == (tree.root.path, S)


def test_replay_empty_and_idempotent():
    assert replay(TickTrace()) == []
    tree, _, _ = build('<BehaviorTree><Retry n="1"><Action name="A"/></Retry></BehaviorTree>', {"A": [F, S]})
    tree.tick()
    seq = replay(tree.trace)
    assert replay(as_trace(seq)) == seq


def test_replay_rejects_out_of_order():
    evs = [TraceEvent(2, "a", I, R, 0), TraceEvent(1, "a", R, S, 1)]
    with pytest.raises(TraceError):
        replay(evs)


def test_trace_file_roundtrip(tmp_path):
    tree, _, _ = build('<BehaviorTree><Sequence><Action name="A"/></Sequence></BehaviorTree>', {"A": [R, S]})
    tree.tick()
    tree.tick()
    p = tmp_path / "trace.txt"
    tree.trace.write(p)
    assert TickTrace.read(p).events == tree.trace.events
    assert p.read_text().splitlines()[0].split()[2] == "IDLE"


def test_trace_line_errors():
    with pytest.raises(TraceError):
        TraceEvent.from_line("1 a IDLE")
    with pytest.raises(TraceError):
        TraceEvent.from_line("1 a IDLE DONE 0")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.sampled_from([R, S, F]), min_size=1, max_size=4), min_size=3, max_size=3))
def test_tick_determinism(scripts):
    xml = ('<BehaviorTree><Fallback><Sequence><Action name="A"/><Action name="B"/></Sequence>'
           '<Action name="C"/></Fallback></BehaviorTree>')
    runs = []
    for _ in range(2):
        tree, _, _ = build(xml, {"A": scripts[0], "B": scripts[1], "C": scripts[2]})
        for _ in range(6):
            if tree.tick().completed:
                break
        runs.append([(e.tick_index, e.node_path, e.old_status, e.new_status) for e in tree.trace])
    assert runs[0] == runs[1]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.sampled_from([R, S, F]), min_size=1, max_size=3), min_size=3, max_size=3),
       st.sampled_from(["Sequence", "Fallback"]))
def test_tick_never_returns_idle(scripts, kind):
    xml = f'<BehaviorTree><{kind}><Action name="A"/><Action name="B"/><Action name="C"/></{kind}></BehaviorTree>'
    tree, _, _ = build(xml, dict(zip("ABC", scripts)))
    for _ in range(5):
        assert tree.tick() is not I


# blackboard

def test_blackboard_put_get_revision():
    bb = Blackboard()
    p = Pose6D((0.1, 0.2, 0.3))
    r1 = bb.put("housing_pose", p)
    assert bb.get("housing_pose") == p
    assert "missing" not in bb and bb.get("missing") is None
    r2 = bb.put("housing_pose", p)
    assert r2 == r1 + 1
    assert bb.delete("housing_pose") and bb.revision == r2 + 1
    assert not bb.delete("housing_pose")


def test_blackboard_rejects_none_and_lists():
    bb = Blackboard()
    with pytest.raises(TypeError):
        bb.put("x", None)
    with pytest.raises(TypeError):
        bb.put("x", [1, 2])
    with pytest.raises(KeyError):
        bb.put("", 1)


def test_blackboard_type_change_is_logged(caplog):
    bb = Blackboard()
    bb.put("k", 1)
    bb.put("k", "one")
    assert bb.get("k") == "one"
    assert "changes type" in caplog.text


finite = st.floats(-10, 10, allow_nan=False)
values = st.one_of(
    st.text(max_size=20), st.booleans(), st.integers(-2 ** 62, 2 ** 62), st.floats(allow_nan=False),
    st.builds(lambda p, a: Pose6D.from_xyz_rpy(p, a), st.tuples(finite, finite, finite),
              st.tuples(finite, finite, finite)),
    st.builds(lambda q: JointVector(q), st.tuples(*[st.floats(-6.28, 6.28)] * 6)),
    st.builds(lambda f, t: Wrench(f, t), st.tuples(finite, finite, finite), st.tuples(finite, finite, finite)),
    st.builds(lambda n, c: GraspRecord(n, Pose6D((0.0, 0.0, 0.01)), c), st.text(min_size=1, max_size=8),
              st.floats(0, 1)),
)


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=12), values, max_size=8))
def test_snapshot_roundtrip(entries):
    bb = Blackboard()
    for k, v in entries.items():
        bb.put(k, v)
    tree, again = restore(snapshot(None, bb))
    assert tree is None
    assert again.entries() == bb.entries()
    assert again.revision == bb.revision
    for k, v in entries.items():
        assert type(again.get(k)) is type(v)


def test_snapshot_empty_blackboard():
    _, bb = restore(snapshot(None, Blackboard()))
    assert len(bb) == 0


def test_snapshot_restores_tree_idle_and_skips_guarded_work():
    xml = ('<BehaviorTree><Sequence><Fallback><Condition name="Flag" key="grasped"/><Action name="Pick"/></Fallback>'
           '<Action name="Insert"/></Sequence></BehaviorTree>')
    tree, _, _ = build(xml, {"Pick": [R], "Insert": [R]})
    tree.tick()
    tree.blackboard.put("grasped", True)
    data = snapshot(tree, tree.blackboard)
    log = []
    reg, made = make_registry({"Pick": [S], "Insert": [S]}, log)
    reg.register_condition("Flag", lambda params: (lambda ctx: bool(ctx.bb.get(params["key"], False))))
    tree2, bb2 = restore(data, reg)
    assert all(n.status is I for n in tree2.nodes())
    assert bb2.get("grasped") is True
    assert tree2.tick() is S
    assert log == ["Insert"]


def test_snapshot_corruption_is_rejected():
    bb = Blackboard()
    bb.put("a", 1.5)
    data = bytearray(snapshot(None, bb))
    for i in (0, 5, len(data) // 2, len(data) - 1):
        bad = bytearray(data)
        bad[i] ^= 0xFF
        with pytest.raises(SnapshotError):
            restore(bytes(bad))
    with pytest.raises(SnapshotError):
        restore(bytes(data[:10]))


def test_snapshot_starts_with_magic():
    assert snapshot(None, Blackboard())[:4] == b"CBT1"


# run loop

def test_run_single_condition():
    tree, _, _ = build('<BehaviorTree><Condition name="Flag" key="x"/></BehaviorTree>', {}, {"x": True})
    res = run(tree, 1000.0)
    assert res.final_status is S and res.tick_count == 1


def test_run_stop_immediately_returns_first_tick_status():
    tree, _, _ = build('<BehaviorTree><Action name="A"/></BehaviorTree>', {"A": [R]})
    res = run(tree, 1000.0, stop=lambda: True)
    assert res.final_status is R and res.tick_count == 1


def test_run_idle_action_one_second():
    tree, _, _ = build('<BehaviorTree><Action name="A"/></BehaviorTree>', {"A": [R]}, clock=time.monotonic)
    t_end = time.perf_counter() + 1.0
    res = run(tree, 1000.0, stop=lambda: time.perf_counter() >= t_end)
    assert 900 <= res.tick_count <= 1100


def test_run_rejects_bad_frequency():
    tree, _, _ = build('<BehaviorTree><Action name="A"/></BehaviorTree>', {"A": [R]})
    with pytest.raises(ValueError):
        run(tree, 0.0)


def test_run_counts_missed_deadlines():
    reg = BehaviorRegistry()

    @reg.action("Slow")
    def slow(ctx, params):
        time.sleep(0.003)
        return R

    tree = instantiate(parse_tree('<BehaviorTree><Action name="Slow"/></BehaviorTree>'), reg)
    res = run(tree, 1000.0, max_ticks=20)
    assert res.tick_count == 20
    assert res.missed_deadlines >= 15

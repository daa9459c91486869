"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import itertools
import math
import random
import threading
import time
from importlib.resources import files
from pathlib import Path

import numpy as np

from cellkit.bt import BehaviorRegistry, NodeStatus, evaluate_control, instantiate, load_tree, parse_tree, run
from cellkit.bus import decode_message, encode_message
from cellkit.geometry import JointVector, Pose6D
from cellkit.harness import load_config, run_experiment, superposition_mean, windowed_mean
from cellkit.harness.executor import Executor
from cellkit.harness.experiment import LiveStack, ExperimentConfig
from cellkit.sim.kinematics import DHParams, ik
from cellkit.sim.launch import SimCell
from cellkit.sim.scenario import PlannerConfig, load_scenario
from cellkit.skills import NonJammingInsert, SpiralParams, StraightPush, direction_autocorrelation, noise_floor

from oracles import control_oracle, retry_failure_rate
from test_bus import random_message, tcp, wait_for  # noqa: F401  (tcp is a fixture)
from test_kinematics import ik_roundtrip_errors
from test_skills import insertion, spiral_trial
from test_watchdog import crash, supervised
from verdicts import verdict

S, F, R, I = NodeStatus.SUCCESS, NodeStatus.FAILURE, NodeStatus.RUNNING, NodeStatus.IDLE
SC = load_scenario()
SCENARIO_PATH = str(files("cellkit.data") / "scenario.yaml")
TREE = str(files("cellkit.data") / "trees" / "insert_housing.xml")
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_c01_control_node_oracle():
    t0 = time.perf_counter()
    checked, mismatches = 0, []
    for kind in ("Sequence", "ReactiveSequence", "Fallback", "Parallel"):
        for n in (1, 2, 3):
            for combo in itertools.product((R, S, F), repeat=n):
                for k in (range(1, n + 1) if kind == "Parallel" else [None]):
                    checked += 1
                    got = evaluate_control(kind, list(combo), {"k": k} if k else None)
                    if got is not control_oracle(kind, list(combo), k):
                        mismatches.append((kind, combo, k))
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 1.0
    assert verdict(1, ok, f"{checked} assignments, {len(mismatches)} mismatches, {elapsed * 1000:.1f} ms")


def test_c02_tick_rate():
    reg = BehaviorRegistry()

    @reg.action("Idle")
    def idle(ctx, params):
        return R

    leaves = "".join('<Action name="Idle"/>' for _ in range(19))
    tree = instantiate(parse_tree(f'<BehaviorTree><Parallel k="19">{leaves}</Parallel></BehaviorTree>'), reg,
                       keep_trace=False)
    assert len(tree.nodes()) == 20
    t_end = time.perf_counter() + 10.0
    res = run(tree, 1000.0, stop=lambda: time.perf_counter() >= t_end, record_timing=True)
    errors = np.abs(np.array(res.periods()) - 1e-3) / 1e-3
    p99 = float(np.percentile(errors, 99))
    ok = p99 < 0.10 and 9000 <= res.tick_count <= 11000
    assert verdict(2, ok, f"{res.tick_count} ticks in 10 s, p99 period error {p99 * 100:.2f}%")


def test_c03_wire_protocol(tcp):
    rng = random.Random(2024)
    exact = 0
    for _ in range(10_000):
        m = random_message(rng)
        data = encode_message(m)
        exact += decode_message(data) == m and encode_message(decode_message(data)) == data

    broker, reactor, connect = tcp
    srv = connect("srv")
    delays = random.Random(5)

    def handler(m):
        reactor.call_later(delays.uniform(0, 0.05), srv.reply, m, {"echo": m.body["n"]})

    reactor.post(srv.serve, "svc/delay", handler)
    time.sleep(0.1)
    cli = connect("cli")
    results = {}
    lock = threading.Lock()

    def done(p, n):
        with lock:
            results[n] = p.reply

    reactor.post(lambda: [cli.request("svc/delay", {"n": n}, 3000, on_done=lambda p, n=n: done(p, n))
                          for n in range(100)])
    wait_for(lambda: len(results) == 100)
    correlated = sum(results.get(n) == {"echo": n} for n in range(100))

    arrivals = []
    mon = connect("mon")
    reactor.post(mon.subscribe, "hb/*", lambda m: arrivals.append(time.monotonic()))
    time.sleep(0.1)
    cam = connect("cam")
    reactor.post(cam.emit_heartbeats, "cam", 100)
    time.sleep(2.05)
    gaps = np.diff(arrivals)
    worst = float(np.max(np.abs(gaps - 0.1)) / 0.1) if len(gaps) else math.inf
    ok = exact == 10_000 and correlated == 100 and len(gaps) >= 15 and worst <= 0.20
    assert verdict(3, ok, f"{exact}/10000 exact, {correlated}/100 correlated, "
                          f"{len(arrivals)} beats with worst jitter {worst * 100:.1f}%")


# kill-and-resume

ESTIMATE = {"housing": "look_for_housing/1.Retry/0.Timeout/0.EstimatePose",
            "housing_hole": "look_for_hole/1.Retry/0.Timeout/0.EstimatePose"}


class KillDuringEstimate:
    """Wraps the executor tick; kills the camera once the chosen EstimatePose has sent its request."""

    def __init__(self, ex, target, kill):
        self.ex, self.path, self.kill = ex, ESTIMATE[target], kill
        self.killed_at = None
        self.revisions = []
        self._tick = ex.tick
        ex.tick = self

    def __call__(self):
        n = len(self.ex.tree.trace)
        status = self._tick()
        self.revisions.append(self.ex.blackboard.revision)
        if self.killed_at is None:
            for e in list(self.ex.tree.trace)[n:]:
                if e.node_path.endswith(self.path) and e.new_status is R:
                    self.killed_at = self.kill()
                    break
        return status


def resume_problems(trace, path, revisions):
    """Everything a clean resume must not show; empty when the task resumed in place."""
    problems = []
    successes = {}
    for e in trace:
        if e.new_status is S:
            successes[e.node_path] = successes.get(e.node_path, 0) + 1
    again = sorted(p for p, c in successes.items() if c > 1)
    if again:
        problems.append(f"re-executed {again}")
    # the outer Timeout halts the stranded attempt and Retry starts a fresh one
    starts = sum(e.node_path.endswith(path) and e.old_status is I and e.new_status is R for e in trace)
    if starts < 2:
        problems.append("kill did not interrupt EstimatePose")
    if any(b < a for a, b in zip(revisions, revisions[1:])):
        problems.append("blackboard revision went backwards")
    ticks = [e.tick_index for e in trace]
    if any(b < a for a, b in zip(ticks, ticks[1:])):
        problems.append("tick index restarted")
    return problems


def sim_kill_trial(seed, target, rng):
    sc = SC.with_changes(seed=seed)
    cs, wd = supervised(scenario=sc)
    ex = Executor(load_tree(TREE), sc, cs.broker.connect("executor"), tick_hz=100)
    done = []
    ex.on_complete.append(lambda s: (done.append(s), ex.stop()))
    delay = rng.uniform(0.0, 0.04)

    def kill():
        cs.reactor.call_later(delay, cs.kill, "camera")
        return cs.reactor.now() + delay

    hook = KillDuringEstimate(ex, target, kill)
    cs.reactor.call_at(6.0, ex.start)
    cs.reactor.run_until(300.0, stop=lambda: bool(done))
    problems = resume_problems(list(ex.tree.trace), ESTIMATE[target], hook.revisions)
    if done != [S]:
        problems.append(f"task ended {done}")
    if ex.started_at != 6.0:
        problems.append("executor restarted")
    det = [d for d in wd.detections if d.component == "camera"]
    if hook.killed_at is None or len(det) != 1 or cs.instances["camera"].incarnation != 1:
        problems.append(f"camera not restarted once: {det}")
    if len(wd.interventions):
        problems.append("intervention")
    return problems


def live_kill_trial():
    cfg = ExperimentConfig(mode="live", tree=TREE, duration_s=120, time_scale=4, cycles=1, tick_hz=100)
    stack = LiveStack(cfg, SC, load_tree(TREE), SCENARIO_PATH)

    def kill():
        stack.cell.kill("camera")
        return stack.reactor.now()

    hook = KillDuringEstimate(stack.executor, "housing", kill)
    res = stack.run()
    problems = resume_problems(res.trace, ESTIMATE["housing"], hook.revisions)
    if res.cycles_completed != 1 or res.cycle_failures or res.interventions:
        problems.append(f"cycles {res.cycles_completed}, failures {res.cycle_failures}, "
                        f"interventions {len(res.interventions)}")
    if [d.component for d in res.detections] != ["camera"]:
        problems.append(f"detections {res.detections}")
    return problems


def test_c04_kill_and_resume():
    rng = random.Random(4)
    failed = {}
    for i in range(20):
        problems = sim_kill_trial(400 + i, ("housing", "housing_hole")[i % 2], rng)
        if problems:
            failed[i] = problems
    live = live_kill_trial()
    ok = not failed and not live
    assert verdict(4, ok, f"sim {20 - len(failed)}/20 resumed in place, live run "
                          f"{'resumed in place' if not live else live}; {failed or ''}")


def test_c05_mtui_experiment():
    off_cfg = load_config(CONFIGS / "mtui_off.yaml")
    on_cfg = load_config(CONFIGS / "mtui_on.yaml")
    assert off_cfg.seed == on_cfg.seed
    t0 = time.perf_counter()
    off = run_experiment(off_cfg).report
    on_result = run_experiment(on_cfg)
    wall = time.perf_counter() - t0
    on = on_result.report
    rate_oracle = superposition_mean([f.rate_per_s for f in off_cfg.faults])
    mean_oracle = windowed_mean(rate_oracle, off_cfg.duration_s)
    mean_err = abs(off.mean_s - mean_oracle) / mean_oracle
    rate_err = abs(off.rate_mean_s - rate_oracle) / rate_oracle
    on_interventions = sum(len(r.interventions) for r in on_result.runs)
    ok = (not off.censored and mean_err <= 0.15 and rate_err <= 0.15 and on.censored and on_interventions == 0
          and on.mean_s >= on_cfg.duration_s > off.mean_s and wall < 600)
    assert verdict(5, ok, f"OFF MTUI {off.mean_s:.1f} s vs oracle {mean_oracle:.1f} s ({mean_err * 100:.1f}%), "
                          f"rate mean {off.rate_mean_s:.1f} s vs {rate_oracle:.1f} s ({rate_err * 100:.1f}%), "
                          f"{len(off.uptimes_s)} interventions; ON {on_interventions} interventions over "
                          f"{on_cfg.duration_s:.0f} s with {sum(len(r.restarts) for r in on_result.runs)} restarts; "
                          f"wall {wall:.0f} s")


def test_c06_fk_ik_roundtrip():
    worst, failures = ik_roundtrip_errors(1000, 6)
    reach = DHParams().reach
    rejected = [ik(Pose6D((f * reach, 0.0, 0.3)), JointVector()) is None for f in (1.2, 1.5, 2.0, 3.0)]
    ok = failures == 0 and worst < 1e-6 and all(rejected)
    assert verdict(6, ok, f"1000 round trips, {failures} failures, worst {worst:.2e} m; "
                          f"{sum(rejected)}/{len(rejected)} unreachable goals rejected")


def test_c07_spiral_coverage():
    p = SpiralParams()
    radius = p.max_radius - SC.holes["housing_hole"].detection_radius_m
    bound = p.path_length_bound()
    rng = np.random.default_rng(7)
    found, longest = 0, 0.0
    for _ in range(500):
        res = spiral_trial(rng, radius)
        longest = max(longest, res.path_length)
        found += res.done and res.contact in ("in_hole", "seated") and res.path_length <= bound
    assert verdict(7, found == 500, f"{found}/500 detected, longest path {longest:.4f} m, bound {bound:.4f} m")


def test_c08_non_jamming_superiority():
    offsets = [round(0.05 * i, 2) for i in range(11)]
    nj_jams, sp_jams = [], []
    for mm in offsets:
        nj, _ = insertion(NonJammingInsert(), mm / 1000)
        sp, _ = insertion(StraightPush(), mm / 1000)
        nj_jams.append(0 if nj.done else 1)
        sp_jams.append(0 if sp.done else 1)
    law = NonJammingInsert(noise_floor=noise_floor(5.0 / math.sqrt(5)))
    insertion(law, 0.0, sigma=5.0)
    rho = direction_autocorrelation(law.directions)
    ok = all(a <= b for a, b in zip(nj_jams, sp_jams)) and any(a < b for a, b in zip(nj_jams, sp_jams)) and rho < 0.2
    assert verdict(8, ok, f"jams NJ {sum(nj_jams)}/11, straight push {sum(sp_jams)}/11 over 0-0.5 mm; "
                          f"sigma 5 N direction autocorrelation {rho:.3f}")


CRASHABLE = ["arm", "arm_description", "force_servo", "gripper", "camera", "ft", "grasp_db"]


def test_c09_watchdog_detection():
    rng = random.Random(9)
    plan = [(10.0 + 15.0 * i + rng.uniform(0, 1), rng.choice(CRASHABLE)) for i in range(100)]
    by_comp = {}
    for t, comp in plan:
        by_comp.setdefault(comp, []).append(t)
    cs, wd = supervised(tuple(crash(c, *ts) for c, ts in by_comp.items()))
    cs.reactor.run_until(plan[-1][0] + 10.0)
    latencies = []
    for t, comp in plan:
        later = [d.time_s for d in wd.detections if d.component == comp and d.time_s >= t]
        latencies.append(min(later) - t if later else math.inf)
    slowest = max(latencies)

    quiet, qwd = supervised()
    quiet.reactor.run_until(3600.0)
    quiet_restarts = len(qwd.restarts)

    dep, _ = supervised((crash("arm_description", 20.0), crash("force_servo", 21.0)))
    dep.reactor.run_until(30.0)
    wait = dep.last_start["force_servo"] - dep.last_start["arm_description"]

    ok = slowest < 0.7 and quiet_restarts == 0 and abs(wait - 5.0) < 0.01 and not len(wd.interventions)
    assert verdict(9, ok, f"100 crashes, slowest detection {slowest * 1000:.0f} ms; fault-free hour "
                          f"{quiet_restarts} restarts; dependent restart waited {wait:.2f} s")


def test_c10_planner_retry():
    sc = SC.with_changes(planner=PlannerConfig(p_fail=0.2, planning_time_s=0.01))
    cs = SimCell(sc)
    cs.boot()
    cs.reactor.run_until(6.0)
    home = np.array(SC.home.q)
    trees = []
    for i, d in enumerate((0.001, 0.0)):
        q = ",".join(f"{v:.6f}" for v in home + d)
        xml = f'<BehaviorTree><Retry n="3"><Action name="MoveJoint" target="{q}"/></Retry></BehaviorTree>'
        trees.append(Executor(parse_tree(xml), sc, cs.broker.connect(f"executor{i}"), keep_trace=False))
    n = 100_000
    failures = 0
    for i in range(n):
        # alternate between two goals so every trial plans a real move
        ex = trees[i % 2]
        ex.tree.reset()
        while True:
            status = ex.tick()
            if status.completed:
                break
            cs.reactor.run_until(cs.reactor.now() + 0.01)
        failures += status is F
    p = retry_failure_rate(0.2, 3)
    sigma = math.sqrt(n * p * (1 - p))
    ok = abs(failures - n * p) <= 3 * sigma
    assert verdict(10, ok, f"{failures}/{n} moves failed, rate {failures / n:.2e} vs {p:.2e} "
                           f"(3 sigma band {n * p - 3 * sigma:.0f}-{n * p + 3 * sigma:.0f})")

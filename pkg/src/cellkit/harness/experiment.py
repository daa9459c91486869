"""Experiment configuration, the looped task and the stacks that run it."""
from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import yaml

from cellkit.bt import NodeStatus, TreeDefinition, load_tree
from cellkit.bt.trace import TraceEvent
from cellkit.bus.endpoint import Endpoint
from cellkit.harness.executor import Executor
from cellkit.harness.mtui import MTUIReport, compute_mtui, merge_reports
from cellkit.runtime import SimReactor
from cellkit.sim.faults import FaultConfigError, FaultSpec, split_rate
from cellkit.sim.launch import SimCell
from cellkit.sim.scenario import ConfigError, Scenario, load_scenario
from cellkit.watchdog import Detection, Intervention, InterventionLog, RestartEvent, Watchdog

log = logging.getLogger(__name__)

PLACE_TARGET = "place/target"
CYCLE_PREFIXES = ("pose/", "grasp/", "grasprec/", "grasped/", "released/", "inserted/")
PERCEPTION_PREFIXES = ("pose/", "grasp/", "grasprec/")
MODES = ("sim", "live")
_CONFIG_KEYS = {"scenario", "tree", "faults", "fault_rate_total", "fault_components", "fault_mode", "watchdog",
                "duration_s", "time_scale", "seed", "runs", "tick_hz", "cycle_deadline_s", "mode", "output_dir",
                "keep_trace", "place_targets", "cycles"}


def default_tree_path() -> Path:
    return Path(str(resources.files("cellkit.data") / "trees" / "loop_task.xml"))


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str | None = None
    tree: str | None = None
    faults: tuple[FaultSpec, ...] | None = None
    watchdog: bool = True
    duration_s: float = 600.0
    time_scale: float = 1.0
    seed: int | None = None
    runs: int = 1
    tick_hz: float = 50.0
    cycle_deadline_s: float = 300.0
    mode: str = "sim"
    output_dir: str | None = None
    keep_trace: bool = True
    place_targets: tuple[str, ...] = ("place_b", "place_a")
    cycles: int | None = None  # stop after this many successful cycles

    def tree_path(self) -> Path:
        return Path(self.tree) if self.tree else default_tree_path()

    def with_changes(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _resolve(path: str | None, base: Path | None) -> str | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_absolute() and base is not None:
        p = base / p
    return str(p)


def config_from_dict(d: dict, base: Path | None = None) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("experiment config must be a mapping")
    unknown = set(d) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kw: dict = {}
    for key in ("scenario", "tree", "output_dir"):
        if d.get(key) is not None:
            kw[key] = _resolve(str(d[key]), base)
    faults: list[FaultSpec] | None = None
    try:
        if d.get("faults") is not None:
            faults = [FaultSpec.from_dict(f) for f in d["faults"]]
        if d.get("fault_rate_total") is not None:
            comps = d.get("fault_components")
            if not comps:
                raise ConfigError("fault_rate_total needs fault_components", "fault_components")
            faults = (faults or []) + split_rate(float(d["fault_rate_total"]), list(comps),
                                                 str(d.get("fault_mode", "crash")))
    except FaultConfigError as exc:
        raise ConfigError(str(exc), "faults") from None
    if faults is not None:
        kw["faults"] = tuple(faults)
    try:
        for key, conv in (("watchdog", bool), ("duration_s", float), ("time_scale", float), ("runs", int),
                          ("tick_hz", float), ("cycle_deadline_s", float), ("mode", str), ("keep_trace", bool)):
            if d.get(key) is not None:
                kw[key] = conv(d[key])
        for key in ("seed", "cycles"):
            if d.get(key) is not None:
                kw[key] = int(d[key])
        if d.get("place_targets") is not None:
            kw["place_targets"] = tuple(str(t) for t in d["place_targets"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    return ExperimentConfig(**kw)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}", str(p))
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: {exc}", str(p)) from None
    return config_from_dict(data, p.parent)


def validate_config(cfg: ExperimentConfig) -> tuple[Scenario, TreeDefinition]:
    """Check the config and load what it references. Raises ConfigError."""
    if not cfg.duration_s > 0:
        raise ConfigError("duration_s must be positive", "duration_s")
    if cfg.time_scale < 1:
        raise ConfigError("time_scale must be >= 1", "time_scale")
    if cfg.runs < 1:
        raise ConfigError("runs must be >= 1", "runs")
    if not cfg.tick_hz > 0:
        raise ConfigError("tick_hz must be positive", "tick_hz")
    if not cfg.cycle_deadline_s > 0:
        raise ConfigError("cycle_deadline_s must be positive", "cycle_deadline_s")
    if cfg.cycles is not None and cfg.cycles < 1:
        raise ConfigError("cycles must be >= 1", "cycles")
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}", "mode")
    if cfg.scenario is not None and not Path(cfg.scenario).is_file():
        raise ConfigError(f"scenario file not found: {cfg.scenario}", "scenario")
    tree_path = cfg.tree_path()
    if not tree_path.is_file():
        raise ConfigError(f"tree file not found: {tree_path}", "tree")
    scenario = load_scenario(cfg.scenario)
    for t in cfg.place_targets:
        if t not in scenario.named_poses:
            raise ConfigError(f"place target {t!r} is not a named pose", "place_targets")
    for f in cfg.faults or ():
        if f.component not in scenario.components:
            raise ConfigError(f"fault names unknown component {f.component!r}", "faults")
    try:
        tree = load_tree(tree_path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{tree_path}: {exc}", "tree") from None
    return scenario, tree


# -- the looped task -------------------------------------------------------------

class TaskLoop:
    """Runs the tree cycle after cycle.

    Before a cycle the harness writes ``place/target``; after a successful cycle it clears
    the cycle keys and swaps the target. A failed cycle drops perception results and tries
    again. A cycle that outlives its deadline is an intervention.
    """

    def __init__(self, executor: Executor, scenario: Scenario, deadline_s: float,
                 on_deadline: Callable[[str], None], targets: tuple[str, ...] = ("place_b", "place_a"),
                 max_cycles: int | None = None):
        self.executor = executor
        self.scenario = scenario
        self.deadline_s = deadline_s
        self.on_deadline = on_deadline
        self.targets = targets
        self.max_cycles = max_cycles
        self.finished = False
        self.reactor = executor.reactor
        self.cycles_completed = 0
        self.cycle_failures = 0
        self.cycle_times: list[float] = []
        self._target = 0
        self.cycle_start = 0.0
        self._deadline_timer = None
        executor.on_complete.append(self._completed)

    @property
    def bb(self):
        return self.executor.blackboard

    def start(self) -> None:
        self._begin_cycle()
        self.executor.start()
        self._deadline_timer = self.reactor.call_every(1.0, self._check_deadline)

    def stop(self) -> None:
        self.executor.stop()
        if self._deadline_timer is not None:
            self._deadline_timer.cancel()
            self._deadline_timer = None

    def _begin_cycle(self) -> None:
        self.cycle_start = self.reactor.now()
        self.bb.put(PLACE_TARGET, self.scenario.named_poses[self.targets[self._target]])

    def _clear(self, prefixes: tuple[str, ...]) -> None:
        for key in list(self.bb):
            if key.startswith(prefixes):
                self.bb.delete(key)

    def _completed(self, status: NodeStatus) -> None:
        tree = self.executor.tree
        if status is NodeStatus.SUCCESS:
            self.cycles_completed += 1
            self.cycle_times.append(self.reactor.now() - self.cycle_start)
            if self.max_cycles is not None and self.cycles_completed >= self.max_cycles:
                self.finished = True
                self.stop()
                return
            self._clear(CYCLE_PREFIXES)
            self._target = (self._target + 1) % len(self.targets)
            tree.reset()
            self._begin_cycle()
        else:
            self.cycle_failures += 1
            self._clear(PERCEPTION_PREFIXES)
            tree.reset()

    def _check_deadline(self) -> None:
        if self.reactor.now() - self.cycle_start > self.deadline_s:
            self.cycle_start = self.reactor.now()
            self.on_deadline(f"cycle {self.cycles_completed + 1} exceeded {self.deadline_s:.0f} s")

    def restart(self) -> None:
        """After an operator reset the objects are back at their initial poses."""
        self.executor.tree.reset()
        self._clear(CYCLE_PREFIXES)
        self._target = 0
        self._begin_cycle()


# -- stacks -----------------------------------------------------------------------

@dataclass
class RunResult:
    seed: int
    watchdog: bool
    horizon_s: float
    interventions: list[Intervention]
    restarts: list[RestartEvent]
    detections: list[Detection]
    cycles_completed: int
    cycle_failures: int
    trace: list[TraceEvent] = field(default_factory=list)
    wall_s: float = 0.0
    events: int = 0

    def report(self) -> MTUIReport:
        return compute_mtui(self.interventions, self.horizon_s, cycles_completed=self.cycles_completed)


class _Stack:
    """Watchdog, executor and task loop on one reactor, over some launcher."""

    reactor = None

    def _assemble(self, cfg: ExperimentConfig, scenario: Scenario, tree: TreeDefinition, launcher,
                  wd_endpoint: Endpoint, ex_endpoint: Endpoint) -> None:
        self.cfg = cfg
        self.scenario = scenario
        self.launcher = launcher
        self.interventions = InterventionLog()
        self.watchdog = Watchdog(wd_endpoint, launcher, scenario.components, scenario.watchdog,
                                 enabled=cfg.watchdog, interventions=self.interventions,
                                 on_intervention=self._operator_reset)
        self.executor = Executor(tree, scenario, ex_endpoint, tick_hz=cfg.tick_hz, keep_trace=cfg.keep_trace)
        self.loop = TaskLoop(self.executor, scenario, cfg.cycle_deadline_s,
                             lambda ctx: self.watchdog.record_intervention("task_deadline_exceeded", "executor", ctx),
                             cfg.place_targets, cfg.cycles)
        self.resets = 0

    def on_jam(self, now: float) -> None:
        self.watchdog.record_intervention("jam", "arm", f"peg jammed at t={now:.3f} s")

    def reset_world(self) -> None:
        raise NotImplementedError

    def _operator_reset(self, entry: Intervention) -> None:
        # the person who was called fixes the cell, restarts everything and lets the task go on
        self.resets += 1
        self.reset_world()
        self.watchdog.operator_reset()
        self.loop.restart()

    def start(self) -> None:
        self.watchdog.start()
        self.launcher.boot()
        self.loop.start()

    def result(self, wall_s: float, events: int = 0) -> RunResult:
        trace = list(self.executor.tree.trace) if self.cfg.keep_trace else []
        horizon = min(self.cfg.duration_s, self.reactor.now())
        return RunResult(self.scenario.seed, self.cfg.watchdog, horizon, list(self.interventions),
                         list(self.watchdog.restarts), list(self.watchdog.detections), self.loop.cycles_completed,
                         self.loop.cycle_failures, trace, wall_s, events)


class SimStack(_Stack):
    """Everything in one process on a virtual clock; runs as fast as the host allows."""

    def __init__(self, cfg: ExperimentConfig, scenario: Scenario, tree: TreeDefinition):
        self.reactor = SimReactor()
        self.cell = SimCell(scenario, self.reactor, faults=cfg.faults)
        self.cell.world.jam_listeners.append(self.on_jam)
        broker = self.cell.broker
        self._assemble(cfg, scenario, tree, self.cell, broker.connect("watchdog"), broker.connect("executor"))

    def reset_world(self) -> None:
        self.cell.reset_world()

    def run(self) -> RunResult:
        t0 = time.perf_counter()
        self.start()
        self.reactor.run_until(self.cfg.duration_s, stop=lambda: self.loop.finished)
        self.loop.stop()
        self.watchdog.stop()
        return self.result(time.perf_counter() - t0, self.reactor.events_processed)


class LiveStack(_Stack):
    """Broker, watchdog and executor in this process; world and components as child processes."""

    def __init__(self, cfg: ExperimentConfig, scenario: Scenario, tree: TreeDefinition, scenario_path: str,
                 port: int | None = None):
        from cellkit.bus.tcp import TcpBroker, TcpEndpoint
        from cellkit.runtime import LiveReactor
        from cellkit.sim.components import WORLD_EVENTS, WORLD_TOPIC
        from cellkit.sim.launch import LiveCell

        self.reactor = LiveReactor(cfg.time_scale)
        self.broker = TcpBroker(port=port, clock_us=lambda: int(self.reactor.now() * 1e6)).start()
        port = self.broker.port
        self.cell = LiveCell(scenario_path, scenario, port, self.reactor.epoch, cfg.time_scale, cfg.faults)
        self.cell.reactor = self.reactor
        self._world_topic = WORLD_TOPIC
        wd = TcpEndpoint("watchdog", self.reactor, port=port)
        ex = TcpEndpoint("executor", self.reactor, port=port)
        self._harness = TcpEndpoint("harness", self.reactor, port=port)
        self._harness.subscribe(WORLD_EVENTS, lambda m: self.on_jam(m.body.get("time_s", self.reactor.now())))
        self._assemble(cfg, scenario, tree, self.cell, wd, ex)

    def reset_world(self) -> None:
        self._harness.request(self._world_topic, {"op": "reset"}, 2000.0)

    def _wait_world(self, timeout_s: float = 15.0) -> None:
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            if self.cell.procs["world"].poll() is not None:
                raise RuntimeError("world process exited during startup")
            try:
                self._harness.call(self._world_topic, {"op": "state"}, 500.0)
                return
            except Exception:
                time.sleep(0.05)
        raise RuntimeError("world process did not come up")

    def run(self, until: Callable[[], bool] | None = None) -> RunResult:
        t0 = time.perf_counter()
        self.reactor.start("harness")
        started = threading.Event()
        try:
            self.cell.start_world()
            self._wait_world()
            self.reactor.post(lambda: (_Stack.start(self), started.set()))
            if not started.wait(10.0):
                raise RuntimeError("stack did not start")
            while self.reactor.now() < self.cfg.duration_s and not self.loop.finished and not (until and until()):
                time.sleep(0.02)
        finally:
            self.shutdown()
        return self.result(time.perf_counter() - t0)

    def shutdown(self) -> None:
        done = threading.Event()
        self.reactor.post(lambda: (self.loop.stop(), self.watchdog.stop(), done.set()))
        done.wait(2.0)
        self.cell.shutdown()
        self.reactor.stop()
        self.broker.stop()


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[RunResult]

    @property
    def report(self) -> MTUIReport:
        return merge_reports([r.report() for r in self.runs])

    @property
    def wall_s(self) -> float:
        return sum(r.wall_s for r in self.runs)


def run_once(cfg: ExperimentConfig, scenario: Scenario, tree: TreeDefinition, seed: int) -> RunResult:
    sc = scenario.with_changes(seed=seed)
    if cfg.mode == "live":
        path = cfg.scenario or str(resources.files("cellkit.data") / "scenario.yaml")
        if seed != scenario.seed:
            raise ConfigError("live runs take their seed from the scenario file", "seed")
        return LiveStack(cfg, sc, tree, path).run()
    return SimStack(cfg, sc, tree).run()


def run_experiment(cfg: ExperimentConfig, progress: Callable[[int, RunResult], None] | None = None) -> ExperimentResult:
    scenario, tree = validate_config(cfg)
    base = scenario.seed if cfg.seed is None else cfg.seed
    runs = []
    for i in range(cfg.runs):
        r = run_once(cfg, scenario, tree, base + i)
        runs.append(r)
        if progress is not None:
            progress(i, r)
    return ExperimentResult(cfg, runs)

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from cellkit.bt.blackboard import Blackboard
from cellkit.bt.definition import NodeSpec, TreeDefinition
from cellkit.bt.nodes import CONTROL_CLASSES, ActionNode, Behavior, ConditionNode, TreeNode
from cellkit.bt.status import LEAF_KINDS, NodeStatus
from cellkit.bt.trace import TickTrace, TraceEvent

log = logging.getLogger(__name__)

ActionFactory = Callable[[dict[str, str]], Behavior]
Predicate = Callable[["TickContext"], bool]
ConditionFactory = Callable[[dict[str, str]], Predicate]


class InstantiationError(ValueError):
    def __init__(self, message: str, missing: Iterable[str] = ()):
        self.missing = sorted(set(missing))
        super().__init__(message)


class BehaviorRegistry:
    """Maps leaf IDs to factories. A factory receives the leaf's string params and may raise
    ``ValueError`` to reject them at instantiation time."""

    def __init__(self) -> None:
        self.actions: dict[str, ActionFactory] = {}
        self.conditions: dict[str, ConditionFactory] = {}

    def register_action(self, name: str, factory: ActionFactory) -> None:
        self.actions[name] = factory

    def register_condition(self, name: str, factory: ConditionFactory) -> None:
        self.conditions[name] = factory

    def action(self, name: str):
        """Decorator registering a synchronous function ``fn(ctx, params) -> NodeStatus`` as an action."""
        def wrap(fn):
            self.register_action(name, lambda params: _SyncBehavior(fn, params))
            return fn
        return wrap

    def condition(self, name: str):
        """Decorator registering ``fn(ctx, params) -> bool`` as a condition."""
        def wrap(fn):
            self.register_condition(name, lambda params: (lambda ctx: fn(ctx, params)))
            return fn
        return wrap

    def resolves(self, spec: NodeSpec) -> bool:
        table = self.actions if spec.kind == "Action" else self.conditions
        return spec.name in table

    def merged(self, other: "BehaviorRegistry") -> "BehaviorRegistry":
        out = BehaviorRegistry()
        for reg in (self, other):
            out.actions.update(reg.actions)
            out.conditions.update(reg.conditions)
        return out


class _SyncBehavior:
    def __init__(self, fn, params):
        self.fn = fn
        self.params = params

    def on_start(self, ctx):
        return self.fn(ctx, self.params)

    on_running = on_start

    def on_halted(self, ctx):
        pass


class TickContext:
    """Handed to behaviors and conditions on every tick."""

    def __init__(self, tree: "ExecutableTree"):
        self._tree = tree
        self.tick_index = 0

    @property
    def blackboard(self) -> Blackboard:
        return self._tree.blackboard

    bb = blackboard

    def now(self) -> float:
        return self._tree.clock()

    def log(self, message: str) -> None:
        self._tree.log_line(message)

    def emit(self, node: TreeNode, old: NodeStatus, new: NodeStatus) -> None:
        self._tree._emit(node, old, new)


class ExecutableTree:
    def __init__(self, root: TreeNode, definition: TreeDefinition, blackboard: Blackboard,
                 clock: Callable[[], float] = time.monotonic, keep_trace: bool = True):
        self.root = root
        self.definition = definition
        self.blackboard = blackboard
        self.clock = clock
        self.keep_trace = keep_trace
        self.trace = TickTrace()
        self.tick_count = 0
        self.trace_listeners: list[Callable[[TraceEvent], None]] = []
        self.log_listeners: list[Callable[[str], None]] = []
        self._ctx = TickContext(self)
        self._last_ts = 0
        root.assign_paths(root.name)

    @property
    def status(self) -> NodeStatus:
        return self.root.status

    def nodes(self) -> list[TreeNode]:
        return list(self.root.walk())

    def find(self, path_suffix: str) -> TreeNode:
        for node in self.root.walk():
            if node.path == path_suffix or node.path.endswith("/" + path_suffix) or node.path.endswith("." + path_suffix):
                return node
        raise KeyError(path_suffix)

    def tick(self) -> NodeStatus:
        """One root-to-leaf pass. Never raises for behavior faults and never returns IDLE."""
        self.tick_count += 1
        self._ctx.tick_index = self.tick_count
        return self.root.tick(self._ctx)

    def halt(self) -> None:
        self.root.halt(self._ctx)

    def reset(self) -> None:
        """Return every node to IDLE (halting RUNNING behaviors) without touching the blackboard."""
        self.root.halt(self._ctx)

    def log_line(self, message: str) -> None:
        log.info(message)
        for fn in self.log_listeners:
            fn(message)

    def _emit(self, node: TreeNode, old: NodeStatus, new: NodeStatus) -> None:
        ts = max(self._last_ts, int(round(self.clock() * 1e6)))
        self._last_ts = ts
        ev = TraceEvent(self._ctx.tick_index, node.path, old, new, ts)
        if self.keep_trace:
            self.trace.append(ev)
        for fn in self.trace_listeners:
            fn(ev)


def _build(spec: NodeSpec, registry: BehaviorRegistry, errors: list[str]) -> TreeNode | None:
    if spec.kind in LEAF_KINDS:
        table = registry.actions if spec.kind == "Action" else registry.conditions
        factory = table.get(spec.name)
        if factory is None:
            return None
        try:
            impl = factory(dict(spec.params))
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(f"{spec.kind} {spec.name}: {exc}")
            return None
        cls = ActionNode if spec.kind == "Action" else ConditionNode
        return cls(spec.name, spec.params, impl)
    children = [_build(c, registry, errors) for c in spec.children]
    if any(c is None for c in children):
        return None
    return CONTROL_CLASSES[spec.kind](spec.name, spec.params, children)


def instantiate(definition: TreeDefinition, registry: BehaviorRegistry, blackboard: Blackboard | None = None,
                clock: Callable[[], float] = time.monotonic, keep_trace: bool = True) -> ExecutableTree:
    missing = [n.name for n in definition.root.walk() if n.kind in LEAF_KINDS and not registry.resolves(n)]
    if missing:
        raise InstantiationError(f"unknown behavior(s): {', '.join(sorted(set(missing)))}", missing)
    errors: list[str] = []
    root = _build(definition.root, registry, errors)
    if root is None:
        raise InstantiationError("invalid leaf parameters: " + "; ".join(errors))
    return ExecutableTree(root, definition, blackboard if blackboard is not None else Blackboard(), clock, keep_trace)


@dataclass
class RunResult:
    final_status: NodeStatus
    tick_count: int
    trace: TickTrace
    missed_deadlines: int = 0
    tick_starts: list[float] = field(default_factory=list)

    def periods(self) -> list[float]:
        return [b - a for a, b in zip(self.tick_starts, self.tick_starts[1:])]


_SPIN_S = 0.0003


def _wait_until(deadline: float) -> None:
    # sleep coarse, then spin: time.sleep alone overshoots by 50-100 us
    remaining = deadline - time.perf_counter()
    if remaining > _SPIN_S:
        time.sleep(remaining - _SPIN_S)
    while time.perf_counter() < deadline:
        pass


def run(tree: ExecutableTree, frequency_hz: float = 1000.0, stop: Callable[[], bool] | None = None, *,
        max_ticks: int | None = None, between_ticks: Callable[[], Any] | None = None,
        record_timing: bool = False) -> RunResult:
    """Tick at a fixed rate until the root completes, ``stop()`` holds, or ``max_ticks`` is reached."""
    if frequency_hz <= 0:
        raise ValueError("frequency_hz must be positive")
    period = 1.0 / frequency_hz
    missed = 0
    starts: list[float] = []
    status = tree.status
    deadline = time.perf_counter()
    ticks = 0
    while True:
        _wait_until(deadline)
        t = time.perf_counter()
        if record_timing:
            starts.append(t)
        if between_ticks is not None:
            between_ticks()
        status = tree.tick()
        ticks += 1
        if status.completed or (stop is not None and stop()) or (max_ticks is not None and ticks >= max_ticks):
            break
        deadline += period
        now = time.perf_counter()
        if now > deadline:
            missed += 1
            if now - deadline > period:
                deadline = now
    return RunResult(status, ticks, tree.trace, missed, starts)

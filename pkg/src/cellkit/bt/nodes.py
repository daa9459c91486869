"""Runtime nodes. Each node keeps its last status; parents reset children to IDLE when they finish."""
from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Callable, Protocol

from cellkit.bt.status import NodeStatus, evaluate_control

if TYPE_CHECKING:
    from cellkit.bt.engine import TickContext

log = logging.getLogger(__name__)

RUNNING, SUCCESS, FAILURE, IDLE = NodeStatus.RUNNING, NodeStatus.SUCCESS, NodeStatus.FAILURE, NodeStatus.IDLE


class Behavior(Protocol):
    """What an Action leaf drives. Calls must not block."""

    def on_start(self, ctx: "TickContext") -> NodeStatus: ...

    def on_running(self, ctx: "TickContext") -> NodeStatus: ...

    def on_halted(self, ctx: "TickContext") -> None: ...


class TreeNode:
    kind = "Node"

    def __init__(self, name: str, params: dict[str, str] | None = None, children: list["TreeNode"] | None = None):
        self.name = name
        self.params = dict(params or {})
        self.children = list(children or [])
        self.status = IDLE
        self.path = name

    def assign_paths(self, path: str) -> None:
        self.path = path
        for i, child in enumerate(self.children):
            child.assign_paths(f"{path}/{i}.{child.name}")

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    def _set(self, ctx: "TickContext", status: NodeStatus) -> None:
        if status is not self.status:
            old, self.status = self.status, status
            ctx.emit(self, old, status)

    def tick(self, ctx: "TickContext") -> NodeStatus:
        status = self._tick(ctx)
        if status is IDLE:
            raise RuntimeError(f"{self.path} returned IDLE from tick")
        self._set(ctx, status)
        return status

    def _tick(self, ctx: "TickContext") -> NodeStatus:
        raise NotImplementedError

    def halt(self, ctx: "TickContext") -> None:
        """Stop a RUNNING subtree and return every node in it to IDLE."""
        for child in self.children:
            child.halt(ctx)
        self._on_halt(ctx)
        self._set(ctx, IDLE)

    def _on_halt(self, ctx: "TickContext") -> None:
        pass

    def _reset_children(self, ctx: "TickContext") -> None:
        for child in self.children:
            child.halt(ctx)


class SequenceNode(TreeNode):
    kind = "Sequence"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._current = 0

    def _tick(self, ctx):
        statuses = [SUCCESS] * self._current
        while self._current < len(self.children):
            s = self.children[self._current].tick(ctx)
            statuses.append(s)
            if s is not SUCCESS:
                break
            self._current += 1
        result = evaluate_control(self.kind, statuses)
        if result.completed:
            self._finish(ctx)
        return result

    def _finish(self, ctx):
        self._current = 0
        self._reset_children(ctx)

    def _on_halt(self, ctx):
        self._current = 0


class FallbackNode(SequenceNode):
    kind = "Fallback"

    def _tick(self, ctx):
        statuses = [FAILURE] * self._current
        while self._current < len(self.children):
            s = self.children[self._current].tick(ctx)
            statuses.append(s)
            if s is not FAILURE:
                break
            self._current += 1
        result = evaluate_control(self.kind, statuses)
        if result.completed:
            self._finish(ctx)
        return result


class ReactiveSequenceNode(TreeNode):
    """Re-evaluates every child from the left on each tick; RUNNING children to the right of a
    child that stops the tick are halted."""

    kind = "ReactiveSequence"

    def _tick(self, ctx):
        statuses = []
        for i, child in enumerate(self.children):
            s = child.tick(ctx)
            statuses.append(s)
            if s is not SUCCESS:
                for later in self.children[i + 1:]:
                    if later.status is RUNNING:
                        later.halt(ctx)
                break
        result = evaluate_control(self.kind, statuses)
        if result.completed:
            self._reset_children(ctx)
        return result


class ParallelNode(TreeNode):
    """Ticks every unfinished child each tick; finished children keep their result until the node completes."""

    kind = "Parallel"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.k = int(self.params["k"])

    def _tick(self, ctx):
        statuses = []
        for child in self.children:
            if child.status.completed:
                statuses.append(child.status)
            else:
                statuses.append(child.tick(ctx))
        result = evaluate_control(self.kind, statuses, {"k": self.k})
        if result.completed:
            self._reset_children(ctx)
        return result


class TimeoutNode(TreeNode):
    kind = "Timeout"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.timeout_s = int(self.params["ms"]) / 1000.0
        self._started: float | None = None

    def _tick(self, ctx):
        now = ctx.now()
        if self._started is None:
            self._started = now
        elif now - self._started >= self.timeout_s:
            ctx.log(f"{self.path}: timeout after {self.timeout_s * 1000:.0f} ms")
            self._started = None
            self._reset_children(ctx)
            return FAILURE
        s = self.children[0].tick(ctx)
        if s.completed:
            self._started = None
            self._reset_children(ctx)
        return s

    def _on_halt(self, ctx):
        self._started = None


class RetryNode(TreeNode):
    kind = "Retry"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.attempts = int(self.params.get("n", 1))
        self._failures = 0

    def _tick(self, ctx):
        child = self.children[0]
        while True:
            s = child.tick(ctx)
            if s is FAILURE and self._failures < self.attempts:
                self._failures += 1
                ctx.log(f"{self.path}: retry {self._failures}/{self.attempts}")
                child.halt(ctx)
                continue
            break
        if s.completed:
            self._failures = 0
            self._reset_children(ctx)
        return s

    def _on_halt(self, ctx):
        self._failures = 0


class ActionNode(TreeNode):
    kind = "Action"

    def __init__(self, name, params, behavior: Behavior):
        super().__init__(name, params)
        self.behavior = behavior

    def _tick(self, ctx):
        try:
            if self.status is RUNNING:
                s = self.behavior.on_running(ctx)
            else:
                s = self.behavior.on_start(ctx)
        except Exception as exc:  # a faulty behavior fails its leaf, never the tick
            log.exception("behavior %s raised", self.path)
            ctx.log(f"{self.path}: behavior fault: {exc!r}")
            return FAILURE
        if not isinstance(s, NodeStatus) or s is IDLE:
            ctx.log(f"{self.path}: behavior returned invalid status {s!r}")
            return FAILURE
        return s

    def _on_halt(self, ctx):
        if self.status is RUNNING:
            try:
                self.behavior.on_halted(ctx)
            except Exception:
                log.exception("halting %s raised", self.path)


class ConditionNode(TreeNode):
    kind = "Condition"

    def __init__(self, name, params, predicate: Callable[["TickContext"], bool]):
        super().__init__(name, params)
        self.predicate = predicate

    def _tick(self, ctx):
        try:
            return SUCCESS if self.predicate(ctx) else FAILURE
        except Exception as exc:
            log.exception("condition %s raised", self.path)
            ctx.log(f"{self.path}: condition fault: {exc!r}")
            return FAILURE


CONTROL_CLASSES = {
    "Sequence": SequenceNode,
    "ReactiveSequence": ReactiveSequenceNode,
    "Fallback": FallbackNode,
    "Parallel": ParallelNode,
    "Timeout": TimeoutNode,
    "Retry": RetryNode,
}

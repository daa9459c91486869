"""The BT executor as a bus client: ticks a tree on its reactor and publishes its log lines."""
from __future__ import annotations

from typing import Callable

from cellkit.bt import Blackboard, NodeStatus, TreeDefinition, instantiate
from cellkit.bus.endpoint import Endpoint
from cellkit.sim.scenario import Scenario
from cellkit.skills import SkillEnv, build_registry

EXECUTOR_LOG = "log/executor"


class Executor:
    def __init__(self, definition: TreeDefinition, scenario: Scenario, endpoint: Endpoint, tick_hz: float = 1000.0,
                 blackboard: Blackboard | None = None, keep_trace: bool = True, request_timeout_ms: float = 1000.0):
        if tick_hz <= 0:
            raise ValueError("tick_hz must be positive")
        self.endpoint = endpoint
        self.reactor = endpoint.reactor
        self.env = SkillEnv(endpoint, scenario, request_timeout_ms=request_timeout_ms)
        self.tree = instantiate(definition, build_registry(self.env), blackboard, clock=self.reactor.now,
                                keep_trace=keep_trace)
        self.tree.log_listeners.append(self._publish_log)
        self.tick_hz = tick_hz
        self.on_complete: list[Callable[[NodeStatus], None]] = []
        self._timer = None
        self.started_at: float | None = None

    @property
    def blackboard(self) -> Blackboard:
        return self.tree.blackboard

    def _publish_log(self, line: str) -> None:
        self.endpoint.publish(EXECUTOR_LOG, {"line": line, "level": "info"})

    def start(self) -> None:
        if self._timer is None:
            self.started_at = self.reactor.now()
            self._timer = self.reactor.call_every(1.0 / self.tick_hz, self.tick)

    def stop(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    @property
    def running(self) -> bool:
        return self._timer is not None

    def tick(self) -> NodeStatus:
        status = self.tree.tick()
        if status.completed:
            for cb in list(self.on_complete):
                cb(status)
        return status

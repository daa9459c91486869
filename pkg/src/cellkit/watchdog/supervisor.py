"""The watchdog process: detection, restart and intervention accounting on one reactor."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

from cellkit.bus.core import DISCONNECT_TOPIC
from cellkit.bus.endpoint import Endpoint, PendingRequest
from cellkit.bus.wire import Heartbeat, Message, ProtocolError
from cellkit.sim.components import ANNOUNCE_TOPIC
from cellkit.sim.scenario import ComponentSpec, WatchdogPolicy
from cellkit.sim.startup import earliest_restart
from cellkit.watchdog.health import HealthMonitor, HealthState
from cellkit.watchdog.interventions import Intervention, InterventionLog
from cellkit.watchdog.logscan import Incident, LogScanner
from cellkit.watchdog.policy import Outcome, RestartLadder, RestartPolicy

log = logging.getLogger(__name__)

CONTROLLERS_TOPIC = "svc/arm.controllers"
AUDITED_COMPONENT = "arm"

_MODE_STATE = {"crash": HealthState.CRASHED, "stall": HealthState.STALLED, "deaf": HealthState.DEAF}


class Launcher(Protocol):
    last_start: dict[str, float]

    def boot(self) -> dict[str, float]: ...
    def launch_at(self, name: str, when: float) -> None: ...
    def kill(self, name: str) -> None: ...
    def kill_all(self) -> None: ...


@dataclass(frozen=True)
class Detection:
    time_s: float
    component: str
    mode: str
    source: str
    detail: str = ""


@dataclass(frozen=True)
class RestartEvent:
    time_s: float
    component: str
    mode: str
    outcome: str
    delay_s: float = 0.0


def audit_controllers(expected: Iterable[str], active: Iterable[str]) -> set[str]:
    return set(expected) - set(active)


class Watchdog:
    """Supervises the cell components through ``launcher``.

    With ``enabled`` false nothing is restarted: every detected failure is an intervention,
    which is how the unsupervised baseline is accounted. The executor is never supervised.
    """

    def __init__(self, endpoint: Endpoint, launcher: Launcher, components: dict[str, ComponentSpec],
                 policy: WatchdogPolicy | None = None, enabled: bool = True,
                 interventions: InterventionLog | None = None,
                 on_intervention: Callable[[Intervention], None] | None = None):
        self.endpoint = endpoint
        self.reactor = endpoint.reactor
        self.launcher = launcher
        self.components = components
        self.policy = policy or WatchdogPolicy()
        self.enabled = enabled
        self.monitor = HealthMonitor(components, self.policy.stall_multiplier)
        self.scanner = LogScanner(self.policy.log_patterns)
        self.ladder = RestartLadder(RestartPolicy.from_watchdog(self.policy))
        self.interventions = interventions if interventions is not None else InterventionLog()
        self.on_intervention = on_intervention
        self.detections: list[Detection] = []
        self.restarts: list[RestartEvent] = []
        self.audits: list[tuple[float, frozenset[str]]] = []
        self.ignored: list[Incident] = []
        self._controller_requests: dict[str, float] = {}
        self._audit_pending = False
        self._timers: list = []
        self._recovered_at: dict[str, float] = {}
        self.running = False

    # wiring
    def start(self) -> "Watchdog":
        self.running = True
        ep = self.endpoint
        ep.subscribe("hb/*", self._on_heartbeat)
        ep.subscribe(DISCONNECT_TOPIC, self._on_disconnect)
        ep.subscribe("log/*", self._on_log)
        ep.subscribe(ANNOUNCE_TOPIC, self._on_announce)
        p = self.policy
        self._timers.append(self.reactor.call_every(p.poll_interval_ms / 1000.0, self.poll))
        self._timers.append(self.reactor.call_every(p.audit_period_s, self.audit))
        return self

    def stop(self) -> None:
        self.running = False
        for t in self._timers:
            t.cancel()
        self._timers.clear()

    def now_us(self) -> int:
        return int(round(self.reactor.now() * 1e6))

    def health(self) -> dict[str, dict]:
        return {c: h.to_dict() for c, h in self.monitor.health.items()}

    # inputs
    def _on_heartbeat(self, m: Message) -> None:
        if not self.running:
            return
        try:
            hb = Heartbeat.from_message(m)
        except ProtocolError:
            return
        if self.monitor.heartbeat(hb, self.now_us(), m.ts_us) is not None:
            self._recovered_at[hb.component_id] = self.reactor.now()

    def _on_disconnect(self, m: Message) -> None:
        if not self.running:
            return
        name = m.body.get("client")
        if name in self.monitor and self.monitor.disconnected(name):
            self.failure(name, "crash", "disconnect", str(m.body.get("reason", "")))

    def _on_announce(self, m: Message) -> None:
        comp = m.body.get("component")
        if comp:
            self.scanner.learn(comp, m.body.get("services", ()))

    def _on_log(self, m: Message) -> None:
        if not self.running:
            return
        line = m.body.get("line")
        if not isinstance(line, str):
            return
        inc = self.scanner.scan(line, self.now_us(), m.topic[4:])
        if inc is not None:
            self.incident(inc)

    def incident(self, inc: Incident) -> None:
        if inc.component not in self.monitor:
            self.ignored.append(inc)
            return
        # grace runs from whichever is later: the launch or the first heartbeat after it
        started = max(self.launcher.last_start.get(inc.component, -1e18), self._recovered_at.get(inc.component, -1e18))
        if self.reactor.now() - started < self.policy.restart_grace_s:
            # lines about the previous incarnation still draining
            self.ignored.append(inc)
            return
        self.failure(inc.component, inc.mode, "log", inc.line)

    def poll(self) -> None:
        for name in self.monitor.poll(self.now_us()):
            self.failure(name, "stall", "heartbeat", f"silent > {self.monitor.stall_threshold_us(name) / 1000:.0f} ms")

    # controller audit
    def audit(self) -> None:
        h = self.monitor.health.get(AUDITED_COMPONENT)
        if h is None or h.state is not HealthState.HEALTHY or self._audit_pending:
            return
        self._audit_pending = True
        self.endpoint.request(CONTROLLERS_TOPIC, {"op": "list"}, 500.0, on_done=self._audited)

    def _audited(self, p: PendingRequest) -> None:
        self._audit_pending = False
        if p.reply is None or not p.reply.get("ok"):
            return  # arm unreachable: the heartbeat and crash paths own this
        missing = audit_controllers(self.policy.expected_controllers, p.reply.get("active", ()))
        now = self.reactor.now()
        self.audits.append((now, frozenset(missing)))
        for name in sorted(missing):
            asked = self._controller_requests.get(name)
            if asked is not None and now - asked < self.policy.audit_period_s:
                continue
            self._controller_requests[name] = now
            self.detections.append(Detection(now, AUDITED_COMPONENT, "controller_missing", "audit", name))
            self.endpoint.request(CONTROLLERS_TOPIC, {"op": "restart", "name": name}, 500.0)

    # decisions
    def failure(self, component: str, mode: str, source: str, detail: str = "") -> None:
        h = self.monitor[component]
        if h.state is HealthState.RESTARTING:
            return
        now = self.reactor.now()
        self.detections.append(Detection(now, component, mode, source, detail))
        self.monitor.mark(component, _MODE_STATE.get(mode, HealthState.CRASHED))
        if not self.enabled:
            self.monitor.mark(component, HealthState.RESTARTING)
            self._intervene(component, f"{mode} detected by {source} with watchdog off")
            return
        decision = self.ladder.decide(component, now)
        self.restarts.append(RestartEvent(now, component, mode, decision.outcome.value, decision.delay_s))
        if decision.outcome is Outcome.RESTARTED:
            self.restart_component(component, decision.delay_s)
        elif decision.outcome is Outcome.ESCALATED:
            self.restart_all()
        else:
            for c in self.monitor.health:
                self.monitor.mark(c, HealthState.RESTARTING)
            self._intervene(component, f"restart limits exhausted after {mode}")

    def restart_component(self, component: str, delay_s: float = 0.0) -> float:
        now = self.reactor.now()
        self.monitor.expect_restart(component, self.now_us())
        self.launcher.kill(component)
        when = max(now + delay_s, earliest_restart(component, self.components, self.launcher.last_start))
        self.launcher.launch_at(component, when)
        return when

    def restart_all(self) -> dict[str, float]:
        now_us = self.now_us()
        for c in self.monitor.health:
            self.monitor.expect_restart(c, now_us)
        self.launcher.kill_all()
        return self.launcher.boot()

    def record_intervention(self, cause: str, component: str | None = None, context: str = "") -> Intervention:
        entry = self.interventions.record(self.now_us(), cause, component, context)
        if self.on_intervention is not None:
            self.reactor.call_later(0.0, self.on_intervention, entry)
        return entry

    def _intervene(self, component: str, context: str) -> None:
        self.record_intervention("escalation_exhausted", component, context)
        if self.on_intervention is None:
            self.operator_reset()

    def operator_reset(self) -> None:
        """What the human does after an intervention: a clean restart with fresh limits."""
        self.ladder.reset()
        self._controller_requests.clear()
        self.restart_all()

"""Per-component health from heartbeats and broker disconnects."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from cellkit.bus.wire import Heartbeat


class HealthState(str, Enum):
    HEALTHY = "healthy"
    STALLED = "stalled"
    CRASHED = "crashed"
    DEAF = "deaf"
    RESTARTING = "restarting"


@dataclass
class ComponentHealth:
    component_id: str
    state: HealthState = HealthState.RESTARTING
    last_seq: int = -1
    last_seen_us: int = 0
    restart_count: int = 0
    period_ms: int = 100
    restart_requested_us: int = -1

    def to_dict(self) -> dict:
        return {"component_id": self.component_id, "state": self.state.value, "last_seq": self.last_seq,
                "last_seen_us": self.last_seen_us, "restart_count": self.restart_count}


class HealthMonitor:
    """Detector rules only; no transport and no clock of its own.

    A component starts in ``restarting`` (not yet heard from). A valid heartbeat makes it
    healthy, except that a deaf component stays deaf until it is restarted: its heartbeat
    is fine by definition. Silence longer than ``stall_multiplier`` periods marks a healthy
    component stalled; a closed connection marks it crashed.
    """

    def __init__(self, supervised: Iterable[str], stall_multiplier: float = 5.0, default_period_ms: int = 100):
        if stall_multiplier <= 1:
            raise ValueError("stall_multiplier must exceed 1")
        self.stall_multiplier = stall_multiplier
        self.health = {c: ComponentHealth(c, period_ms=default_period_ms) for c in supervised}
        self.unknown: set[str] = set()

    def __getitem__(self, component: str) -> ComponentHealth:
        return self.health[component]

    def __contains__(self, component: str) -> bool:
        return component in self.health

    def states(self) -> dict[str, HealthState]:
        return {c: h.state for c, h in self.health.items()}

    def heartbeat(self, hb: Heartbeat, now_us: int, sent_us: int | None = None) -> HealthState | None:
        """Record a heartbeat; returns the new state when it changed.

        While restarting, a beat sent no later than the restart request is still in flight
        from the old incarnation and is dropped.
        """
        h = self.health.get(hb.component_id)
        if h is None:
            self.unknown.add(hb.component_id)
            return None
        if h.state is HealthState.RESTARTING and sent_us is not None and sent_us <= h.restart_requested_us:
            return None
        h.last_seq = hb.seq
        h.last_seen_us = now_us
        h.period_ms = hb.period_ms
        if h.state in (HealthState.HEALTHY, HealthState.DEAF):
            return None
        h.state = HealthState.HEALTHY
        return h.state

    def disconnected(self, component: str) -> bool:
        """Broker reported the connection closed. True when this is news."""
        h = self.health.get(component)
        if h is None or h.state in (HealthState.CRASHED, HealthState.RESTARTING):
            return False
        h.state = HealthState.CRASHED
        return True

    def mark(self, component: str, state: HealthState) -> None:
        h = self.health[component]
        if state is HealthState.RESTARTING and h.state is not HealthState.RESTARTING:
            h.restart_count += 1
        h.state = state

    def expect_restart(self, component: str, now_us: int) -> None:
        """Launcher is bringing the component back; silence until then is expected."""
        self.mark(component, HealthState.RESTARTING)
        self.health[component].last_seen_us = now_us
        self.health[component].restart_requested_us = now_us

    def stall_threshold_us(self, component: str) -> float:
        return self.stall_multiplier * self.health[component].period_ms * 1000.0

    def poll(self, now_us: int) -> list[str]:
        """Mark and return healthy components that have been silent too long."""
        stalled = []
        for c, h in self.health.items():
            if h.state is HealthState.HEALTHY and now_us - h.last_seen_us > self.stall_threshold_us(c):
                h.state = HealthState.STALLED
                stalled.append(c)
        return stalled

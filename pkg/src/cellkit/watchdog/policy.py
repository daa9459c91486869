"""Restart policy and the escalation ladder."""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass
from enum import Enum

from cellkit.sim.scenario import WatchdogPolicy


class Outcome(str, Enum):
    RESTARTED = "restarted"
    ESCALATED = "escalated_system_restart"
    INTERVENTION = "intervention"


@dataclass(frozen=True)
class RestartPolicy:
    max_restarts_per_window: int = 5
    window_s: float = 60.0
    backoff_initial_ms: float = 500.0
    backoff_multiplier: float = 2.0
    max_system_restarts: int = 2
    system_window_s: float = 600.0

    def __post_init__(self):
        if self.max_restarts_per_window < 0 or self.max_system_restarts < 0:
            raise ValueError("restart limits must be non-negative")
        if self.window_s <= 0 or self.system_window_s <= 0:
            raise ValueError("windows must be positive")
        if self.backoff_initial_ms < 0 or self.backoff_multiplier < 1:
            raise ValueError("backoff must be non-negative and non-shrinking")

    @classmethod
    def from_watchdog(cls, p: WatchdogPolicy) -> "RestartPolicy":
        return cls(p.max_restarts, p.window_s, p.backoff_initial_ms, p.backoff_multiplier,
                   p.max_system_restarts, p.system_window_s)

    def backoff_s(self, recent: int) -> float:
        """Delay before the restart that follows ``recent`` restarts in the window."""
        return self.backoff_initial_ms * self.backoff_multiplier ** recent / 1000.0


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    delay_s: float = 0.0


class RestartLadder:
    """Component restart, then system restart, then intervention.

    A system restart clears the per-component windows, since every component starts over.
    """

    def __init__(self, policy: RestartPolicy):
        self.policy = policy
        self._restarts: dict[str, deque[float]] = defaultdict(deque)
        self._system: deque[float] = deque()

    @staticmethod
    def _trim(q: deque[float], now: float, window: float) -> None:
        while q and q[0] <= now - window:
            q.popleft()

    def recent(self, component: str, now: float) -> int:
        q = self._restarts[component]
        self._trim(q, now, self.policy.window_s)
        return len(q)

    def decide(self, component: str, now: float) -> Decision:
        p = self.policy
        q = self._restarts[component]
        self._trim(q, now, p.window_s)
        if len(q) < p.max_restarts_per_window:
            delay = p.backoff_s(len(q))
            q.append(now)
            return Decision(Outcome.RESTARTED, delay)
        self._trim(self._system, now, p.system_window_s)
        if len(self._system) < p.max_system_restarts:
            self._system.append(now)
            self._restarts.clear()
            return Decision(Outcome.ESCALATED)
        return Decision(Outcome.INTERVENTION)

    def reset(self) -> None:
        """An operator fixed the cell: all windows start over."""
        self._restarts.clear()
        self._system.clear()

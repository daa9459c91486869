"""Tick traces: one status change per record, replayable without a clock.

File format, one event per line::

    tick_index node_path old_status new_status timestamp_us
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

from cellkit.bt.status import NodeStatus


class TraceError(ValueError):
    pass


class TraceEvent(NamedTuple):
    tick_index: int
    node_path: str
    old_status: NodeStatus
    new_status: NodeStatus
    timestamp_us: int

    def to_line(self) -> str:
        return f"{self.tick_index} {self.node_path} {self.old_status.value} {self.new_status.value} {self.timestamp_us}"

    @classmethod
    def from_line(cls, line: str, lineno: int | None = None) -> "TraceEvent":
        parts = line.split()
        where = f"line {lineno}: " if lineno is not None else ""
        if len(parts) != 5:
            raise TraceError(f"{where}expected 5 fields, got {len(parts)}: {line!r}")
        try:
            return cls(int(parts[0]), parts[1], NodeStatus(parts[2]), NodeStatus(parts[3]), int(parts[4]))
        except ValueError as exc:
            raise TraceError(f"{where}{exc}") from None


@dataclass
class TickTrace:
    events: list[TraceEvent]

    def __init__(self, events: Iterable[TraceEvent] = ()):
        self.events = list(events)

    def append(self, event: TraceEvent) -> None:
        self.events.append(event)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ev in self.events:
                fh.write(ev.to_line() + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "TickTrace":
        events = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    events.append(TraceEvent.from_line(line, lineno))
        return cls(events)

    def transitions(self) -> list[tuple[str, NodeStatus]]:
        return [(ev.node_path, ev.new_status) for ev in self.events]


def replay(trace: TickTrace | Iterable[TraceEvent]) -> list[tuple[str, NodeStatus]]:
    """Reproduce the status-change sequence; rejects decreasing tick indices."""
    out = []
    last_tick = None
    for i, ev in enumerate(trace):
        if last_tick is not None and ev.tick_index < last_tick:
            raise TraceError(f"event {i}: tick_index {ev.tick_index} after {last_tick}")
        last_tick = ev.tick_index
        out.append((ev.node_path, ev.new_status))
    return out


def as_trace(transitions: Iterable[tuple[str, NodeStatus]]) -> TickTrace:
    """Lift a replayed sequence back into a trace (one pseudo-tick per event)."""
    return TickTrace(TraceEvent(i, path, NodeStatus.IDLE, status, 0)
                     for i, (path, status) in enumerate(transitions))

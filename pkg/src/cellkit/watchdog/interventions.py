"""The intervention log: events a human would have had to fix."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

CAUSES = ("jam", "escalation_exhausted", "task_deadline_exceeded")


@dataclass(frozen=True)
class Intervention:
    timestamp_us: int
    cause: str
    component: str = "-"
    context: str = ""

    def __post_init__(self):
        if self.cause not in CAUSES:
            raise ValueError(f"unknown intervention cause {self.cause!r}")
        if not self.component or any(c.isspace() for c in self.component):
            raise ValueError(f"component must be a single token, got {self.component!r}")

    @property
    def time_s(self) -> float:
        return self.timestamp_us / 1e6

    def to_line(self) -> str:
        context = " ".join(self.context.split())
        return f"{self.timestamp_us} {self.cause} {self.component} {context}".rstrip()

    @classmethod
    def from_line(cls, line: str) -> "Intervention":
        parts = line.rstrip("\n").split(" ", 3)
        if len(parts) < 3:
            raise ValueError(f"malformed intervention line: {line!r}")
        return cls(int(parts[0]), parts[1], parts[2], parts[3] if len(parts) == 4 else "")


class InterventionLog:
    def __init__(self):
        self.records: list[Intervention] = []
        self.listeners: list[Callable[[Intervention], None]] = []

    def record(self, timestamp_us: int, cause: str, component: str | None = None, context: str = "") -> Intervention:
        entry = Intervention(int(timestamp_us), cause, component or "-", " ".join(context.split()))
        self.records.append(entry)
        for cb in list(self.listeners):
            cb(entry)
        return entry

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Intervention]:
        return iter(self.records)

    def lines(self) -> list[str]:
        return [r.to_line() for r in self.records]

    def write(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.lines()))

    @classmethod
    def read(cls, path: str | Path) -> "InterventionLog":
        log = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                log.records.append(Intervention.from_line(line))
        return log

"""Failure patterns over log lines."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

PATTERN_MODES = ("crash", "stall", "deaf")


class PatternError(ValueError):
    pass


@dataclass(frozen=True)
class LogPattern:
    """A regex plus the fault mode it signals and whom it blames.

    Blame comes from the ``component`` binding if given, else a ``component`` group in
    the match, else a ``service`` group resolved through the service owner map.
    """

    pattern: str
    mode: str
    component: str | None = None
    regex: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in PATTERN_MODES:
            raise PatternError(f"pattern {self.pattern!r}: unknown mode {self.mode!r}")
        try:
            rx = re.compile(self.pattern)
        except re.error as exc:
            raise PatternError(f"pattern {self.pattern!r} does not compile: {exc}") from None
        groups = rx.groupindex
        if self.component is None and "component" not in groups and "service" not in groups:
            raise PatternError(f"pattern {self.pattern!r} names no component")
        object.__setattr__(self, "regex", rx)

    @classmethod
    def from_dict(cls, d: dict) -> "LogPattern":
        unknown = set(d) - {"pattern", "mode", "component"}
        if unknown:
            raise PatternError(f"unknown pattern keys {sorted(unknown)}")
        try:
            return cls(str(d["pattern"]), str(d["mode"]), d.get("component"))
        except KeyError as exc:
            raise PatternError(f"pattern entry missing {exc}") from None


@dataclass(frozen=True)
class Incident:
    component: str
    mode: str
    line: str
    timestamp_us: int
    source: str | None = None


def service_component(service: str) -> str:
    """Fallback owner guess: ``svc/camera.detect`` -> ``camera``."""
    name = service[4:] if service.startswith("svc/") else service
    return name.split(".", 1)[0]


class LogScanner:
    def __init__(self, patterns: Iterable[LogPattern | dict], owners: dict[str, str] | None = None):
        self.patterns = [p if isinstance(p, LogPattern) else LogPattern.from_dict(p) for p in patterns]
        self.owners: dict[str, str] = dict(owners or {})
        self.unresolved = 0

    def learn(self, component: str, services: Iterable[str]) -> None:
        for s in services:
            self.owners[s] = component

    def _blame(self, p: LogPattern, m: re.Match) -> str | None:
        if p.component is not None:
            return p.component
        gd = m.groupdict()
        if gd.get("component"):
            return gd["component"]
        svc = gd.get("service")
        if svc:
            return self.owners.get(svc) or service_component(svc)
        return None

    def scan(self, line: str, timestamp_us: int = 0, source: str | None = None) -> Incident | None:
        """First matching pattern wins; at most one incident per line."""
        for p in self.patterns:
            m = p.regex.search(line)
            if m is None:
                continue
            who = self._blame(p, m)
            if who is None:
                self.unresolved += 1
                return None
            return Incident(who, p.mode, line, timestamp_us, source)
        return None

    def replay(self, lines: Iterable[str]) -> list[Incident]:
        out = []
        for i, line in enumerate(lines):
            inc = self.scan(line.rstrip("\n"), i)
            if inc is not None:
                out.append(inc)
        return out

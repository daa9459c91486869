"""Fault specifications and their firing schedules."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Any, Iterator

FAULT_MODES = ("crash", "stall", "deaf", "ft_noise", "planner_fail", "controller_missing")


class FaultConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    """``rate_per_s`` gives an exponential schedule; ``times_s`` fixed absolute times. Exactly one is set."""

    component: str
    mode: str
    rate_per_s: float | None = None
    times_s: tuple[float, ...] | None = None
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in FAULT_MODES:
            raise FaultConfigError(f"unknown fault mode {self.mode!r}")
        if (self.rate_per_s is None) == (self.times_s is None):
            raise FaultConfigError("fault schedule needs exactly one of rate_per_s or times_s")
        if self.rate_per_s is not None and not (self.rate_per_s >= 0 and math.isfinite(self.rate_per_s)):
            raise FaultConfigError("fault rate must be finite and >= 0")
        if self.times_s is not None:
            object.__setattr__(self, "times_s", tuple(sorted(float(t) for t in self.times_s)))
            if any(t < 0 for t in self.times_s):
                raise FaultConfigError("fault times must be >= 0")
        p = self.params.get("p_fail")
        if p is not None and not 0.0 <= float(p) <= 1.0:
            raise FaultConfigError("p_fail must lie in [0, 1]")
        sigma = self.params.get("sigma_n")
        if sigma is not None and float(sigma) < 0:
            raise FaultConfigError("sigma_n must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "FaultSpec":
        sched = d.get("schedule", {})
        if not isinstance(sched, dict):
            raise FaultConfigError("schedule must be a mapping")
        unknown = set(sched) - {"rate_per_s", "times_s"}
        if unknown:
            raise FaultConfigError(f"unknown schedule keys {sorted(unknown)}")
        times = sched.get("times_s")
        return cls(component=str(d["component"]), mode=str(d["mode"]),
                   rate_per_s=None if sched.get("rate_per_s") is None else float(sched["rate_per_s"]),
                   times_s=None if times is None else tuple(times),
                   params=dict(d.get("params") or {}))

    def to_dict(self) -> dict:
        sched = {"rate_per_s": self.rate_per_s} if self.rate_per_s is not None else {"times_s": list(self.times_s)}
        return {"component": self.component, "mode": self.mode, "schedule": sched, "params": dict(self.params)}


class FaultSchedule:
    """Iterator over absolute firing times for one spec, starting at ``start_s``."""

    def __init__(self, spec: FaultSpec, rng: random.Random, start_s: float = 0.0):
        self.spec = spec
        self.rng = rng
        self.start_s = start_s

    def __iter__(self) -> Iterator[float]:
        if self.spec.times_s is not None:
            yield from (t for t in self.spec.times_s if t >= self.start_s)
            return
        rate = self.spec.rate_per_s
        if not rate:
            return
        t = self.start_s
        while True:
            t += self.rng.expovariate(rate)
            yield t

    def next_after(self, now: float) -> float | None:
        for t in self:
            if t >= now:
                return t
        return None

    def times_until(self, horizon_s: float) -> list[float]:
        out = []
        for t in self:
            if t > horizon_s:
                break
            out.append(t)
        return out


def split_rate(total_rate: float, components: list[str], mode: str = "crash") -> list[FaultSpec]:
    """Spread a total exponential rate evenly; the superposition is again exponential with ``total_rate``."""
    if not components:
        raise FaultConfigError("need at least one component")
    each = total_rate / len(components)
    return [FaultSpec(c, mode, rate_per_s=each) for c in components]

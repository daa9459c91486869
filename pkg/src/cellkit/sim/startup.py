"""Startup ordering for cell components."""
from __future__ import annotations

from cellkit.sim.scenario import ComponentSpec


class StartupError(ValueError):
    pass


def startup_order(components: dict[str, ComponentSpec]) -> list[str]:
    """Dependencies first; ties keep declaration order. Raises on cycles and unknown names."""
    order: list[str] = []
    state: dict[str, int] = {}  # 1 visiting, 2 done

    def visit(name: str, stack: list[str]) -> None:
        if name not in components:
            raise StartupError(f"unknown component {name!r} (needed by {stack[-1] if stack else '?'})")
        s = state.get(name)
        if s == 2:
            return
        if s == 1:
            cycle = stack[stack.index(name):] + [name]
            raise StartupError("dependency cycle: " + " -> ".join(cycle))
        state[name] = 1
        for dep in components[name].depends_on:
            visit(dep, stack + [name])
        state[name] = 2
        order.append(name)

    for name in components:
        visit(name, [])
    return order


def startup_times(components: dict[str, ComponentSpec], t0: float = 0.0) -> dict[str, float]:
    """Start time of each component: its delay after the latest dependency start."""
    times: dict[str, float] = {}
    for name in startup_order(components):
        spec = components[name]
        base = max([t0] + [times[d] for d in spec.depends_on])
        times[name] = base + spec.delay_s
    return times


def earliest_restart(name: str, components: dict[str, ComponentSpec], last_start: dict[str, float]) -> float:
    """A restarted component still honours its delay after each dependency's latest start."""
    spec = components[name]
    return max([0.0] + [last_start.get(d, 0.0) + spec.delay_s for d in spec.depends_on])

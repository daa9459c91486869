"""Launchers: bring cell components up and down.

:class:`SimCell` keeps every component in-process on a virtual-clock reactor.
:class:`LiveCell` runs the world and each component as a child process talking
to a TCP broker. Both expose ``launch``, ``kill``, ``is_running`` and
``last_start`` so the watchdog can drive either.
"""
from __future__ import annotations

import json
import logging
import os
import random
import signal
import subprocess
import sys
import time
from typing import Callable

from cellkit.bus.memory import MemoryBroker
from cellkit.runtime import SimReactor
from cellkit.sim.cell import CellModel
from cellkit.sim.components import BusWorldLink, CellComponent, DirectWorldLink, WorldServer, driver_for
from cellkit.sim.faults import FaultSpec
from cellkit.sim.scenario import Scenario
from cellkit.sim.startup import startup_times

log = logging.getLogger(__name__)


class SimCell:
    """The whole cell on one :class:`SimReactor` and :class:`MemoryBroker`."""

    def __init__(self, scenario: Scenario, reactor: SimReactor | None = None, broker: MemoryBroker | None = None,
                 faults: tuple[FaultSpec, ...] | None = None, direct_world: bool = True):
        self.scenario = scenario
        self.components = scenario.components
        self.reactor = reactor or SimReactor()
        self.broker = broker or MemoryBroker(self.reactor, latency_s=scenario.bus_latency_s,
                                             rng=random.Random(f"{scenario.seed}:bus"))
        self.faults = scenario.faults if faults is None else tuple(faults)
        self.direct_world = direct_world
        self.cell = CellModel(scenario, start_time=self.reactor.now())
        self.world = WorldServer(self.cell, self.broker.connect("world"))
        self.instances: dict[str, CellComponent] = {}
        self.incarnations: dict[str, int] = {}
        self.last_start: dict[str, float] = {}
        self.launch_log: list[tuple[float, str, int]] = []
        self.launch_hooks: list[Callable[[str, CellComponent], None]] = []
        self._pending: dict[str, object] = {}

    def boot(self) -> dict[str, float]:
        """Schedule every component per the startup graph, relative to now."""
        times = startup_times(self.components, self.reactor.now())
        for name, t in times.items():
            self.launch_at(name, t)
        return times

    def launch_at(self, name: str, when: float) -> None:
        old = self._pending.pop(name, None)
        if old is not None:
            old.cancel()
        if when <= self.reactor.now():
            self.launch(name)
        else:
            self._pending[name] = self.reactor.call_at(when, self._launch_scheduled, name)

    def _launch_scheduled(self, name: str) -> None:
        self._pending.pop(name, None)
        self.launch(name)

    def launch(self, name: str) -> CellComponent:
        if name not in self.components:
            raise KeyError(f"unknown component {name!r}")
        if self.is_running(name):
            self.kill(name)
        n = self.incarnations.get(name, -1) + 1
        self.incarnations[name] = n
        ep = self.broker.connect(name)
        link = DirectWorldLink(self.world, self.reactor.now) if self.direct_world else BusWorldLink(ep)
        comp = driver_for(name)(self.components[name], self.scenario, ep, link, incarnation=n,
                                exit_process=ep.kill, faults=self.faults)
        self.instances[name] = comp
        self.last_start[name] = self.reactor.now()
        self.launch_log.append((self.reactor.now(), name, n))
        comp.start()
        for hook in self.launch_hooks:
            hook(name, comp)
        return comp

    def kill(self, name: str) -> None:
        pending = self._pending.pop(name, None)
        if pending is not None:
            pending.cancel()
        comp = self.instances.get(name)
        if comp is None:
            return
        comp.shutdown()
        comp.endpoint.kill("killed")

    def kill_all(self) -> None:
        for name in list(self.components):
            self.kill(name)

    def is_running(self, name: str) -> bool:
        comp = self.instances.get(name)
        return comp is not None and comp.alive and not comp.endpoint.closed

    def is_pending(self, name: str) -> bool:
        return name in self._pending

    def reset_world(self) -> None:
        self.world.handle("reset", {}, self.reactor.now())


class LiveCell:
    """World plus components as child processes connected to a TCP broker on ``port``."""

    def __init__(self, scenario_path: str, scenario: Scenario, port: int, epoch: float, time_scale: float = 1.0,
                 faults: tuple[FaultSpec, ...] | None = None, python: str = sys.executable):
        self.scenario_path = scenario_path
        self.scenario = scenario
        self.components = scenario.components
        self.port = port
        self.epoch = epoch
        self.time_scale = time_scale
        self.faults = faults
        self.python = python
        self.procs: dict[str, subprocess.Popen] = {}
        self.incarnations: dict[str, int] = {}
        self.last_start: dict[str, float] = {}
        self.launch_log: list[tuple[float, str, int]] = []
        self._timers: dict[str, object] = {}
        self.reactor = None  # set by the owner before boot

    def now(self) -> float:
        return (time.time() - self.epoch) * self.time_scale

    def _spawn(self, name: str, incarnation: int) -> subprocess.Popen:
        spec = self.components.get(name)
        if spec is not None and spec.launch:
            cmd = list(spec.launch)
        else:
            cmd = [self.python, "-m", "cellkit.sim.node", name]
        cmd += ["--scenario", self.scenario_path, "--port", str(self.port), "--epoch", repr(self.epoch),
                "--time-scale", str(self.time_scale), "--incarnation", str(incarnation)]
        if self.faults is not None:
            cmd += ["--faults", json.dumps([f.to_dict() for f in self.faults])]
        return subprocess.Popen(cmd, stdin=subprocess.DEVNULL)

    def start_world(self) -> None:
        self.procs["world"] = self._spawn("world", 0)

    def boot(self) -> dict[str, float]:
        times = startup_times(self.components, self.now())
        for name, t in times.items():
            self.launch_at(name, t)
        return times

    def launch_at(self, name: str, when: float) -> None:
        old = self._timers.pop(name, None)
        if old is not None:
            old.cancel()
        if when <= self.now():
            self.launch(name)
        else:
            self._timers[name] = self.reactor.call_at(when, self._launch_scheduled, name)

    def _launch_scheduled(self, name: str) -> None:
        self._timers.pop(name, None)
        self.launch(name)

    def launch(self, name: str) -> None:
        if self.is_running(name):
            self.kill(name)
        n = self.incarnations.get(name, -1) + 1
        self.incarnations[name] = n
        self.procs[name] = self._spawn(name, n)
        self.last_start[name] = self.now()
        self.launch_log.append((self.now(), name, n))

    def kill(self, name: str) -> None:
        t = self._timers.pop(name, None)
        if t is not None:
            t.cancel()
        p = self.procs.get(name)
        if p is not None and p.poll() is None:
            p.send_signal(signal.SIGKILL)
            p.wait(timeout=5)

    def is_running(self, name: str) -> bool:
        p = self.procs.get(name)
        return p is not None and p.poll() is None

    def is_pending(self, name: str) -> bool:
        return name in self._timers

    def kill_all(self) -> None:
        for name in list(self.procs):
            self.kill(name)

    def pid(self, name: str) -> int | None:
        p = self.procs.get(name)
        return None if p is None else p.pid

    def shutdown(self) -> None:
        self.kill_all()
        for p in self.procs.values():
            try:
                p.wait(timeout=2)
            except subprocess.TimeoutExpired:  # pragma: no cover
                os.kill(p.pid, signal.SIGKILL)

"""In-process broker on a :class:`~cellkit.runtime.SimReactor`: same routing as the TCP broker,
with a configurable delivery latency. Delivery to each client stays FIFO even with jitter."""
from __future__ import annotations

import random
from typing import Callable

from cellkit.bus.core import BrokerCore
from cellkit.bus.endpoint import Endpoint
from cellkit.bus.wire import Message, decode_message, encode_message
from cellkit.runtime import SimReactor


class MemoryEndpoint(Endpoint):
    def __init__(self, name: str, broker: "MemoryBroker"):
        super().__init__(name, broker.reactor)
        self.broker = broker

    def send(self, m: Message) -> None:
        if self.closed:
            return
        if self.broker.wire_check:
            m = decode_message(encode_message(m))
        self.broker.core.handle(self, m)

    def _close_transport(self) -> None:
        self.broker.core.detach(self, "connection closed")

    def kill(self, reason: str = "connection closed") -> None:
        """Abrupt death of the owning process: the broker notices the closed connection."""
        if self.closed:
            return
        self.closed = True
        for hb in self.heartbeats:
            hb.stop()
        self.broker.core.detach(self, reason)

    def __hash__(self) -> int:
        return id(self)

    def __eq__(self, other) -> bool:
        return self is other


class MemoryBroker:
    def __init__(self, reactor: SimReactor, latency_s: float = 0.0005, jitter_s: float = 0.0,
                 rng: random.Random | None = None, wire_check: bool = False):
        self.reactor = reactor
        self.latency_s = latency_s
        self.jitter_s = jitter_s
        self.rng = rng or random.Random(0)
        self.wire_check = wire_check
        self.core: BrokerCore[MemoryEndpoint] = BrokerCore(self._deliver, lambda: int(round(reactor.now() * 1e6)))
        self._link_clock: dict[MemoryEndpoint, float] = {}
        self.delivered = 0

    def connect(self, name: str) -> MemoryEndpoint:
        ep = MemoryEndpoint(name, self)
        self.core.attach(ep)
        ep.hello()
        return ep

    def _deliver(self, target: MemoryEndpoint, m: Message) -> None:
        if target.closed:
            return
        delay = self.latency_s
        if self.jitter_s:
            delay += self.rng.uniform(0.0, self.jitter_s)
        at = max(self.reactor.now() + delay, self._link_clock.get(target, 0.0))
        self._link_clock[target] = at
        self.delivered += 1
        self.reactor.call_at(at, target._dispatch, m)

    def tap(self, pattern: str, callback: Callable[[Message], None], name: str = "tap") -> MemoryEndpoint:
        ep = self.connect(name)
        ep.subscribe(pattern, callback)
        return ep

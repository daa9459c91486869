"""Routing shared by the TCP broker and the in-memory broker.

Clients talk to the broker itself with ``pub`` messages on ``bus/ctl``::

    {"op": "hello", "client": NAME}
    {"op": "subscribe" | "unsubscribe", "pattern": PATTERN}
    {"op": "serve" | "unserve", "topic": SERVICE_TOPIC}

The broker announces dropped clients on ``bus/disconnect`` and writes its own
log lines on ``log/broker``.
"""
from __future__ import annotations

import logging
from typing import Callable, Generic, Hashable, TypeVar

from cellkit.bus.wire import Message, topic_matches

log = logging.getLogger(__name__)

CTL_TOPIC = "bus/ctl"
DISCONNECT_TOPIC = "bus/disconnect"
BROKER_LOG_TOPIC = "log/broker"

C = TypeVar("C", bound=Hashable)


class BrokerCore(Generic[C]):
    def __init__(self, send: Callable[[C, Message], None], clock_us: Callable[[], int]):
        self._send = send
        self._clock_us = clock_us
        self.names: dict[C, str] = {}
        self.subscriptions: dict[C, list[str]] = {}
        self.services: dict[str, C] = {}
        self.reply_routes: dict[int, C] = {}
        self.dropped_requests = 0

    def attach(self, client: C) -> None:
        self.names.setdefault(client, f"anon-{len(self.names)}")
        self.subscriptions.setdefault(client, [])

    def detach(self, client: C, reason: str = "connection closed") -> None:
        name = self.names.pop(client, None)
        self.subscriptions.pop(client, None)
        for topic in [t for t, c in self.services.items() if c == client]:
            del self.services[topic]
        for rid in [i for i, c in self.reply_routes.items() if c == client]:
            del self.reply_routes[rid]
        if name is not None:
            self._broadcast(Message("pub", DISCONNECT_TOPIC, {"client": name, "reason": reason}, ts_us=self._clock_us()))
            self.log(f"{reason}: {name}")

    def log(self, line: str) -> None:
        self._broadcast(Message("pub", BROKER_LOG_TOPIC, {"line": line}, ts_us=self._clock_us()))

    def _broadcast(self, m: Message, exclude: C | None = None) -> None:
        for client, patterns in list(self.subscriptions.items()):
            if client == exclude:
                continue
            if any(topic_matches(p, m.topic) for p in patterns):
                self._send(client, m)

    def handle(self, client: C, m: Message) -> None:
        if m.topic == CTL_TOPIC and m.kind == "pub":
            self._control(client, m.body)
        elif m.kind in ("pub", "hb"):
            self._broadcast(m)
        elif m.kind == "req":
            server = self.services.get(m.topic)
            if server is None:
                self.dropped_requests += 1
                return
            self.reply_routes[m.id] = client
            self._send(server, m)
        elif m.kind == "rep":
            requester = self.reply_routes.pop(m.id, None)
            if requester is not None:
                self._send(requester, m)

    def _control(self, client: C, body: dict) -> None:
        op = body.get("op")
        if op == "hello":
            self.names[client] = str(body.get("client", self.names.get(client)))
        elif op == "subscribe":
            self.subscriptions.setdefault(client, []).append(str(body["pattern"]))
        elif op == "unsubscribe":
            pats = self.subscriptions.get(client, [])
            if body.get("pattern") in pats:
                pats.remove(body["pattern"])
        elif op == "serve":
            self.services[str(body["topic"])] = client
        elif op == "unserve":
            if self.services.get(body.get("topic")) == client:
                del self.services[body["topic"]]
        else:
            log.warning("unknown control op %r from %s", op, self.names.get(client))

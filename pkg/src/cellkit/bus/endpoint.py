from __future__ import annotations

import itertools
import logging
import threading
import zlib
from typing import Any, Callable

from cellkit.bus.core import CTL_TOPIC, DISCONNECT_TOPIC
from cellkit.bus.wire import Heartbeat, Message, topic_matches
from cellkit.runtime import Reactor, Timer

log = logging.getLogger(__name__)

Handler = Callable[[Message], "dict | None"]


class RequestTimeout(Exception):
    def __init__(self, topic: str, timeout_ms: float):
        self.topic = topic
        self.timeout_ms = timeout_ms
        super().__init__(f"request to {topic} timed out after {timeout_ms:.0f} ms")


class PendingRequest:
    """Completion cell for one in-flight request; resolved on the endpoint's reactor."""

    __slots__ = ("id", "topic", "body", "sent_at", "timeout_ms", "reply", "timed_out", "on_done", "_timer", "_event")

    def __init__(self, id_: int, topic: str, body: dict, sent_at: float, timeout_ms: float, on_done=None):
        self.id = id_
        self.topic = topic
        self.body = body
        self.sent_at = sent_at
        self.timeout_ms = timeout_ms
        self.reply: dict | None = None
        self.timed_out = False
        self.on_done = on_done
        self._timer: Timer | None = None
        self._event: threading.Event | None = None

    def done(self) -> bool:
        return self.reply is not None or self.timed_out

    def _finish(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
        if self._event is not None:
            self._event.set()
        if self.on_done is not None:
            self.on_done(self)


class HeartbeatEmitter:
    """Publishes ``hb/<component>`` every period. ``paused`` freezes emission (stall fault)
    without closing the connection."""

    def __init__(self, endpoint: "Endpoint", component_id: str, period_ms: int, jitter: Callable[[], float] | None = None):
        if period_ms < 10:
            raise ValueError("heartbeat period must be >= 10 ms")
        self.endpoint = endpoint
        self.component_id = component_id
        self.period_ms = int(period_ms)
        self.seq = 0
        self.paused = False
        self._jitter = jitter
        self._timer: Timer | None = None

    def start(self) -> "HeartbeatEmitter":
        period = self.period_ms / 1000.0
        if self._jitter is None:
            self._timer = self.endpoint.reactor.call_every(period, self._beat)
        else:
            self._schedule()
        return self

    def _schedule(self) -> None:
        delay = self.period_ms / 1000.0 + self._jitter()
        self._timer = self.endpoint.reactor.call_later(max(delay, 0.0), self._jittered_beat)

    def _jittered_beat(self) -> None:
        self._beat()
        if self._timer is not None and not self._timer.cancelled:
            self._schedule()

    def _beat(self) -> None:
        if self.paused or self.endpoint.closed:
            return
        self.seq += 1
        hb = Heartbeat(self.component_id, self.seq, self.period_ms)
        self.endpoint.send(hb.to_message(self.endpoint.now_us()))

    def stop(self) -> None:
        if self._timer is not None:
            self._timer.cancel()


class Endpoint:
    """Client side of the bus. Subscription callbacks, service handlers and request
    completions all run on ``reactor``; for one subscription they are serialized."""

    def __init__(self, name: str, reactor: Reactor):
        self.name = name
        self.reactor = reactor
        self.closed = False
        self._subs: list[tuple[str, Callable[[Message], Any]]] = []
        self._services: dict[str, Handler] = {}
        self._pending: dict[int, PendingRequest] = {}
        prefix = zlib.crc32(name.encode()) & 0x7FFFFFFF
        self._ids = itertools.count((prefix << 32) + 1)
        self.disconnect_callbacks: list[Callable[[str], Any]] = []
        self.heartbeats: list[HeartbeatEmitter] = []

    # transport hooks
    def send(self, m: Message) -> None:
        raise NotImplementedError

    def _close_transport(self) -> None:
        pass

    def now_us(self) -> int:
        return max(0, int(round(self.reactor.now() * 1e6)))

    def _ctl(self, **body: Any) -> None:
        self.send(Message("pub", CTL_TOPIC, body, ts_us=self.now_us()))

    # API
    def hello(self) -> None:
        self._ctl(op="hello", client=self.name)

    def publish(self, topic: str, body: dict | None = None) -> None:
        if self.closed:
            return
        self.send(Message("pub", topic, body or {}, ts_us=self.now_us()))

    def subscribe(self, pattern: str, callback: Callable[[Message], Any]) -> None:
        self._subs.append((pattern, callback))
        self._ctl(op="subscribe", pattern=pattern)

    def serve(self, topic: str, handler: Handler) -> None:
        """``handler(msg)`` returns the reply body, or ``None`` to reply later via :meth:`reply` (or never)."""
        self._services[topic] = handler
        self._ctl(op="serve", topic=topic)

    def reply(self, request: Message, body: dict) -> None:
        if not self.closed:
            self.send(Message("rep", request.topic, body, id=request.id, ts_us=self.now_us()))

    def request(self, topic: str, body: dict, timeout_ms: float, on_done: Callable[[PendingRequest], Any] | None = None) -> PendingRequest:
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        rid = next(self._ids)
        p = PendingRequest(rid, topic, body, self.reactor.now(), timeout_ms, on_done)
        self._pending[rid] = p
        p._timer = self.reactor.call_later(timeout_ms / 1000.0, self._expire, rid)
        self.send(Message("req", topic, body, id=rid, ts_us=self.now_us()))
        return p

    def call(self, topic: str, body: dict, timeout_ms: float) -> dict:
        """Blocking request for use from a thread other than the reactor's."""
        event = threading.Event()
        holder: list[PendingRequest] = []

        def issue():
            p = self.request(topic, body, timeout_ms)
            p._event = event
            holder.append(p)

        self.reactor.post(issue)
        scale = getattr(self.reactor, "time_scale", 1.0)
        event.wait(timeout_ms / 1000.0 / scale + 5.0)
        p = holder[0] if holder else None
        if p is None or p.reply is None:
            raise RequestTimeout(topic, timeout_ms)
        return p.reply

    def emit_heartbeats(self, component_id: str | None = None, period_ms: int = 100,
                        jitter: Callable[[], float] | None = None) -> HeartbeatEmitter:
        hb = HeartbeatEmitter(self, component_id or self.name, period_ms, jitter).start()
        self.heartbeats.append(hb)
        return hb

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        for hb in self.heartbeats:
            hb.stop()
        self._close_transport()

    def _expire(self, rid: int) -> None:
        p = self._pending.pop(rid, None)
        if p is not None and p.reply is None:
            p.timed_out = True
            p._finish()

    # inbound, always on the reactor
    def _dispatch(self, m: Message) -> None:
        if self.closed:
            return
        if m.kind == "rep":
            p = self._pending.pop(m.id, None)
            if p is not None and not p.timed_out:
                p.reply = m.body
                p._finish()
            return
        if m.kind == "req":
            handler = self._services.get(m.topic)
            if handler is None:
                return
            try:
                body = handler(m)
            except Exception as exc:
                log.exception("%s: handler for %s failed", self.name, m.topic)
                body = {"ok": False, "reason": f"handler error: {exc!r}"}
            if body is not None:
                self.reply(m, body)
            return
        for pattern, cb in self._subs:
            if topic_matches(pattern, m.topic):
                try:
                    cb(m)
                except Exception:
                    log.exception("%s: subscriber %s failed", self.name, pattern)

    def _lost(self, reason: str) -> None:
        """Transport reports the connection is gone."""
        if self.closed:
            return
        self.closed = True
        for hb in self.heartbeats:
            hb.stop()
        for cb in self.disconnect_callbacks:
            cb(reason)


__all__ = ["Endpoint", "PendingRequest", "HeartbeatEmitter", "RequestTimeout", "DISCONNECT_TOPIC"]

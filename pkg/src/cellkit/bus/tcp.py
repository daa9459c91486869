"""Local TCP transport: an asyncio broker and a thread-backed client endpoint."""
from __future__ import annotations

import asyncio
import logging
import os
import socket
import threading
import time
from typing import Callable

from cellkit.bus.core import BrokerCore
from cellkit.bus.endpoint import Endpoint
from cellkit.bus.wire import Message, ProtocolError, decode_message, encode_message
from cellkit.runtime import LiveReactor

log = logging.getLogger(__name__)

DEFAULT_PORT = 7471
MAX_LINE = 16 * 1024 * 1024


def default_port() -> int:
    return int(os.environ.get("CELLKIT_PORT", DEFAULT_PORT))


class _Conn:
    __slots__ = ("writer", "peer")

    def __init__(self, writer: asyncio.StreamWriter):
        self.writer = writer
        self.peer = writer.get_extra_info("peername")


class TcpBroker:
    def __init__(self, host: str = "127.0.0.1", port: int | None = None, clock_us: Callable[[], int] | None = None):
        self.host = host
        self.port = default_port() if port is None else port
        self._clock_us = clock_us or (lambda: int(time.time() * 1e6))
        self.core: BrokerCore[_Conn] = BrokerCore(self._send, self._clock_us)
        self.protocol_errors: list[ProtocolError] = []
        self._loop: asyncio.AbstractEventLoop | None = None
        self._server: asyncio.base_events.Server | None = None
        self._thread: threading.Thread | None = None
        self._ready = threading.Event()

    def _send(self, conn: _Conn, m: Message) -> None:
        if not conn.writer.is_closing():
            conn.writer.write(encode_message(m))

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn = _Conn(writer)
        self.core.attach(conn)
        try:
            while True:
                try:
                    line = await reader.readuntil(b"\n")
                except asyncio.IncompleteReadError as exc:
                    if exc.partial:
                        self._protocol_error(ProtocolError("truncated line at disconnect", exc.partial))
                    break
                except (ConnectionError, asyncio.LimitOverrunError):
                    break
                try:
                    m = decode_message(line)
                except ProtocolError as exc:
                    self._protocol_error(exc)
                    continue
                self.core.handle(conn, m)
        finally:
            self.core.detach(conn, "connection closed")
            writer.close()

    def _protocol_error(self, exc: ProtocolError) -> None:
        self.protocol_errors.append(exc)
        self.core.log(f"protocol error: {exc}")

    async def _serve(self) -> None:
        self._server = await asyncio.start_server(self._handle, self.host, self.port, limit=MAX_LINE)
        self.port = self._server.sockets[0].getsockname()[1]
        self._ready.set()
        async with self._server:
            await self._server.serve_forever()

    def serve_forever(self) -> None:
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        try:
            self._loop.run_until_complete(self._serve())
        except asyncio.CancelledError:
            pass
        finally:
            self._loop.close()

    def start(self) -> "TcpBroker":
        self._thread = threading.Thread(target=self.serve_forever, name="broker", daemon=True)
        self._thread.start()
        if not self._ready.wait(5.0):
            raise RuntimeError("broker failed to start")
        return self

    def stop(self) -> None:
        if self._loop is None or self._server is None:
            return

        def _close():
            self._server.close()
            for conn in list(self.core.names):
                conn.writer.close()
            for task in asyncio.all_tasks(self._loop):
                task.cancel()

        self._loop.call_soon_threadsafe(_close)
        if self._thread is not None:
            self._thread.join(timeout=5.0)


class TcpEndpoint(Endpoint):
    def __init__(self, name: str, reactor: LiveReactor, host: str = "127.0.0.1", port: int | None = None,
                 connect_timeout: float = 5.0):
        super().__init__(name, reactor)
        port = default_port() if port is None else port
        deadline = time.monotonic() + connect_timeout
        while True:
            try:
                self.sock = socket.create_connection((host, port), timeout=connect_timeout)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.05)
        self.sock.settimeout(None)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._wlock = threading.Lock()
        self.protocol_errors: list[ProtocolError] = []
        self._reader = threading.Thread(target=self._read_loop, name=f"{name}-reader", daemon=True)
        self._reader.start()
        self.hello()

    def send(self, m: Message) -> None:
        if self.closed:
            return
        data = encode_message(m)
        try:
            with self._wlock:
                self.sock.sendall(data)
        except OSError as exc:
            self.reactor.post(self._lost, f"send failed: {exc}")

    def _read_loop(self) -> None:
        f = self.sock.makefile("rb")
        reason = "connection closed"
        try:
            for line in f:
                try:
                    m = decode_message(line)
                except ProtocolError as exc:
                    self.protocol_errors.append(exc)
                    log.warning("%s: %s", self.name, exc)
                    continue
                self.reactor.post(self._dispatch, m)
        except (OSError, ValueError) as exc:
            reason = f"connection error: {exc}"
        if not self.closed:
            self.reactor.post(self._lost, reason)

    def _close_transport(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

"""Event loops that cell components, the watchdog and the executor are written against.

``SimReactor`` runs on a virtual clock and is fully deterministic; ``LiveReactor``
runs on the wall clock (optionally accelerated by ``time_scale``) and accepts
callbacks from other threads. Times are seconds on the reactor's own clock.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time
from typing import Any, Callable, Protocol

log = logging.getLogger(__name__)


class Timer:
    __slots__ = ("when", "fn", "args", "period", "cancelled")

    def __init__(self, when: float, fn: Callable, args: tuple, period: float | None = None):
        self.when = when
        self.fn = fn
        self.args = args
        self.period = period
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Reactor(Protocol):
    def now(self) -> float: ...

    def call_at(self, when: float, fn: Callable, *args: Any) -> Timer: ...

    def call_later(self, delay: float, fn: Callable, *args: Any) -> Timer: ...

    def call_every(self, period: float, fn: Callable, *args: Any, first: float | None = None) -> Timer: ...

    def post(self, fn: Callable, *args: Any) -> None: ...


class _HeapMixin:
    def _init_heap(self) -> None:
        self._heap: list[tuple[float, int, Timer]] = []
        self._seq = itertools.count()

    def _push(self, timer: Timer) -> Timer:
        heapq.heappush(self._heap, (timer.when, next(self._seq), timer))
        return timer

    def _fire(self, timer: Timer) -> None:
        if timer.cancelled:
            return
        if timer.period is not None:
            timer.when += timer.period
            self._push(timer)
        try:
            timer.fn(*timer.args)
        except Exception:
            log.exception("reactor callback %r failed", timer.fn)


class SimReactor(_HeapMixin):
    """Discrete-event loop on a virtual clock."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._init_heap()
        self.events_processed = 0

    def now(self) -> float:
        return self._now

    def call_at(self, when: float, fn: Callable, *args: Any) -> Timer:
        return self._push(Timer(max(when, self._now), fn, args))

    def call_later(self, delay: float, fn: Callable, *args: Any) -> Timer:
        return self.call_at(self._now + max(delay, 0.0), fn, *args)

    def call_every(self, period: float, fn: Callable, *args: Any, first: float | None = None) -> Timer:
        if period <= 0:
            raise ValueError("period must be positive")
        return self._push(Timer(self._now + (period if first is None else first), fn, args, period))

    def post(self, fn: Callable, *args: Any) -> None:
        self.call_at(self._now, fn, *args)

    def step(self) -> bool:
        while self._heap:
            when, _, timer = heapq.heappop(self._heap)
            if timer.cancelled:
                continue
            self._now = when
            self.events_processed += 1
            self._fire(timer)
            return True
        return False

    def next_time(self) -> float | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def run_until(self, t: float, stop: Callable[[], bool] | None = None) -> None:
        """Process every event due at or before ``t``; the clock ends at ``t`` unless ``stop`` fired first."""
        while True:
            nxt = self.next_time()
            if nxt is None or nxt > t:
                break
            self.step()
            if stop is not None and stop():
                return
        self._now = max(self._now, t)

    def run_for(self, dt: float, stop: Callable[[], bool] | None = None) -> None:
        self.run_until(self._now + dt, stop)


class LiveReactor(_HeapMixin):
    """Wall-clock event loop. ``time_scale`` > 1 makes reactor time run faster than wall time;
    processes sharing ``epoch`` agree on the reactor clock."""

    def __init__(self, time_scale: float = 1.0, epoch: float | None = None):
        if time_scale < 1.0:
            raise ValueError("time_scale must be >= 1")
        self.time_scale = float(time_scale)
        self.epoch = time.time() if epoch is None else float(epoch)
        self._init_heap()
        self._cv = threading.Condition(threading.RLock())
        self._running = False
        self.thread: threading.Thread | None = None

    def now(self) -> float:
        return (time.time() - self.epoch) * self.time_scale

    def _push(self, timer: Timer) -> Timer:
        with self._cv:
            super()._push(timer)
            self._cv.notify()
        return timer

    def call_at(self, when: float, fn: Callable, *args: Any) -> Timer:
        return self._push(Timer(when, fn, args))

    def call_later(self, delay: float, fn: Callable, *args: Any) -> Timer:
        return self.call_at(self.now() + max(delay, 0.0), fn, *args)

    def call_every(self, period: float, fn: Callable, *args: Any, first: float | None = None) -> Timer:
        if period <= 0:
            raise ValueError("period must be positive")
        return self._push(Timer(self.now() + (period if first is None else first), fn, args, period))

    def post(self, fn: Callable, *args: Any) -> None:
        self.call_at(float("-inf"), fn, *args)

    def _pop_due(self) -> Timer | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        if self._heap and self._heap[0][0] <= self.now():
            return heapq.heappop(self._heap)[2]
        return None

    def run_pending(self, wait: float = 0.0) -> int:
        """Run every due callback, waiting up to ``wait`` wall seconds for the first one."""
        ran = 0
        deadline = time.monotonic() + wait
        while True:
            with self._cv:
                timer = self._pop_due()
                while timer is None:
                    remaining = deadline - time.monotonic()
                    if ran or remaining <= 0 or (wait > 0 and self.thread is not None and not self._running):
                        return ran
                    delay = remaining
                    if self._heap:
                        delay = min(delay, max((self._heap[0][0] - self.now()) / self.time_scale, 0.0))
                    self._cv.wait(delay)
                    timer = self._pop_due()
            self._fire(timer)
            ran += 1

    def run_forever(self) -> None:
        self._running = True
        while self._running:
            self.run_pending(wait=0.05)

    def start(self, name: str = "reactor") -> "LiveReactor":
        self._running = True
        self.thread = threading.Thread(target=self.run_forever, name=name, daemon=True)
        self.thread.start()
        return self

    def stop(self) -> None:
        self._running = False
        with self._cv:
            self._cv.notify_all()
        if self.thread is not None and self.thread is not threading.current_thread():
            self.thread.join(timeout=2.0)

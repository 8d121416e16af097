"""Discrete-event engine: integer-microsecond clock, cancellable events, seeded streams."""

from __future__ import annotations

import enum
import heapq
from typing import Any, Callable

import numpy as np

US_PER_S = 1_000_000
US_PER_MS = 1_000


def seconds(s: float) -> int:
    """Convert seconds to integer microseconds."""
    return int(round(s * US_PER_S))


class EventKind(enum.Enum):
    MESSAGE_GENERATION = "message-generation"
    BACKOFF_SLOT_BOUNDARY = "backoff-slot-boundary"
    TX_START = "tx-start"
    TX_END = "tx-end"
    MOBILITY_STEP = "mobility-step"
    METRICS_SNAPSHOT = "metrics-snapshot"
    CHANNEL_UPDATE = "channel-update"


class SchedulingError(ValueError):
    pass


class Event:
    __slots__ = ("fire_at", "sequence", "kind", "target", "callback", "args", "state")

    PENDING, FIRED, CANCELLED = 0, 1, 2

    def __init__(self, fire_at: int, sequence: int, kind: EventKind, target: Any,
                 callback: Callable[..., None], args: tuple):
        self.fire_at = fire_at
        self.sequence = sequence
        self.kind = kind
        self.target = target
        self.callback = callback
        self.args = args
        self.state = Event.PENDING

    @property
    def pending(self) -> bool:
        return self.state == Event.PENDING

    def __repr__(self) -> str:
        return f"Event(t={self.fire_at}, seq={self.sequence}, kind={self.kind.value}, target={self.target!r})"


class Engine:
    """Single-threaded event loop.

    Events fire in ``(fire_at, sequence)`` order, so same-tick events run in
    insertion order. The returned :class:`Event` is the cancellation handle.
    """

    def __init__(self, trace: bool = False):
        self.now = 0
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._pending = 0
        self.executed = 0
        self.trace: list[tuple[int, int, str, Any]] | None = [] if trace else None

    def schedule(self, fire_at: int, callback: Callable[..., None], *args: Any,
                 kind: EventKind = EventKind.CHANNEL_UPDATE, target: Any = None) -> Event:
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at {fire_at} us, clock is at {self.now} us")
        ev = Event(int(fire_at), self._seq, kind, target, callback, args)
        self._seq += 1
        heapq.heappush(self._queue, (ev.fire_at, ev.sequence, ev))
        self._pending += 1
        return ev

    def cancel(self, handle: Event | None) -> bool:
        if handle is None or handle.state != Event.PENDING:
            return False
        handle.state = Event.CANCELLED
        self._pending -= 1
        return True

    @property
    def pending(self) -> int:
        return self._pending

    def run_until(self, end: int) -> int:
        if end < self.now:
            raise SchedulingError(f"run_until({end}) is before the clock ({self.now})")
        queue = self._queue
        count = 0
        while queue and queue[0][0] <= end:
            t, _, ev = heapq.heappop(queue)
            if ev.state != Event.PENDING:
                continue
            self.now = t
            ev.state = Event.FIRED
            self._pending -= 1
            if self.trace is not None:
                self.trace.append((t, ev.sequence, ev.kind.value, ev.target))
            ev.callback(*ev.args)
            count += 1
        self.now = end
        self.executed += count
        return count


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    PCG64 seeded through a SeedSequence spawn key, so the draw sequence is the
    same on every platform and independent of how many other streams exist.
    """

    def __init__(self, seed: int, stream_id: int):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.stream_id = stream_id
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream_id,))))
        # cached bound method; scalar draws are on the hot path
        self._integers = self._gen.integers

    def integer(self, low: int, high_inclusive: int) -> int:
        return int(self._integers(low, high_inclusive + 1))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high_exclusive: int, size=None):
        return self._gen.integers(low, high_exclusive, size)

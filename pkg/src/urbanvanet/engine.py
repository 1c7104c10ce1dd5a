"""Deterministic discrete-event engine.

Events pop in strict ``(time, seq)`` order; ``seq`` is assigned when an
event is scheduled, so events at equal times run in scheduling order.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .errors import SimulationIntegrityError


class EventKind(str, Enum):
    BEACON_TICK = "BeaconTick"
    TX_START = "TxStart"
    TX_END = "TxEnd"
    RX_RESOLVE = "RxResolve"
    CLOUD_LEG = "CloudLeg"
    RETRY_TIMER = "RetryTimer"
    MESSAGE_ORIGINATION = "MessageOrigination"
    SIM_END = "SimEnd"


@dataclass(frozen=True)
class Event:
    time: float
    seq: int
    kind: EventKind
    payload: Any = field(default=None, compare=False)


Handler = Callable[[Event], "str | None"]


@dataclass(frozen=True)
class Callback:
    """Payload for timer-style events dispatched straight to a function."""
    label: str
    fn: Callable
    args: tuple = ()


class Engine:
    """Single-timeline event loop.

    Handlers may return a short annotation string; when an event log is
    attached each processed event is recorded as one tab-separated line
    ``time seq kind annotation`` with ``repr`` times so the log replays
    bit-exactly.
    """

    def __init__(self, log: list[str] | None = None):
        self.now = 0.0
        self._queue: list = []
        self._seq = itertools.count()
        self._handlers: dict[EventKind, Handler] = {}
        self.log = log
        self.processed = 0
        self.stopped = False

    def on(self, kind: EventKind, handler: Handler) -> None:
        self._handlers[kind] = handler

    def schedule(self, time: float, kind: EventKind, payload: Any = None) -> Event:
        if time < self.now:
            raise SimulationIntegrityError(
                f"cannot schedule {kind.value} at t={time!r} before now={self.now!r}")
        ev = Event(time, next(self._seq), kind, payload)
        heapq.heappush(self._queue, (time, ev.seq, ev))
        return ev

    def call_at(self, time: float, kind: EventKind, label: str, fn: Callable, *args) -> Event:
        return self.schedule(time, kind, Callback(label, fn, args))

    def __len__(self):
        return len(self._queue)

    def pop(self) -> Event:
        time, _, ev = heapq.heappop(self._queue)
        if time < self.now:
            raise SimulationIntegrityError("simulation time went backwards")
        self.now = time
        return ev

    def step(self) -> Event:
        ev = self.pop()
        handler = self._handlers.get(ev.kind)
        if handler is not None:
            note = handler(ev)
        elif isinstance(ev.payload, Callback):
            note = ev.payload.fn(*ev.payload.args)
            note = ev.payload.label if note is None else f"{ev.payload.label} {note}"
        else:
            note = None
        self.processed += 1
        if self.log is not None:
            self.log.append(f"{ev.time!r}\t{ev.seq}\t{ev.kind.value}\t{note or ''}")
        if ev.kind is EventKind.SIM_END:
            self.stopped = True
        return ev

    def run(self) -> None:
        while self._queue and not self.stopped:
            self.step()

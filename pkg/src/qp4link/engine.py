"""Deterministic discrete-event kernel.

Events are ordered by ``(at, seq)`` where ``seq`` is a per-instance insertion
counter, so two events scheduled for the same nanosecond are dispatched in the
order they were scheduled.
"""

from __future__ import annotations

import heapq
from typing import Any, Callable, Dict, List, NamedTuple, Optional


class SchedulingInPast(ValueError):
    pass


class Event(NamedTuple):
    at: int
    seq: int
    target: Any
    payload: Any


_push = heapq.heappush
_new = tuple.__new__  # skips the generated NamedTuple constructor


class Simulator:
    """Single-threaded event loop.

    Handlers are registered per target with :meth:`attach`; an event whose
    target has no handler is a programming error and raises ``KeyError``.
    """

    def __init__(self) -> None:
        self._queue: List[Event] = []
        self._seq = 0
        self._now = 0
        self._cancelled: set = set()
        self._handlers: Dict[Any, Callable[[Event], None]] = {}
        self.dispatched = 0

    def attach(self, target: Any, handler: Callable[[Event], None]) -> None:
        self._handlers[target] = handler

    def now(self) -> int:
        return self._now

    def schedule(self, at: int, target: Any, payload: Any = None) -> int:
        at = int(at)
        if at < self._now:
            raise SchedulingInPast(f"cannot schedule at {at} ns, now is {self._now} ns")
        seq = self._seq
        self._seq += 1
        _push(self._queue, _new(Event, (at, seq, target, payload)))
        return seq

    def cancel(self, handle: int) -> None:
        self._cancelled.add(handle)

    def pending(self) -> int:
        return sum(1 for e in self._queue if e.seq not in self._cancelled)

    def peek_time(self) -> Optional[int]:
        while self._queue and self._queue[0].seq in self._cancelled:
            self._cancelled.discard(heapq.heappop(self._queue).seq)
        return self._queue[0].at if self._queue else None

    def run(self, until: Optional[int] = None) -> int:
        """Dispatch every event with ``at <= until`` (all events if ``until`` is None).

        Returns the number of events dispatched by this call. ``now()`` is left
        at the time of the last dispatched event.
        """
        count = 0
        queue = self._queue
        handlers = self._handlers
        while queue:
            head = queue[0]
            if until is not None and head.at > until:
                break
            heapq.heappop(queue)
            if head.seq in self._cancelled:
                self._cancelled.discard(head.seq)
                continue
            self._now = head.at
            handlers[head.target](head)
            count += 1
        self.dispatched += count
        return count

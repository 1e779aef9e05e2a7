"""Deterministic discrete-event engine with integer virtual time.

Time is counted in microseconds.  Events are executed in the total order
``(fire_at, seq)`` where ``seq`` is assigned when the event is scheduled, so
simultaneous events run FIFO.  Every executed event appends one line to the
trace log::

    fire_at<TAB>seq<TAB>target<TAB>kind

and the same line is folded into a running SHA-256 digest, which is what the
harness reports as the determinism digest.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

logger = logging.getLogger(__name__)

US = 1
MS = 1_000
S = 1_000_000


class HorizonExceeded(Exception):
    pass


@dataclass(frozen=True)
class SimConfig:
    rng_seed: int = 0
    horizon: int = 60 * S
    trace_enabled: bool = True

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")


@dataclass(order=True)
class SimEvent:
    fire_at: int
    seq: int
    target: str = field(compare=False)
    kind: str = field(compare=False)
    payload: Any = field(default=None, compare=False)

    def trace_line(self) -> str:
        return f"{self.fire_at}\t{self.seq}\t{self.target}\t{self.kind}"


Handler = Callable[[SimEvent], None]


class Engine:
    """Single-threaded event loop.

    Components register a handler per target id; an event whose target has no
    handler still executes (and is traced) but has no effect.  This is used for
    pure annotation events such as dead letters or capacity notices.
    """

    def __init__(self, config: Optional[SimConfig] = None):
        self.config = config or SimConfig()
        self.now = 0
        self.rng = random.Random(self.config.rng_seed)
        self.trace: List[str] = []
        self.executed = 0
        self._queue: List[SimEvent] = []
        self._pending: Dict[int, SimEvent] = {}
        self._seq = 0
        self._handlers: Dict[str, Handler] = {}
        self._observers: List[Callable[[SimEvent], None]] = []
        self._digest = hashlib.sha256()

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def register(self, target: str, handler: Handler) -> None:
        self._handlers[target] = handler

    def unregister(self, target: str) -> None:
        self._handlers.pop(target, None)

    def add_observer(self, fn: Callable[[SimEvent], None]) -> None:
        """Call ``fn(event)`` after every executed event (event boundary)."""
        self._observers.append(fn)

    def schedule(self, delay: int, target: str, kind: str, payload: Any = None) -> int:
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        fire_at = self.now + delay
        if fire_at > self.config.horizon:
            raise HorizonExceeded(
                f"event {kind}@{target} at {fire_at} beyond horizon {self.config.horizon}"
            )
        self._seq += 1
        ev = SimEvent(fire_at, self._seq, target, kind, payload)
        heapq.heappush(self._queue, ev)
        self._pending[ev.seq] = ev
        return ev.seq

    def try_schedule(self, delay: int, target: str, kind: str, payload: Any = None) -> Optional[int]:
        """Like :meth:`schedule` but returns None instead of raising past the horizon."""
        if self.now + delay > self.config.horizon:
            return None
        return self.schedule(delay, target, kind, payload)

    def note(self, target: str, kind: str, payload: Any = None) -> Optional[int]:
        """Record an annotation in the trace as a zero-delay event."""
        return self.try_schedule(0, target, kind, payload)

    def cancel(self, event_id: int) -> bool:
        # lazy deletion: the heap entry is skipped when popped
        return self._pending.pop(event_id, None) is not None

    def is_pending(self, event_id: Optional[int]) -> bool:
        return event_id is not None and event_id in self._pending

    def run_until(self, t: int) -> int:
        if t < self.now:
            raise ValueError(f"run_until({t}) is in the past (now={self.now})")
        count = 0
        queue = self._queue
        while queue and queue[0].fire_at <= t:
            ev = heapq.heappop(queue)
            if self._pending.pop(ev.seq, None) is None:
                continue
            self.now = ev.fire_at
            self._execute(ev)
            count += 1
        self.now = t
        return count

    def run(self) -> int:
        return self.run_until(self.config.horizon)

    def _execute(self, ev: SimEvent) -> None:
        line = ev.trace_line()
        self._digest.update(line.encode())
        self._digest.update(b"\n")
        if self.config.trace_enabled:
            self.trace.append(line)
        self.executed += 1
        handler = self._handlers.get(ev.target)
        if handler is not None:
            handler(ev)
        for fn in self._observers:
            fn(ev)

    def digest(self) -> str:
        return self._digest.hexdigest()

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace)

    def pending_count(self) -> int:
        return len(self._pending)

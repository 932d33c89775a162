"""Approval/task lifecycle event stream: journaled fan-out pub/sub.

Every published event is appended to a journal and pushed to all live
subscriber queues. Late subscribers get a replay of the latest event of every
still-undecided approval, so an approver console can always reconstruct its
inbox from the stream alone. Delivery is at-least-once; consumers dedup by
(pending_approval_id, kind).
"""

from __future__ import annotations

import queue
import threading
import time
from typing import Any, Iterator

from ..audit import Clock
from ..journal import AppendOnlyJournal

TERMINAL_KINDS = {"approved", "rejected", "expired", "resumed"}


class EventBroker:
    def __init__(self, journal_path: str | None = None, *, clock: Clock = time.time) -> None:
        self._journal = AppendOnlyJournal(journal_path)
        self._clock = clock
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []
        self._seq = max((r.get("seq", 0) for r in self._journal.records()), default=0)

    def publish(self, event: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            self._seq += 1
            record = {"seq": self._seq, "ts": event.get("ts", self._clock()), **event}
            subscribers = list(self._subscribers)
        self._journal.append(record)
        for q in subscribers:
            q.put(record)
        return record

    def subscribe(self) -> "Subscription":
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return Subscription(self, q)

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def replay_events(self) -> list[dict[str, Any]]:
        """Latest event per approval that is still undecided."""
        latest: dict[str, dict[str, Any]] = {}
        for record in self._journal.records():
            pending_id = record.get("pending_approval_id")
            if pending_id:
                latest[pending_id] = record
        return sorted(
            (r for r in latest.values() if r.get("kind") not in TERMINAL_KINDS),
            key=lambda r: r.get("seq", 0),
        )

    def records(self) -> list[dict[str, Any]]:
        return self._journal.records()


class Subscription:
    def __init__(self, broker: EventBroker, q: queue.Queue) -> None:
        self._broker = broker
        self.queue = q

    def events(self, *, poll_timeout: float = 1.0) -> Iterator[dict[str, Any] | None]:
        """Yields events as they arrive; None on poll timeout (keepalive slot)."""
        while True:
            try:
                yield self.queue.get(timeout=poll_timeout)
            except queue.Empty:
                yield None

    def close(self) -> None:
        self._broker.unsubscribe(self.queue)

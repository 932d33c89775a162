"""Append-only audit trail: one structured record per governed event.

Records carry a per-instance monotonically increasing sequence number so
ordering is total even when wall clocks collide.
"""

from __future__ import annotations

import threading
import time
from typing import Any, Callable

from .journal import AppendOnlyJournal

Clock = Callable[[], float]


class AuditLog:
    def __init__(self, path: str | None = None, *, clock: Clock = time.time) -> None:
        self._journal = AppendOnlyJournal(path)
        self._clock = clock
        self._lock = threading.Lock()
        self._seq = max((r.get("seq", 0) for r in self._journal.records()), default=0)

    def record(self, kind: str, **fields: Any) -> dict[str, Any]:
        with self._lock:
            self._seq += 1
            entry = {"seq": self._seq, "ts": self._clock(), "kind": kind, **fields}
        self._journal.append(entry)
        return entry

    def records(self) -> list[dict[str, Any]]:
        return self._journal.records()

    def tail(self, n: int = 50) -> list[dict[str, Any]]:
        return self._journal.tail(n)

    def for_invocation(self, invocation_id: str) -> list[dict[str, Any]]:
        return [r for r in self._journal.records() if r.get("invocation_id") == invocation_id]

    def __len__(self) -> int:
        return len(self._journal)

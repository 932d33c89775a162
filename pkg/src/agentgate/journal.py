"""Append-only line-delimited record journal.

One JSON document per line. Writers append under a lock; the file is never
rewritten, which is what makes restart recovery and audit tamper-evidence
cheap. Readers fold the line stream into whatever view they need.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Iterator


class AppendOnlyJournal:
    """Thread-safe JSONL appender with replay."""

    def __init__(self, path: str | os.PathLike[str] | None) -> None:
        # path=None keeps the journal purely in memory (unit tests, ephemeral runtimes)
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._memory: list[dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists():
                self._memory = list(self._read_file())

    def append(self, record: dict[str, Any]) -> None:
        line = json.dumps(record, ensure_ascii=False, separators=(",", ":"), sort_keys=True)
        with self._lock:
            self._memory.append(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")

    def records(self) -> list[dict[str, Any]]:
        with self._lock:
            return list(self._memory)

    def tail(self, n: int) -> list[dict[str, Any]]:
        with self._lock:
            return list(self._memory[-n:]) if n > 0 else []

    def __len__(self) -> int:
        with self._lock:
            return len(self._memory)

    def _read_file(self) -> Iterator[dict[str, Any]]:
        assert self.path is not None
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{self.path}:{lineno}: corrupt journal line") from exc

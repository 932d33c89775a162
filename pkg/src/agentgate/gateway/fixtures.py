"""Fixture loading: line-delimited records, one entity or descriptor per line.

Three record kinds:
  {"kind": "counter", "entity_type": ..., "id_format": ..., "next_seq": ...}
  {"kind": "entity", "entity": {type, id, title, attributes, scope}}
  {"kind": "tool", "tenant": ..., "descriptor": {...}, "handler": {"kind", "config"}}
Loading is deterministic: the same file always produces the same store state
and registrations.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from ..errors import GatewayError, ParseError
from ..registry import ToolDescriptor, ToolRegistry
from ..resolution import Entity, EntityStore
from .builtins import build_handlers


def load_fixtures(path: str | Path, store: EntityStore, registry: ToolRegistry) -> dict[str, int]:
    """Populate the entity store and registry from one fixture file."""
    path = Path(path)
    counts = {"entities": 0, "tools": 0, "counters": 0}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise ParseError(f"fixture file not found: {path}", line=0) from exc

    with store.transaction():
        for lineno, line in enumerate(lines, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise ParseError(
                    f"{path.name}:{lineno}: invalid JSON ({exc.msg})",
                    line=lineno,
                    column=exc.colno,
                ) from exc
            try:
                _apply(record, store, registry)
            except GatewayError as exc:
                raise ParseError(
                    f"{path.name}:{lineno}: {exc.message}", line=lineno
                ) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(
                    f"{path.name}:{lineno}: malformed record ({exc})", line=lineno
                ) from exc
            counts[_KIND_COUNTER[record["kind"]]] += 1
    return counts


_KIND_COUNTER = {"entity": "entities", "tool": "tools", "counter": "counters"}


def _apply(record: dict[str, Any], store: EntityStore, registry: ToolRegistry) -> None:
    kind = record.get("kind")
    if kind == "counter":
        store.register_type(
            record["entity_type"],
            id_format=record.get("id_format", "{type}_{seq:04d}"),
            next_seq=int(record.get("next_seq", 1)),
        )
    elif kind == "entity":
        store.upsert(Entity.from_dict(record["entity"]))
    elif kind == "tool":
        tenant = record["tenant"]
        descriptor = ToolDescriptor.from_dict(record["descriptor"], tenant=tenant)
        handler_spec = record.get("handler", {})
        handlers = build_handlers(handler_spec.get("kind", "entity_search"), handler_spec.get("config"))
        registry.ensure_tenant(tenant)
        registry.register_tool(tenant, descriptor, handlers, replace=bool(record.get("replace", False)))
    else:
        raise ValueError(f"unknown fixture kind {kind!r}")

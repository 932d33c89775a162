from __future__ import annotations

import pytest

from agentgate.errors import (
    DuplicateTool,
    HandlerMissing,
    InvalidDescriptor,
    InvalidName,
    MissingIdempotencyFields,
    UnknownTenant,
    UnknownTool,
)
from agentgate.registry import PermissionPolicy, ToolDescriptor, ToolRegistry


def descriptor(**overrides) -> ToolDescriptor:
    base = dict(
        name="ticket.search",
        mode="read",
        tenant="tenant-a",
        permission_policy=PermissionPolicy(capability="ticket.view"),
        supported_verbs=("semantic_search",),
        static_confidence=0.9,
    )
    base.update(overrides)
    return ToolDescriptor(**base)


def handlers_for(desc: ToolDescriptor) -> dict:
    noop = lambda *a, **k: None
    return {verb: noop for verb in desc.supported_verbs}


def fresh_registry() -> ToolRegistry:
    return ToolRegistry(("tenant-a", "tenant-b"))


def test_register_read_tool_discoverable():
    registry = fresh_registry()
    desc = descriptor()
    receipt = registry.register_tool("tenant-a", desc, handlers_for(desc))
    assert receipt.version == 1 and not receipt.replaced
    caller = type("P", (), {"tenant": "tenant-a"})()
    assert [t["name"] for t in registry.list_tools("tenant-a", caller)] == ["ticket.search"]


def test_camel_case_name_rejected():
    with pytest.raises(InvalidName):
        descriptor(name="searchTickets").validate()


def test_single_segment_name_rejected():
    with pytest.raises(InvalidName):
        descriptor(name="tickets").validate()


def test_write_without_idempotency_fields_rejected():
    with pytest.raises(MissingIdempotencyFields):
        descriptor(
            name="ticket.create",
            mode="write",
            supported_verbs=("semantic_search", "execute_action"),
            idempotency_key_fields=(),
        ).validate()


def test_write_requires_execute_verb():
    with pytest.raises(InvalidDescriptor):
        descriptor(
            name="ticket.create",
            mode="write",
            supported_verbs=("semantic_search",),
            idempotency_key_fields=("store",),
        ).validate()


def test_read_forbids_preview_and_execute():
    with pytest.raises(InvalidDescriptor):
        descriptor(supported_verbs=("semantic_search", "execute_action")).validate()
    with pytest.raises(InvalidDescriptor):
        descriptor(supported_verbs=("semantic_search", "preview_action")).validate()


def test_read_requires_semantic_search():
    with pytest.raises(InvalidDescriptor):
        descriptor(supported_verbs=("resolve_candidates",)).validate()


def test_verify_without_execute_rejected():
    with pytest.raises(InvalidDescriptor):
        descriptor(supported_verbs=("semantic_search", "verify_result")).validate()


def test_commit_requires_preview():
    with pytest.raises(InvalidDescriptor):
        descriptor(
            name="brand.publish",
            mode="commit",
            supported_verbs=("semantic_search", "execute_action"),
            idempotency_key_fields=("brand",),
        ).validate()


def test_static_confidence_bounds():
    with pytest.raises(InvalidDescriptor):
        descriptor(static_confidence=1.2).validate()


def test_duplicate_rejected_then_replace_allowed():
    registry = fresh_registry()
    desc = descriptor()
    registry.register_tool("tenant-a", desc, handlers_for(desc))
    with pytest.raises(DuplicateTool):
        registry.register_tool("tenant-a", desc, handlers_for(desc))
    receipt = registry.register_tool("tenant-a", desc, handlers_for(desc), replace=True)
    assert receipt.replaced and receipt.version == 2


def test_replace_invalidates_calibration_only_on_mode_or_verb_change():
    registry = fresh_registry()
    seen: list[tuple[str, bool]] = []
    registry.set_replace_hook(lambda name, invalidated: seen.append((name, invalidated)))

    desc = descriptor(description="v1")
    registry.register_tool("tenant-a", desc, handlers_for(desc))
    registry.register_tool("tenant-a", descriptor(description="v2"), handlers_for(desc), replace=True)
    assert seen[-1] == ("ticket.search", False)  # cosmetic change keeps the window

    changed = descriptor(
        mode="write",
        supported_verbs=("semantic_search", "execute_action"),
        idempotency_key_fields=("query",),
    )
    registry.register_tool("tenant-a", changed, handlers_for(changed), replace=True)
    assert seen[-1] == ("ticket.search", True)


def test_handler_missing():
    registry = fresh_registry()
    desc = descriptor(
        name="ticket.create",
        mode="write",
        supported_verbs=("semantic_search", "execute_action"),
        idempotency_key_fields=("store",),
    )
    with pytest.raises(HandlerMissing):
        registry.register_tool("tenant-a", desc, {"semantic_search": lambda: None})


def test_unknown_tenant_registration():
    registry = fresh_registry()
    desc = descriptor(tenant="tenant-z")
    with pytest.raises(UnknownTenant):
        registry.register_tool("tenant-z", desc, handlers_for(desc))


def test_strict_parse_rejects_unknown_fields():
    with pytest.raises(InvalidDescriptor) as excinfo:
        ToolDescriptor.from_dict(
            {"name": "ticket.search", "mode": "read", "supported_verbs": ["semantic_search"],
             "retries": 3},
            tenant="tenant-a",
        )
    assert "retries" in str(excinfo.value)


def test_parse_accepts_risk_level_names():
    desc = ToolDescriptor.from_dict(
        {"name": "ticket.search", "mode": "read", "risk_level": "high",
         "supported_verbs": ["semantic_search"]},
        tenant="tenant-a",
    )
    assert desc.risk_level == 2


def test_discovery_is_role_independent_and_capability_blind(runtime, mgr, clerk):
    mgr_view = runtime.registry.list_tools("tenant-a", mgr)
    clerk_view = runtime.registry.list_tools("tenant-a", clerk)
    assert mgr_view == clerk_view
    # the clerk sees brand.config.update even though execution would be denied
    assert "brand.config.update" in [t["name"] for t in clerk_view]


def test_discovery_tenant_isolation(runtime, mgr):
    tenant_b_caller = runtime.authenticate("token-tenantb")
    a_names = {t["name"] for t in runtime.registry.list_tools("tenant-a", mgr)}
    b_names = {t["name"] for t in runtime.registry.list_tools("tenant-b", tenant_b_caller)}
    assert a_names.isdisjoint(b_names)
    with pytest.raises(UnknownTenant):
        runtime.registry.list_tools("tenant-b", mgr)
    with pytest.raises(UnknownTenant):
        runtime.registry.list_tools("tenant-zz", mgr)


def test_empty_tenant_lists_empty():
    registry = ToolRegistry(("tenant-empty",))
    caller = type("P", (), {"tenant": "tenant-empty"})()
    assert registry.list_tools("tenant-empty", caller) == []


def test_get_unknown_tool():
    registry = fresh_registry()
    with pytest.raises(UnknownTool):
        registry.get("tenant-a", "ticket.search")

from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentgate.errors import HandlerFailure
from agentgate.governance import (
    PIPELINE_STAGES,
    CapabilityMatrix,
    Principal,
    RequestFacts,
    ScopePath,
    ScopeVerdict,
    assess_risk,
    check_capability,
    check_scope,
    validate_input_schema,
)
from agentgate.registry import PermissionPolicy, ToolDescriptor


def principal(role="store_manager", scope=None, flags=(), tenant="tenant-a") -> Principal:
    return Principal(
        user_id="u-1",
        tenant=tenant,
        role=role,
        scope=scope or ScopePath(tenant, "brand-central", "store_007"),
        capability_flags=frozenset(flags),
    )


def tool(base=0, approval_required=False, mode="write") -> ToolDescriptor:
    return ToolDescriptor(
        name="ticket.create",
        mode=mode,
        tenant="tenant-a",
        permission_policy=PermissionPolicy(capability="ticket.manage"),
        risk_level=base,
        approval_required=approval_required,
        idempotency_key_fields=("store",) if mode != "read" else (),
        supported_verbs=("semantic_search", "execute_action")
        if mode == "write"
        else ("semantic_search",),
    )


# --- dynamic risk: independent brute-force oracle --------------------------------

def facts_from_bits(bits: tuple[int, ...]) -> RequestFacts:
    return RequestFacts(
        affected_count=42 if bits[0] else 3,
        cross_brand=bool(bits[1]),
        overwrites_published=bool(bits[2]),
        batch_size=9 if bits[3] else 2,
        irreversible=bool(bits[4]),
        single_entity=bool(bits[5]),
        same_store_only=bool(bits[6]),
    )


def brute_force_final(bits: tuple[int, ...], base: int, waived: bool) -> int:
    deltas = 0
    deltas += 1 if bits[0] else 0  # affected > 10
    deltas += 1 if (bits[1] and not waived) else 0  # cross-brand
    deltas += 1 if bits[2] else 0  # overwrite published
    deltas += 1 if bits[3] else 0  # batch > 5
    deltas += 1 if bits[4] else 0  # irreversible
    deltas -= 1 if bits[5] else 0  # single entity
    deltas -= 1 if bits[6] else 0  # same store
    return max(0, min(3, base + deltas))


def test_risk_formula_matches_brute_force_over_all_cases():
    caller = principal()
    for base in range(4):
        for bits in itertools.product((0, 1), repeat=7):
            assessment = assess_risk(tool(base=base), facts_from_bits(bits), caller)
            expected = brute_force_final(bits, base, waived=False)
            assert assessment.final_level == expected, (base, bits)
            assert assessment.requires_approval == (expected >= 2)
            assert assessment.base_level == base


def test_cross_brand_waiver_flips_exactly_that_factor():
    waived_caller = principal(flags=("cross_brand",))
    for base in range(4):
        for bits in itertools.product((0, 1), repeat=7):
            assessment = assess_risk(tool(base=base), facts_from_bits(bits), waived_caller)
            assert assessment.final_level == brute_force_final(bits, base, waived=True)
            cross = next(f for f in assessment.factors if f.name == "cross_brand")
            assert cross.triggered is False


def test_spec_example_batch_of_50():
    facts = RequestFacts(affected_count=50, batch_size=50)
    assessment = assess_risk(tool(base=0), facts, principal())
    assert assessment.final_level == 2
    assert assessment.requires_approval


def test_spec_example_single_same_store_deescalates():
    facts = RequestFacts(affected_count=1, batch_size=1, single_entity=True, same_store_only=True)
    assessment = assess_risk(tool(base=1), facts, principal())
    assert assessment.final_level == 0
    assert not assessment.requires_approval


def test_spec_example_waived_cross_brand_stays_medium():
    facts = RequestFacts(cross_brand=True)
    assessment = assess_risk(tool(base=1), facts, principal(flags=("cross_brand",)))
    assert assessment.final_level == 1


def test_descriptor_flag_is_absolute():
    facts = RequestFacts(single_entity=True, same_store_only=True)
    assessment = assess_risk(tool(base=0, approval_required=True), facts, principal())
    assert assessment.final_level == 0
    assert assessment.requires_approval


@settings(max_examples=120, deadline=None)
@given(
    base=st.integers(min_value=0, max_value=3),
    bits=st.tuples(*([st.integers(min_value=0, max_value=1)] * 7)),
    flip=st.integers(min_value=0, max_value=4),
)
def test_monotonicity_property(base, bits, flip):
    caller = principal()
    baseline = assess_risk(tool(base=base), facts_from_bits(bits), caller).final_level
    raised = list(bits)
    raised[flip] = 1  # indices 0..4 are the +1 factors
    escalated = assess_risk(tool(base=base), facts_from_bits(tuple(raised)), caller).final_level
    assert escalated >= baseline


# --- capability matrix -------------------------------------------------------------

def test_exact_and_wildcard_grants():
    matrix = CapabilityMatrix([("store_manager", "ticket.*"), ("auditor", "audit.read")])
    assert check_capability(matrix, "store_manager", "ticket.search")
    assert check_capability(matrix, "store_manager", "ticket.close.batch")
    assert not check_capability(matrix, "store_manager", "ticket")
    assert not check_capability(matrix, "store_manager", "brand.config.update")
    assert check_capability(matrix, "auditor", "audit.read")


def test_empty_matrix_denies_everything():
    matrix = CapabilityMatrix()
    assert not check_capability(matrix, "anyone", "ticket.search")


def test_bundled_matrix_matches_role_expectations(runtime):
    assert runtime.matrix.allows("store_manager", "ticket.create")
    assert runtime.matrix.allows("store_manager", "ticket.search")
    assert not runtime.matrix.allows("store_manager", "brand.config.update")


# --- object scope --------------------------------------------------------------------

def sp(tenant="tenant-a", brand=None, store=None, user=None) -> ScopePath:
    return ScopePath(tenant, brand, store, user)


def test_store_caller_reaches_only_own_store():
    caller = sp(brand="b1", store="s1")
    assert check_scope(caller, sp(brand="b1", store="s1"), "store").verdict is ScopeVerdict.ALLOW
    assert check_scope(caller, sp(brand="b1", store="s2"), "store").verdict is ScopeVerdict.DENY


def test_cross_tenant_is_hard_block_regardless():
    caller = sp(brand="b1", store="s1")
    target = ScopePath("tenant-b", "b9", "s9")
    assert check_scope(caller, target, "store").verdict is ScopeVerdict.HARD_BLOCK
    assert check_scope(sp(), ScopePath("tenant-b"), "tenant").verdict is ScopeVerdict.HARD_BLOCK


def test_brand_caller_reaches_all_stores_of_brand():
    caller = sp(brand="b1")
    assert check_scope(caller, sp(brand="b1", store="s2"), "store")
    assert check_scope(caller, sp(brand="b2", store="s3"), "store").verdict is ScopeVerdict.DENY


def test_narrower_caller_cannot_run_broader_operation():
    caller = sp(brand="b1", store="s1")
    decision = check_scope(caller, sp(brand="b1"), "brand")
    assert decision.verdict is ScopeVerdict.DENY
    assert "narrower" in decision.reason


def test_underspecified_target_denied():
    caller = sp(brand="b1")
    decision = check_scope(caller, sp(brand="b1"), "store")
    assert decision.verdict is ScopeVerdict.DENY


def test_tenant_caller_reaches_everything_in_tenant():
    caller = sp()
    assert check_scope(caller, sp(brand="b2", store="s9", user="u1"), "user")


# --- layer 1: schema -----------------------------------------------------------------

SCHEMA_TOOL = ToolDescriptor(
    name="ticket.create",
    mode="write",
    tenant="tenant-a",
    permission_policy=PermissionPolicy(capability="ticket.manage"),
    idempotency_key_fields=("store", "title"),
    supported_verbs=("semantic_search", "execute_action"),
    input_schema={
        "type": "object",
        "properties": {
            "store": {"type": "string", "minLength": 1},
            "category": {"type": "string"},
            "title": {"type": "string", "minLength": 1},
            "priority": {"type": "string", "enum": ["low", "medium", "high"]},
        },
        "required": ["store", "category", "title"],
        "additionalProperties": False,
    },
)


def test_listing_preview_params_conform():
    params = {
        "store": "downtown branch",
        "category": "equipment maintenance",
        "title": "Replace broken coffee machine",
        "priority": "medium",
    }
    assert validate_input_schema(SCHEMA_TOOL, params) == []


def test_missing_required_field_names_it():
    violations = validate_input_schema(
        SCHEMA_TOOL, {"store": "x", "category": "maintenance"}
    )
    assert len(violations) == 1
    assert violations[0]["path"] == "title"
    assert violations[0]["rule"] == "required"
    assert "title" in violations[0]["hint"]


def test_enum_violation_lists_allowed_values():
    violations = validate_input_schema(
        SCHEMA_TOOL,
        {"store": "x", "category": "c", "title": "t", "priority": "urgentest"},
    )
    assert len(violations) == 1
    assert violations[0]["path"] == "priority"
    for allowed in ("low", "medium", "high"):
        assert allowed in violations[0]["hint"]


def test_type_violation_carries_expected_type():
    violations = validate_input_schema(
        SCHEMA_TOOL, {"store": 7, "category": "c", "title": "t"}
    )
    assert violations[0]["path"] == "store"
    assert violations[0]["rule"] == "type"
    assert "string" in violations[0]["hint"]


# --- pipeline ordering over the live runtime -------------------------------------------

def stage_trace_of(runtime, invocation_id: str) -> list[str]:
    records = [
        r for r in runtime.audit.records()
        if r.get("invocation_id") == invocation_id and r.get("kind") == "pipeline"
    ]
    assert records, f"no pipeline audit for {invocation_id}"
    return records[-1]["stage_trace"]


def test_schema_failure_stops_before_capability(runtime, mgr):
    result = runtime.loop.run(
        mgr, "ticket.create", {"store": "downtown branch", "category": "c"},
        invocation_id="ord-schema",
    )
    assert result.response.error["cause"] == "schema_rejected"
    assert stage_trace_of(runtime, "ord-schema") == ["schema"]


def test_capability_failure_stops_before_scope(runtime, supervisor):
    result = runtime.loop.run(
        supervisor, "brand.config.update",
        {"brand": "central brand", "welcome_message": "hi"},
        invocation_id="ord-capability",
    )
    assert result.response.error["cause"] == "capability_denied"
    assert stage_trace_of(runtime, "ord-capability") == ["schema", "capability"]


def test_scope_failure_stops_before_risk(runtime, mgr):
    class Injector:
        def choose_candidate(self, candidates):
            return candidates.top().entity

        def supply_params(self, entity):
            return {"ticket": "T-2024-0050", "priority": "high"}

        def confirm_preview(self, diff):
            return True

    result = runtime.loop.run(
        mgr, "ticket.update", {"ticket": "plumbing leak", "priority": "high"},
        planner=Injector(), invocation_id="ord-scope",
    )
    assert result.response.error["cause"] == "scope_denied"
    assert stage_trace_of(runtime, "ord-scope") == ["schema", "capability", "scope"]


def test_approval_gate_trace_includes_risk(runtime, mgr):
    result = runtime.loop.run(
        mgr, "ticket.bulk_import",
        {"store": "downtown branch", "items": [f"t{i}" for i in range(12)]},
        invocation_id="ord-approval",
    )
    assert result.response.pending_approval_id
    assert stage_trace_of(runtime, "ord-approval") == [
        "schema", "capability", "scope", "risk", "approval",
    ]


def test_execute_failure_trace_ends_at_execute(runtime, mgr):
    registered = runtime.registry.get("tenant-a", "ticket.create")
    handlers = dict(registered.handlers)

    def exploding(ctx, params, store):
        raise HandlerFailure("backend down")

    handlers["execute_action"] = exploding
    runtime.registry.register_tool("tenant-a", registered.descriptor, handlers, replace=True)
    result = runtime.loop.run(
        mgr, "ticket.create",
        {"store": "downtown branch", "category": "maintenance", "title": "boom"},
        invocation_id="ord-execute",
    )
    assert result.response.error["cause"] == "handler_failure"
    loop_records = [
        r for r in runtime.audit.records()
        if r.get("invocation_id") == "ord-execute" and r["kind"] == "loop"
    ]
    assert loop_records[-1]["stage_trace"] == [
        "schema", "capability", "scope", "risk", "approval", "execute",
    ]


def test_all_traces_are_prefixes_of_canonical_order(runtime, mgr, supervisor):
    runtime.loop.run(mgr, "ticket.search", {"query": "downtown tickets"})
    runtime.loop.run(mgr, "ticket.create",
                     {"store": "downtown branch", "category": "m", "title": "t"})
    runtime.loop.run(supervisor, "brand.config.update",
                     {"brand": "central brand", "welcome_message": "x"})
    for record in runtime.audit.records():
        trace = record.get("stage_trace") or []
        assert tuple(trace) == tuple(PIPELINE_STAGES[: len(trace)]), trace


def test_tenant_blocked_decision(runtime, mgr):
    from agentgate.invocation import InvocationContext

    registered = runtime.registry.get("tenant-a", "ticket.create")
    ctx = InvocationContext.start(registered, mgr, "x",
                                  {"store": "s", "category": "c", "title": "t"})
    ctx.params = dict(ctx.raw_input)
    ctx.target_scopes = [ScopePath("tenant-b", "b", "s")]
    decision = runtime.pipeline.evaluate(ctx)
    assert decision.kind.value == "tenant_blocked"
    assert ctx.stage_trace == ["schema", "capability", "scope"]

"""Preview, execute, verify, recover: the handler plumbing around mutations.

Write and commit tools are idempotent by construction: a digest over the
descriptor-designated key fields is checked before any side effect, and a
duplicate call inside the window replays the stored response instead of
re-executing. Mutations run inside the entity store's single-writer
transaction, so a handler failure leaves the store bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .audit import AuditLog, Clock
from .contract import NtcResponse, make_ntc
from .errors import (
    ConflictingInFlight,
    HandlerFailure,
    MissingKeyField,
    VerbUnsupported,
)
from .governance import RequestFacts, RiskAssessment
from .invocation import InvocationContext
from .registry import ToolDescriptor
from .resolution import EntityStore

DEFAULT_IDEMPOTENCY_WINDOW = 24 * 3600.0  # seconds
INFLIGHT_WAIT_TIMEOUT = 30.0


# --- idempotency -----------------------------------------------------------------

def _normalize_scalar(value: Any) -> Any:
    # canonicalization is documented bit-exactly for cross-implementation parity:
    # strings lowercase + single-space separated, numbers as JSON renders them
    # (no leading zeros), containers normalized recursively
    if isinstance(value, str):
        return " ".join(value.lower().split())
    if isinstance(value, dict):
        return {k: _normalize_scalar(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_normalize_scalar(v) for v in value]
    return value


def idempotency_key(tool: ToolDescriptor, params: Mapping[str, Any]) -> str:
    """Digest of exactly the descriptor's key fields, prefixed by tool name.

    key = sha256(utf8(tool_name + "\\n" + canonical_json)) where canonical_json
    serializes {field: normalized value} with lexicographically sorted keys,
    separators (",", ":"), and no ASCII escaping.
    """
    selected: dict[str, Any] = {}
    for field_name in sorted(tool.idempotency_key_fields):
        if field_name not in params:
            raise MissingKeyField(
                f"idempotency key field {field_name!r} missing from params", field=field_name
            )
        selected[field_name] = _normalize_scalar(params[field_name])
    payload = tool.name + "\n" + json.dumps(
        selected, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def params_digest(params: Mapping[str, Any]) -> str:
    """Canonical digest of a full parameter map (drift detection)."""
    payload = json.dumps(_normalize_scalar(dict(params)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class IdempotencyRecord:
    key: str
    tool: str
    response: dict[str, Any]  # stored NTC wire form
    params: dict[str, Any]
    created_at: float


class IdempotencyStore:
    """Atomic check-and-set record store with in-flight arbitration.

    Exactly one concurrent caller per key executes; the rest wait briefly and
    replay the stored result. Records expire after the configured window.
    """

    def __init__(self, window: float = DEFAULT_IDEMPOTENCY_WINDOW, *, clock: Clock = time.time) -> None:
        self.window = window
        self._clock = clock
        self._records: dict[str, IdempotencyRecord] = {}
        self._inflight: dict[str, threading.Event] = {}
        self._lock = threading.Lock()

    def _live(self, key: str) -> IdempotencyRecord | None:
        record = self._records.get(key)
        if record is not None and self._clock() - record.created_at <= self.window:
            return record
        return None

    def claim(self, key: str, *, timeout: float = INFLIGHT_WAIT_TIMEOUT) -> IdempotencyRecord | None:
        """Return a live record to replay, or None once the caller owns execution."""
        deadline = time.monotonic() + timeout
        while True:
            with self._lock:
                record = self._live(key)
                if record is not None:
                    return record
                waiter = self._inflight.get(key)
                if waiter is None:
                    self._inflight[key] = threading.Event()
                    return None
            remaining = deadline - time.monotonic()
            if remaining <= 0 or not waiter.wait(timeout=remaining):
                raise ConflictingInFlight(f"execution with key {key} still in flight")

    def complete(self, key: str, record: IdempotencyRecord | None) -> None:
        """Finish a claim: store the record on success, release waiters either way."""
        with self._lock:
            if record is not None:
                self._records[key] = record
            waiter = self._inflight.pop(key, None)
        if waiter is not None:
            waiter.set()


# --- handler outcome contracts ------------------------------------------------------

@dataclass
class SearchOutcome:
    """What a semantic_search handler returns to the loop."""

    candidates: Any  # resolution.CandidateSet
    answer: str | None = None
    result_refs: list[dict[str, Any]] | None = None  # None -> derive from candidates
    evidence: list[dict[str, Any]] = field(default_factory=list)
    next_actions: list[dict[str, Any]] = field(default_factory=list)
    confidence: float | None = None


@dataclass
class PreviewOutcome:
    """What a preview handler projects; previews never touch the store."""

    answer: str
    changes: list[dict[str, Any]] = field(default_factory=list)
    creations: list[dict[str, Any]] = field(default_factory=list)
    deletions: list[dict[str, Any]] = field(default_factory=list)
    result_refs: list[dict[str, Any]] = field(default_factory=list)
    evidence: list[dict[str, Any]] = field(default_factory=list)
    next_actions: list[dict[str, Any]] = field(default_factory=list)
    confidence: float | None = None


@dataclass
class ExecuteOutcome:
    answer: str
    payload: dict[str, Any] = field(default_factory=dict)
    result_refs: list[dict[str, Any]] = field(default_factory=list)
    evidence: list[dict[str, Any]] = field(default_factory=list)
    next_actions: list[dict[str, Any]] = field(default_factory=list)
    confidence: float | None = None
    affected: list[tuple[str, str]] = field(default_factory=list)  # (type, id)
    verify_map: dict[str, str] = field(default_factory=dict)  # param field -> attribute


@dataclass
class PreviewDiff:
    changes: list[dict[str, Any]]
    creations: list[dict[str, Any]]
    deletions: list[dict[str, Any]]
    risk: RiskAssessment | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "changes": self.changes,
            "creations": self.creations,
            "deletions": self.deletions,
            "risk": self.risk.to_dict() if self.risk else None,
        }


@dataclass
class ExecutionResult:
    payload: dict[str, Any]
    result_refs: list[dict[str, Any]]
    affected: list[tuple[str, str]]
    audit_record_id: int
    verify_map: dict[str, str] = field(default_factory=dict)


@dataclass
class VerifyOutcome:
    match: bool
    evidence: list[dict[str, Any]]


# --- request fact derivation -----------------------------------------------------------

def derive_request_facts(ctx: InvocationContext, store: EntityStore) -> RequestFacts:
    """Compute the risk factors' runtime facts from resolved parameters.

    Handlers may refine these via a ``derive_facts`` binding; the defaults
    cover the common cases: list-valued params define the batch, resolved
    target entities define brand/store reach and published-content exposure.
    """
    batch = 1
    for value in ctx.raw_input.values():
        if isinstance(value, (list, tuple)):
            batch = max(batch, len(value))
    affected = batch

    caller_scope = ctx.caller.scope
    cross_brand = False
    same_store = False
    overwrites_published = False
    entities = ctx.resolved_entities
    if entities:
        brands = {e.scope_path.brand for e in entities if e.scope_path.brand is not None}
        if caller_scope.brand is not None and any(b != caller_scope.brand for b in brands):
            cross_brand = True
        stores = [e.scope_path.store for e in entities]
        if caller_scope.store is not None and stores and all(s == caller_scope.store for s in stores):
            same_store = True
        for entity in entities:
            attrs = entity.attributes
            if attrs.get("published") is True or attrs.get("status") == "published":
                overwrites_published = True

    facts = {
        "affected_count": affected,
        "cross_brand": cross_brand,
        "overwrites_published": overwrites_published,
        "batch_size": batch,
        "irreversible": ctx.tool.mode == "commit",
        "single_entity": affected == 1,
        "same_store_only": same_store,
    }
    hook = ctx.handlers.get("derive_facts")
    if hook is not None:
        facts.update(hook(ctx, store))
        facts["single_entity"] = facts["affected_count"] == 1
    return RequestFacts(**facts)


# --- the executor ---------------------------------------------------------------------

class Executor:
    """Runs the P/E/V/C verbs against the entity store under the safety contracts."""

    def __init__(
        self,
        store: EntityStore,
        idempotency: IdempotencyStore,
        audit: AuditLog,
        *,
        confidence_for: Callable[[ToolDescriptor], float],
        clock: Clock = time.time,
    ) -> None:
        self.store = store
        self.idempotency = idempotency
        self.audit = audit
        self.confidence_for = confidence_for
        self._clock = clock

    def _require_verb(self, ctx: InvocationContext, verb: str) -> Callable[..., Any]:
        if not ctx.tool.supports(verb):
            raise VerbUnsupported(
                f"tool {ctx.tool.name!r} does not support {verb}",
                tool=ctx.tool.name,
                verb=verb,
                supported=list(ctx.tool.supported_verbs),
            )
        handler = ctx.handlers.get(verb)
        if handler is None:
            raise HandlerFailure(f"tool {ctx.tool.name!r} has no bound handler for {verb}")
        return handler

    def _confidence(self, ctx: InvocationContext, supplied: float | None) -> float:
        # handler-supplied confidence wins: it reflects instance-specific evidence
        if supplied is not None:
            return supplied
        return self.confidence_for(ctx.tool)

    # -- P

    def preview_action(self, ctx: InvocationContext) -> tuple[PreviewDiff, NtcResponse]:
        handler = self._require_verb(ctx, "preview_action")
        before = self.store.snapshot_hash()
        try:
            outcome: PreviewOutcome = handler(ctx, dict(ctx.params), self.store)
        except Exception as exc:  # handler contract breach -> protocol error state
            raise HandlerFailure(f"preview handler failed: {exc}", stage="preview") from exc
        if self.store.snapshot_hash() != before:
            raise HandlerFailure("preview mutated the entity store", stage="preview")

        diff = PreviewDiff(
            changes=outcome.changes,
            creations=outcome.creations,
            deletions=outcome.deletions,
            risk=ctx.risk,
        )
        response = make_ntc(
            ok=True,
            answer=outcome.answer,
            refs=outcome.result_refs,
            confidence=self._confidence(ctx, outcome.confidence),
            evidence=outcome.evidence,
            next_actions=outcome.next_actions,
            requires_confirmation=True,
        )
        return diff, response

    # -- E

    def execute_action(self, ctx: InvocationContext) -> tuple[ExecutionResult | None, NtcResponse]:
        handler = self._require_verb(ctx, "execute_action")

        key: str | None = None
        if ctx.tool.mode in ("write", "commit"):
            key = ctx.idempotency_key or idempotency_key(ctx.tool, ctx.params)
            ctx.idempotency_key = key
            record = self.idempotency.claim(key)
            if record is not None:
                return None, self._replay(ctx, record)

        ctx.stage_trace.append("execute")
        try:
            try:
                with self.store.transaction():
                    outcome: ExecuteOutcome = handler(ctx, dict(ctx.params), self.store)
            except HandlerFailure:
                raise
            except Exception as exc:
                raise HandlerFailure(f"execute handler failed: {exc}", stage="execute") from exc
        except BaseException:
            if key is not None:
                self.idempotency.complete(key, None)
            raise

        audit_entry = self.audit.record(
            kind="execute",
            invocation_id=ctx.invocation_id,
            tool=ctx.tool.name,
            caller=ctx.caller.to_dict(),
            verb="execute_action",
            stage_trace=list(ctx.stage_trace),
            params=dict(ctx.params),
            decision="executed",
            risk=ctx.risk.to_dict() if ctx.risk else None,
            affected=[list(pair) for pair in outcome.affected],
        )
        response = make_ntc(
            ok=True,
            answer=outcome.answer,
            refs=outcome.result_refs,
            confidence=self._confidence(ctx, outcome.confidence),
            evidence=outcome.evidence,
            next_actions=outcome.next_actions,
        )
        if key is not None:
            self.idempotency.complete(
                key,
                IdempotencyRecord(
                    key=key,
                    tool=ctx.tool.name,
                    response=response.to_wire(),
                    params=dict(ctx.params),
                    created_at=self._clock(),
                ),
            )
        result = ExecutionResult(
            payload=outcome.payload,
            result_refs=response.result_refs,
            affected=outcome.affected,
            audit_record_id=audit_entry["seq"],
            verify_map=outcome.verify_map,
        )
        return result, response

    def _replay(self, ctx: InvocationContext, record: IdempotencyRecord) -> NtcResponse:
        doc = json.loads(json.dumps(record.response))  # defensive copy
        evidence = list(doc.get("evidence", []))
        evidence.append({"type": "idempotent_replay", "detail": {"key": record.key}})
        if params_digest(ctx.params) != params_digest(record.params):
            # same key fields, different non-key fields: replay the original
            # result but make the divergence visible
            evidence.append(
                {
                    "type": "warning",
                    "detail": {
                        "rule": "replayed_with_different_params",
                        "stored_params": record.params,
                    },
                }
            )
        doc["evidence"] = evidence
        self.audit.record(
            kind="idempotent_replay",
            invocation_id=ctx.invocation_id,
            tool=ctx.tool.name,
            caller=ctx.caller.to_dict(),
            verb="execute_action",
            stage_trace=list(ctx.stage_trace),
            params=dict(ctx.params),
            decision="replayed",
            key=record.key,
        )
        return make_ntc(
            ok=doc["ok"],
            answer=doc["answer"],
            refs=doc.get("result_refs", []),
            confidence=doc.get("confidence", 0.0),
            evidence=doc.get("evidence", []),
            next_actions=doc.get("next_actions", []),
            requires_confirmation=doc.get("requires_confirmation", False),
            pending_approval_id=doc.get("pending_approval_id"),
            error=doc.get("error"),
        )

    # -- V

    def verify_result(
        self,
        ctx: InvocationContext,
        result: ExecutionResult,
        intent: str,
        params: Mapping[str, Any],
    ) -> VerifyOutcome:
        """Re-read affected entities and compare persisted state to parameters."""
        custom = ctx.handlers.get("verify_result")
        if custom is not None and ctx.tool.supports("verify_result"):
            return custom(ctx, result, intent, dict(params), self.store)
        if not ctx.tool.supports("verify_result"):
            raise VerbUnsupported(
                f"tool {ctx.tool.name!r} does not support verify_result",
                tool=ctx.tool.name,
                verb="verify_result",
            )
        return generic_verify(self.store, result, params)

    # -- C

    def recover_from_error(self, failure: Mapping[str, Any]) -> dict[str, Any]:
        return build_recovery(failure)


def generic_verify(store: EntityStore, result: ExecutionResult, params: Mapping[str, Any]) -> VerifyOutcome:
    evidence: list[dict[str, Any]] = []
    match = True
    for entity_type, entity_id in result.affected:
        entity = store.get(entity_type, entity_id)
        if entity is None:
            match = False
            evidence.append(
                {"type": "entity_vanished", "detail": {"type": entity_type, "id": entity_id}}
            )
            continue
        for key, expected in params.items():
            attr = result.verify_map.get(key, key)
            if attr not in entity.attributes:
                continue
            actual = entity.attributes[attr]
            field_match = actual == expected
            match = match and field_match
            evidence.append(
                {
                    "type": "field_match",
                    "detail": {
                        "entity": f"{entity_type}/{entity_id}",
                        "field": attr,
                        "expected": expected,
                        "actual": actual,
                        "match": field_match,
                    },
                }
            )
        evidence.append({"type": "entity_exists", "detail": {"type": entity_type, "id": entity_id}})
    return VerifyOutcome(match=match, evidence=evidence)


_RECOVERY_SUGGESTIONS = {
    "no_match": "broaden the query or list entities of the requested type",
    "verification_failed": "inspect the divergent fields and re-run execute_action with corrected parameters",
    "schema_rejected": "correct the parameters per the violation hints",
    "capability_denied": "ask an operator with the required role, or choose a permitted tool",
    "scope_denied": "narrow the request to entities within your scope",
    "tenant_blocked": "cross-tenant operations are unconditionally blocked",
    "handler_failure": "retry execute_action once; if the failure persists escalate to the tool owner",
    "verb_unsupported": "consult the tool's supported_verbs and skip the inapplicable phase",
    "disambiguation_declined": "pick one of the listed candidates and retry",
}


def build_recovery(failure: Mapping[str, Any]) -> dict[str, Any]:
    """Structured recovery guidance: stable cause, candidates, actionable hint."""
    cause = failure.get("cause", "unknown")
    context = failure.get("context", {}) or {}
    candidates = context.get("candidates", [])
    suggestion = context.get("suggestion") or _RECOVERY_SUGGESTIONS.get(
        cause, "inspect the error context and adjust the request"
    )
    if cause == "schema_rejected" and context.get("violations"):
        hints = "; ".join(v.get("hint", "") for v in context["violations"])
        suggestion = hints or suggestion
    return {"cause": cause, "candidates": list(candidates), "suggestion": suggestion}

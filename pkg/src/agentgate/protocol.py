"""Six-verb interaction protocol: the state machine and the loop driver.

Every invocation is an isolated state machine instance over seven states.
Search produces candidates, resolution pins one entity, preview projects the
mutation, execution applies it, verification closes the loop, and recovery
turns any failure into structured guidance instead of a dead end. The loop
driver walks these phases per the tool's verb envelope, runs the governance
pipeline before any mutation, and suspends into the approval service when the
assessed risk demands a human.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Protocol, runtime_checkable

from .approvals import ApprovalService, ApprovalSnapshot
from .audit import AuditLog, Clock
from .contract import NtcResponse, error_ntc, make_ntc
from .errors import (
    GatewayError,
    IllegalTransition,
    NoMatch,
    VerbUnsupported,
    VerificationFailed,
)
from .execution import (
    Executor,
    PreviewDiff,
    SearchOutcome,
    build_recovery,
    derive_request_facts,
    idempotency_key,
)
from .governance import DecisionKind, Pipeline, Principal, RiskAssessment
from .invocation import InvocationContext
from .registry import RegisteredTool, ToolRegistry
from .resolution import (
    CandidateSet,
    Entity,
    EntityStore,
    ResolutionThresholds,
    resolve_candidates,
)


class ProtocolState(str, Enum):
    INIT = "init"
    CANDIDATES = "candidates"
    RESOLVED = "resolved"
    PREVIEWED = "previewed"
    EXECUTED = "executed"
    VERIFIED = "verified"
    ERROR = "error"


class Verb(str, Enum):
    SEMANTIC_SEARCH = "semantic_search"
    RESOLVE_CANDIDATES = "resolve_candidates"
    PREVIEW_ACTION = "preview_action"
    EXECUTE_ACTION = "execute_action"
    VERIFY_RESULT = "verify_result"
    RECOVER_FROM_ERROR = "recover_from_error"
    FAILURE = "failure"  # system-generated, never caller-supplied


CALLER_VERBS = tuple(v for v in Verb if v is not Verb.FAILURE)

# the fixed transition relation; (resolved -> executed) additionally requires
# mode != commit, and executed is terminal for read-mode tools
_DELTA: dict[tuple[ProtocolState, Verb], ProtocolState] = {
    (ProtocolState.INIT, Verb.SEMANTIC_SEARCH): ProtocolState.CANDIDATES,
    (ProtocolState.CANDIDATES, Verb.RESOLVE_CANDIDATES): ProtocolState.RESOLVED,
    (ProtocolState.RESOLVED, Verb.PREVIEW_ACTION): ProtocolState.PREVIEWED,
    (ProtocolState.RESOLVED, Verb.EXECUTE_ACTION): ProtocolState.EXECUTED,
    (ProtocolState.PREVIEWED, Verb.EXECUTE_ACTION): ProtocolState.EXECUTED,
    (ProtocolState.EXECUTED, Verb.VERIFY_RESULT): ProtocolState.VERIFIED,
    (ProtocolState.ERROR, Verb.RECOVER_FROM_ERROR): ProtocolState.RESOLVED,
}


def terminal_states(tool_mode: str) -> frozenset[ProtocolState]:
    if tool_mode == "read":
        return frozenset({ProtocolState.VERIFIED, ProtocolState.EXECUTED})
    return frozenset({ProtocolState.VERIFIED})


def is_terminal(state: ProtocolState | str, tool_mode: str) -> bool:
    return ProtocolState(state) in terminal_states(tool_mode)


def legal_verbs(state: ProtocolState | str, tool_mode: str = "write") -> list[str]:
    """Caller-suppliable verbs with a defined transition from ``state``."""
    state = ProtocolState(state)
    out = []
    for verb in CALLER_VERBS:
        try:
            transition(state, verb, tool_mode)
        except IllegalTransition:
            continue
        out.append(verb.value)
    return out


def transition(state: ProtocolState | str, verb: Verb | str, tool_mode: str = "write") -> ProtocolState:
    """The transition function. Undefined pairs raise IllegalTransition
    naming the state, the verb, and the legal alternatives."""
    state = ProtocolState(state)
    verb = Verb(verb)
    if verb is Verb.FAILURE:
        # failure escapes to the error state from anywhere
        return ProtocolState.ERROR
    if state in terminal_states(tool_mode):
        raise IllegalTransition(state.value, verb.value, [])
    next_state = _DELTA.get((state, verb))
    if (
        next_state is None
        or (state, verb) == (ProtocolState.RESOLVED, Verb.EXECUTE_ACTION)
        and tool_mode == "commit"
    ):
        # commit tools never skip preview
        legal = [
            v.value
            for v in CALLER_VERBS
            if _DELTA.get((state, v)) is not None
            and not ((state, v) == (ProtocolState.RESOLVED, Verb.EXECUTE_ACTION) and tool_mode == "commit")
        ]
        raise IllegalTransition(state.value, verb.value, legal)
    return next_state


# --- planner contract -------------------------------------------------------------

@runtime_checkable
class PlannerCallback(Protocol):
    """The three points where the loop hands a decision back to the planner."""

    def choose_candidate(self, candidates: CandidateSet) -> Entity | None: ...

    def supply_params(self, entity: Entity | None) -> dict[str, Any] | None: ...

    def confirm_preview(self, diff: PreviewDiff) -> bool: ...


class AutoPlanner:
    """Default planner: pick the top candidate, keep the raw input, confirm."""

    def choose_candidate(self, candidates: CandidateSet) -> Entity | None:
        return candidates.top().entity

    def supply_params(self, entity: Entity | None) -> dict[str, Any] | None:
        return None

    def confirm_preview(self, diff: PreviewDiff) -> bool:
        return True


# --- loop driver --------------------------------------------------------------------

@dataclass
class LoopResult:
    response: NtcResponse
    outcome: str
    ctx: InvocationContext


class InteractionLoop:
    """Drives S -> (R) -> (P) -> E -> V per the tool's verb envelope."""

    def __init__(
        self,
        registry: ToolRegistry,
        store: EntityStore,
        pipeline: Pipeline,
        executor: Executor,
        approvals: ApprovalService,
        audit: AuditLog,
        *,
        record_outcome: Callable[[str, str, bool], None],
        thresholds: ResolutionThresholds | None = None,
        clock: Clock = time.time,
    ) -> None:
        self._registry = registry
        self._store = store
        self._pipeline = pipeline
        self._executor = executor
        self._approvals = approvals
        self._audit = audit
        self._record_outcome = record_outcome
        self.thresholds = thresholds or ResolutionThresholds()
        self._clock = clock
        approvals.resume_runner = self.resume_from_snapshot

    # -- public entry points

    def run(
        self,
        caller: Principal,
        tool_name: str,
        raw_input: dict[str, Any],
        planner: PlannerCallback | None = None,
        *,
        thresholds: ResolutionThresholds | None = None,
        intent: str | None = None,
        invocation_id: str | None = None,
    ) -> LoopResult:
        tool = self._registry.get(caller.tenant, tool_name)
        ctx = InvocationContext.start(
            tool, caller, intent or _derive_intent(raw_input), raw_input,
            invocation_id=invocation_id, verb="auto",
        )
        ctx.thresholds = thresholds or self.thresholds
        planner = planner or AutoPlanner()
        return self._guarded(ctx, lambda: self._drive(ctx, planner))

    def run_verb(
        self,
        caller: Principal,
        tool_name: str,
        verb: str,
        raw_input: dict[str, Any],
        *,
        thresholds: ResolutionThresholds | None = None,
        invocation_id: str | None = None,
    ) -> LoopResult:
        """Single-verb invocation: one phase, still governed and enveloped."""
        tool = self._registry.get(caller.tenant, tool_name)
        ctx = InvocationContext.start(
            tool, caller, _derive_intent(raw_input), raw_input,
            invocation_id=invocation_id, verb=verb,
        )
        ctx.thresholds = thresholds or self.thresholds
        return self._guarded(ctx, lambda: self._drive_single(ctx, verb))

    # -- error containment

    def _guarded(self, ctx: InvocationContext, body: Callable[[], tuple[NtcResponse, str]]) -> LoopResult:
        try:
            response, outcome = body()
        except GatewayError as exc:
            response, outcome = self._failure_response(ctx, exc), exc.code
        except Exception as exc:  # a bare failure must never escape to the caller
            wrapped = GatewayError(f"internal error: {exc}")
            wrapped.code = "internal_error"
            response, outcome = self._failure_response(ctx, wrapped), "internal_error"
        self._audit.record(
            kind="loop",
            invocation_id=ctx.invocation_id,
            tool=ctx.tool.name,
            caller=ctx.caller.to_dict(),
            verb=ctx.current_verb,
            stage_trace=list(ctx.stage_trace),
            params=dict(ctx.params or ctx.raw_input),
            decision=outcome,
            final_state=str(ctx.state.value if isinstance(ctx.state, ProtocolState) else ctx.state),
            risk=ctx.risk.to_dict() if ctx.risk else None,
        )
        return LoopResult(response=response, outcome=outcome, ctx=ctx)

    def _failure_response(self, ctx: InvocationContext, exc: GatewayError) -> NtcResponse:
        ctx.state = transition(ctx.state, Verb.FAILURE, ctx.tool.mode)
        context: dict[str, Any] = dict(exc.details)
        if ctx.candidate_set is not None and exc.code in ("no_match", "disambiguation_declined"):
            context.setdefault(
                "candidates",
                [{**c.entity.ref(), "score": c.score} for c in ctx.candidate_set.candidates],
            )
        if isinstance(exc, NoMatch):
            context.setdefault("suggestion", exc.suggestion)
        recovery = build_recovery({"cause": exc.code, "context": context})
        evidence = []
        if exc.code == "verification_failed" and "evidence" in exc.details:
            evidence = exc.details["evidence"]
        if self._touched_handler(exc.code):
            self._record_outcome(ctx.tool.tenant, ctx.tool.name, False)
        return error_ntc(
            recovery["cause"],
            exc.message,
            candidates=recovery["candidates"],
            suggestion=recovery["suggestion"],
            evidence=evidence,
        )

    @staticmethod
    def _touched_handler(code: str) -> bool:
        # calibration tracks the handler's empirical behavior; governance
        # denials say nothing about the handler
        return code in ("no_match", "handler_failure", "verification_failed", "internal_error")

    # -- phases

    def _advance(self, ctx: InvocationContext, verb: Verb) -> None:
        ctx.state = transition(ctx.state, verb, ctx.tool.mode)

    def _search(self, ctx: InvocationContext) -> SearchOutcome:
        if not ctx.tool.supports(Verb.SEMANTIC_SEARCH.value):
            raise VerbUnsupported(
                f"tool {ctx.tool.name!r} does not support semantic_search",
                tool=ctx.tool.name,
                verb="semantic_search",
                supported=list(ctx.tool.supported_verbs),
            )
        handler = ctx.handlers[Verb.SEMANTIC_SEARCH.value]
        outcome: SearchOutcome = handler(ctx, dict(ctx.raw_input), self._store)
        ctx.candidate_set = outcome.candidates
        self._advance(ctx, Verb.SEMANTIC_SEARCH)
        return outcome

    def _wrap_read(self, ctx: InvocationContext, outcome: SearchOutcome) -> NtcResponse:
        candidates = outcome.candidates
        refs = outcome.result_refs
        if refs is None:
            refs = [{**c.entity.ref(), "actions": []} for c in candidates.candidates]
        evidence = outcome.evidence or [
            {"type": "count", "detail": {"total": len(candidates)}},
            {"type": "match", "detail": {"top_score": candidates.top().score}},
        ]
        answer = outcome.answer or (
            f"Found {len(candidates)} {candidates.top().entity.type} match(es)."
        )
        confidence = outcome.confidence
        if confidence is None:
            confidence = self._calibrated(ctx)
        return make_ntc(
            ok=True,
            answer=answer,
            refs=refs,
            confidence=confidence,
            evidence=evidence,
            next_actions=outcome.next_actions,
        )

    def _calibrated(self, ctx: InvocationContext) -> float:
        return self._executor.confidence_for(ctx.tool)

    def _resolve(self, ctx: InvocationContext, planner: PlannerCallback) -> Entity:
        resolution = resolve_candidates(ctx.candidate_set, ctx.thresholds)
        if resolution.auto:
            entity = resolution.entity
        else:
            entity = planner.choose_candidate(resolution.candidates)
            valid_ids = {c.entity.id for c in ctx.candidate_set.candidates}
            if entity is None or entity.id not in valid_ids:
                raise GatewayErrorWithCode(
                    "disambiguation_declined",
                    "planner did not select one of the offered candidates",
                )
        self._advance(ctx, Verb.RESOLVE_CANDIDATES)
        assert entity is not None
        if all(e.id != entity.id or e.type != entity.type for e in ctx.resolved_entities):
            ctx.resolved_entities.append(entity)
        return entity

    def _prepare_params(self, ctx: InvocationContext, planner: PlannerCallback, entity: Entity | None) -> None:
        params = planner.supply_params(entity)
        if params is None:
            resolver = ctx.handlers.get("resolve_params")
            if resolver is not None:
                params = resolver(ctx, entity, self._store)
            else:
                params = dict(ctx.raw_input)
        ctx.params = dict(params)
        targeter = ctx.handlers.get("target_entities")
        if targeter is not None:
            # scope/risk must see the entities the params actually address,
            # not just what search resolved (planners can inject literal ids)
            actual = targeter(ctx, ctx.params, self._store)
            if actual:
                ctx.resolved_entities = list(actual)
        ctx.target_scopes = [e.scope_path for e in ctx.resolved_entities] or [ctx.caller.scope]
        ctx.request_facts = derive_request_facts(ctx, self._store)

    def _decision_failure(self, ctx: InvocationContext, decision) -> NtcResponse:
        ctx.state = transition(ctx.state, Verb.FAILURE, ctx.tool.mode)
        cause = decision.kind.value
        context: dict[str, Any] = {"reason": decision.reason}
        if decision.violations:
            context["violations"] = list(decision.violations)
        recovery = build_recovery({"cause": cause, "context": context})
        return error_ntc(
            cause,
            decision.reason or f"request stopped at the {cause} gate",
            suggestion=recovery["suggestion"],
            evidence=[{"type": "violation", "detail": v} for v in decision.violations],
        )

    # -- the full loop

    def _drive(self, ctx: InvocationContext, planner: PlannerCallback) -> tuple[NtcResponse, str]:
        tool = ctx.tool
        if tool.mode == "read":
            decision = self._pipeline.evaluate(ctx)
            if not decision.proceed:
                return self._decision_failure(ctx, decision), decision.kind.value
            outcome = self._search(ctx)
            response = self._wrap_read(ctx, outcome)
            self._record_outcome(tool.tenant, tool.name, True)
            return response, "ok"

        entity: Entity | None = None
        if tool.supports(Verb.SEMANTIC_SEARCH.value):
            outcome = self._search(ctx)
            entity = self._resolve(ctx, planner)
        else:
            # envelope skip: no searchable surface, treat input as resolved
            ctx.state = ProtocolState.RESOLVED

        self._prepare_params(ctx, planner, entity)
        decision = self._pipeline.evaluate(ctx)
        if decision.kind in (
            DecisionKind.SCHEMA_REJECTED,
            DecisionKind.CAPABILITY_DENIED,
            DecisionKind.SCOPE_DENIED,
            DecisionKind.TENANT_BLOCKED,
        ):
            return self._decision_failure(ctx, decision), decision.kind.value
        # governance passed; pin the replay key before any suspension so the
        # snapshot resumes with the identical digest
        if tool.mode in ("write", "commit"):
            ctx.idempotency_key = idempotency_key(tool, ctx.params)

        diff: PreviewDiff | None = None
        preview_response: NtcResponse | None = None
        if tool.supports(Verb.PREVIEW_ACTION.value):
            self._advance(ctx, Verb.PREVIEW_ACTION)
            diff, preview_response = self._executor.preview_action(ctx)

        if decision.kind is DecisionKind.APPROVAL_REQUIRED:
            extra = [{"type": "preview", "detail": diff.to_dict()}] if diff else []
            assert decision.risk is not None
            _, response = self._approvals.submit_for_approval(ctx, decision.risk, extra)
            return response, "suspended"

        if preview_response is not None and not planner.confirm_preview(diff):
            return preview_response, "preview_declined"

        return self._execute_and_verify(ctx)

    def _execute_and_verify(self, ctx: InvocationContext) -> tuple[NtcResponse, str]:
        self._advance(ctx, Verb.EXECUTE_ACTION)
        result, response = self._executor.execute_action(ctx)
        if result is None:
            # idempotent replay: the side effect already happened once
            return response, "replayed"

        if ctx.tool.supports(Verb.VERIFY_RESULT.value):
            verify = self._executor.verify_result(ctx, result, ctx.intent, ctx.params)
            if not verify.match:
                raise VerificationFailed(
                    f"persisted state diverges from the request for {ctx.tool.name}",
                    evidence=verify.evidence,
                )
            self._advance(ctx, Verb.VERIFY_RESULT)
            response.evidence.append({"type": "verification", "detail": {"match": True}})

        self._record_outcome(ctx.tool.tenant, ctx.tool.name, True)
        return response, "ok"

    # -- single-verb dispatch

    def _drive_single(self, ctx: InvocationContext, verb: str) -> tuple[NtcResponse, str]:
        try:
            verb_member = Verb(verb)
        except ValueError:
            raise VerbUnsupported(f"unknown verb {verb!r}", verb=verb) from None
        if verb_member is Verb.FAILURE:
            raise VerbUnsupported("failure is system-generated and cannot be invoked", verb=verb)
        if verb_member is not Verb.RECOVER_FROM_ERROR and not ctx.tool.supports(verb_member.value):
            raise VerbUnsupported(
                f"tool {ctx.tool.name!r} does not support {verb_member.value}",
                tool=ctx.tool.name,
                verb=verb_member.value,
                supported=list(ctx.tool.supported_verbs),
            )

        if verb_member is Verb.SEMANTIC_SEARCH:
            decision = self._pipeline.evaluate(ctx)
            if not decision.proceed and ctx.tool.mode == "read":
                return self._decision_failure(ctx, decision), decision.kind.value
            if decision.kind in (
                DecisionKind.SCHEMA_REJECTED,
                DecisionKind.CAPABILITY_DENIED,
                DecisionKind.SCOPE_DENIED,
                DecisionKind.TENANT_BLOCKED,
            ):
                return self._decision_failure(ctx, decision), decision.kind.value
            outcome = self._search(ctx)
            response = self._wrap_read(ctx, outcome)
            self._record_outcome(ctx.tool.tenant, ctx.tool.name, True)
            return response, "ok"

        if verb_member is Verb.RESOLVE_CANDIDATES:
            outcome = self._search(ctx)
            resolution = resolve_candidates(ctx.candidate_set, ctx.thresholds)
            if resolution.auto:
                self._advance(ctx, Verb.RESOLVE_CANDIDATES)
                assert resolution.entity is not None
                return (
                    make_ntc(
                        ok=True,
                        answer=f"Resolved to {resolution.entity.title}.",
                        refs=[resolution.entity.ref()],
                        confidence=ctx.candidate_set.top().score,
                        evidence=[{"type": "resolution", "detail": {"auto": True}}],
                    ),
                    "ok",
                )
            refs = [
                {**c.entity.ref(), "actions": []} for c in resolution.candidates.candidates
            ]
            return (
                make_ntc(
                    ok=True,
                    answer="Multiple candidates match; disambiguation required.",
                    refs=refs,
                    confidence=ctx.candidate_set.top().score,
                    evidence=[{"type": "resolution", "detail": {"auto": False}}],
                    requires_confirmation=True,
                ),
                "disambiguate",
            )

        if verb_member in (Verb.PREVIEW_ACTION, Verb.EXECUTE_ACTION):
            entity: Entity | None = None
            if ctx.tool.supports(Verb.SEMANTIC_SEARCH.value):
                self._search(ctx)
                entity = self._resolve(ctx, AutoPlanner())
            else:
                ctx.state = ProtocolState.RESOLVED
            self._prepare_params(ctx, AutoPlanner(), entity)
            decision = self._pipeline.evaluate(ctx)
            if decision.kind in (
                DecisionKind.SCHEMA_REJECTED,
                DecisionKind.CAPABILITY_DENIED,
                DecisionKind.SCOPE_DENIED,
                DecisionKind.TENANT_BLOCKED,
            ):
                return self._decision_failure(ctx, decision), decision.kind.value
            if ctx.tool.mode in ("write", "commit"):
                ctx.idempotency_key = idempotency_key(ctx.tool, ctx.params)

            if verb_member is Verb.PREVIEW_ACTION:
                self._advance(ctx, Verb.PREVIEW_ACTION)
                _, response = self._executor.preview_action(ctx)
                return response, "ok"

            diff = None
            if decision.kind is DecisionKind.APPROVAL_REQUIRED:
                if ctx.tool.supports(Verb.PREVIEW_ACTION.value):
                    self._advance(ctx, Verb.PREVIEW_ACTION)
                    diff, _ = self._executor.preview_action(ctx)
                extra = [{"type": "preview", "detail": diff.to_dict()}] if diff else []
                assert decision.risk is not None
                _, response = self._approvals.submit_for_approval(ctx, decision.risk, extra)
                return response, "suspended"
            if ctx.tool.mode == "commit":
                # commit tools never skip preview, even in single-verb form
                self._advance(ctx, Verb.PREVIEW_ACTION)
                self._executor.preview_action(ctx)
            # single-verb execute is just E; verification is its own verb
            self._advance(ctx, Verb.EXECUTE_ACTION)
            result, response = self._executor.execute_action(ctx)
            if result is None:
                return response, "replayed"
            self._record_outcome(ctx.tool.tenant, ctx.tool.name, True)
            return response, "ok"

        if verb_member is Verb.VERIFY_RESULT:
            return self._verify_single(ctx)

        # recover_from_error: pure transformation of a failure description
        failure = ctx.raw_input.get("failure", ctx.raw_input)
        recovery = self._executor.recover_from_error(failure)
        return (
            error_ntc(
                recovery["cause"],
                f"Recovery guidance for {recovery['cause']}.",
                candidates=recovery["candidates"],
                suggestion=recovery["suggestion"],
            ),
            "ok",
        )

    def _verify_single(self, ctx: InvocationContext) -> tuple[NtcResponse, str]:
        from .execution import ExecutionResult

        refs = ctx.raw_input.get("refs", [])
        params = ctx.raw_input.get("params", {})
        result = ExecutionResult(
            payload={},
            result_refs=[dict(r) for r in refs],
            affected=[(r["type"], r["id"]) for r in refs],
            audit_record_id=0,
        )
        ctx.params = dict(params)
        verify = self._executor.verify_result(ctx, result, ctx.intent, params)
        return (
            make_ntc(
                ok=True,
                answer="Verification passed." if verify.match else "Verification failed.",
                refs=[
                    {**dict(r), "title": r.get("title", r["id"]), "actions": []}
                    for r in refs
                ],
                confidence=1.0 if verify.match else 0.0,
                evidence=verify.evidence,
            ),
            "ok" if verify.match else "verification_failed",
        )

    # -- resume after approval

    def resume_from_snapshot(self, snapshot: ApprovalSnapshot) -> NtcResponse:
        """Re-attach a suspended invocation and run the remaining phases."""
        payload = snapshot.context
        caller = Principal.from_dict(payload["caller"])
        tool = self._registry.get(payload["tenant"], payload["tool"])
        ctx = InvocationContext.start(
            tool,
            caller,
            payload.get("intent", ""),
            payload.get("raw_input", {}),
            invocation_id=payload["invocation_id"],
            verb="resume",
        )
        ctx.thresholds = self.thresholds
        ctx.params = dict(payload["params"])
        ctx.state = ProtocolState(payload.get("state", "resolved"))
        ctx.stage_trace = list(payload.get("stage_trace", []))
        ctx.idempotency_key = payload.get("idempotency_key")
        if payload.get("risk"):
            ctx.risk = RiskAssessment.from_dict(payload["risk"])
        for ref in payload.get("resolved_refs", []):
            entity = self._store.get(ref["type"], ref["id"])
            if entity is not None:
                ctx.resolved_entities.append(entity)

        result = self._guarded(ctx, lambda: self._execute_and_verify(ctx))
        return result.response


class GatewayErrorWithCode(GatewayError):
    """Ad-hoc gateway error with an explicit cause code."""

    def __init__(self, code: str, message: str, **details: Any) -> None:
        super().__init__(message, **details)
        self.code = code


def _derive_intent(raw_input: dict[str, Any]) -> str:
    if "query" in raw_input and isinstance(raw_input["query"], str):
        return raw_input["query"]
    if "intent" in raw_input and isinstance(raw_input["intent"], str):
        return raw_input["intent"]
    parts = [str(v) for v in raw_input.values() if isinstance(v, (str, int, float))]
    return " ".join(parts)[:200]

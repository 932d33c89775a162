"""Scripted-planner simulation harness.

Runs a task suite end-to-end against a fresh runtime in one of two modes:

* ``six_verb``   -- the full interaction loop with a scripted planner standing
  in for the LLM (candidate picks, parameter fills, preview confirmations).
* ``exact_id_baseline`` -- bypasses search/resolution entirely and supplies
  literal ids the script guessed, modeling a caller that must already know
  exact identifiers: a wrong guess fails with not_found and no recovery
  guidance, and writes re-execute on every retry.

Same fixtures, same tasks, same seed -> byte-identical report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..contract import NtcResponse, error_ntc
from ..errors import GatewayError, HandlerFailure, InvalidTask
from ..execution import ExecuteOutcome, derive_request_facts
from ..governance import DecisionKind
from ..invocation import InvocationContext
from ..protocol import PlannerCallback
from ..resolution import CandidateSet, Entity
from .config import DEFAULT_TASKS_PATH, GatewayConfig, load_config
from .runtime import GatewayRuntime

MODES = ("six_verb", "exact_id_baseline")
RECOVERABLE = ("handler_failure",)


@dataclass
class ScriptedTask:
    name: str
    tool: str
    caller_token: str
    input: dict[str, Any]
    planner: dict[str, Any] = field(default_factory=dict)
    faults: dict[str, Any] = field(default_factory=dict)
    approver: dict[str, Any] | None = None
    baseline: dict[str, Any] = field(default_factory=dict)
    expect: dict[str, str] = field(default_factory=dict)
    repeat: int = 1
    retry_on_failure: bool = False

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ScriptedTask":
        unknown = set(doc) - {
            "name", "tool", "caller_token", "input", "planner", "faults",
            "approver", "baseline", "expect", "repeat", "retry_on_failure",
        }
        if unknown:
            raise InvalidTask(f"task has unknown fields {sorted(unknown)}")
        for required in ("name", "tool", "caller_token", "input"):
            if required not in doc:
                raise InvalidTask(f"task missing required field {required!r}")
        return cls(
            name=doc["name"],
            tool=doc["tool"],
            caller_token=doc["caller_token"],
            input=dict(doc["input"]),
            planner=dict(doc.get("planner", {})),
            faults=dict(doc.get("faults", {})),
            approver=dict(doc["approver"]) if doc.get("approver") else None,
            baseline=dict(doc.get("baseline", {})),
            expect=dict(doc.get("expect", {})),
            repeat=int(doc.get("repeat", 1)),
            retry_on_failure=bool(doc.get("retry_on_failure", False)),
        )


class ScriptedPlanner(PlannerCallback):
    """Deterministic stand-in for the LLM's decision points."""

    def __init__(self, script: Mapping[str, Any]) -> None:
        self._script = dict(script)
        self.disambiguations = 0

    def choose_candidate(self, candidates: CandidateSet) -> Entity | None:
        self.disambiguations += 1
        choose_id = self._script.get("choose_id")
        if choose_id is None:
            return candidates.top().entity
        for candidate in candidates.candidates:
            if candidate.entity.id == choose_id:
                return candidate.entity
        return None

    def supply_params(self, entity: Entity | None) -> dict[str, Any] | None:
        params = self._script.get("params")
        return dict(params) if params is not None else None

    def confirm_preview(self, diff) -> bool:
        return bool(self._script.get("confirm", True))


class FaultInjector:
    """Swaps a tool's execute handler for a faulty wrapper, restoring after."""

    def __init__(self, runtime: GatewayRuntime, tenant: str, tool_name: str, faults: Mapping[str, Any]) -> None:
        self._runtime = runtime
        self._tenant = tenant
        self._tool = tool_name
        self._faults = dict(faults)
        self._original = None

    def __enter__(self) -> "FaultInjector":
        if not self._faults:
            return self
        registered = self._runtime.registry.get(self._tenant, self._tool)
        self._original = registered
        handlers = dict(registered.handlers)
        inner = handlers.get("execute_action")
        if inner is None:
            raise InvalidTask(f"cannot inject execute faults into {self._tool!r}")
        handlers["execute_action"] = self._wrap(inner)
        self._runtime.registry.register_tool(
            self._tenant, registered.descriptor, handlers, replace=True
        )
        return self

    def __exit__(self, *exc_info) -> None:
        if self._original is not None:
            self._runtime.registry.register_tool(
                self._tenant, self._original.descriptor, self._original.handlers, replace=True
            )

    def _wrap(self, inner):
        remaining_failures = int(self._faults.get("fail_execute_times", 0))
        tamper = self._faults.get("tamper")
        state = {"failures_left": remaining_failures}

        def wrapped(ctx: InvocationContext, params: dict[str, Any], store) -> ExecuteOutcome:
            if state["failures_left"] > 0:
                state["failures_left"] -= 1
                raise HandlerFailure("injected transient backend failure")
            outcome = inner(ctx, params, store)
            if tamper and outcome.affected:
                # mutate persisted state between E and V so verification diverges
                entity_type, entity_id = outcome.affected[0]
                entity = store.get(entity_type, entity_id)
                if entity is not None:
                    entity.attributes[tamper["field"]] = tamper["value"]
                    store.upsert(entity)
            return outcome

        return wrapped


@dataclass
class TaskRunRecord:
    name: str
    outcome: str
    ok: bool
    expected: str
    met_expectation: bool
    tool_calls: int
    recoveries_attempted: int
    recoveries_succeeded: int
    approvals_triggered: int
    idempotent_replays: int
    disambiguations: int
    answer: str

    def to_dict(self) -> dict[str, Any]:
        return self.__dict__.copy()


def load_tasks(path: str | Path | None = None) -> tuple[int, list[ScriptedTask]]:
    doc = json.loads(Path(path or DEFAULT_TASKS_PATH).read_text(encoding="utf-8"))
    tasks = [ScriptedTask.from_dict(t) for t in doc.get("tasks", [])]
    if not tasks:
        raise InvalidTask("task file contains no tasks")
    return int(doc.get("seed", 0)), tasks


def run_simulation(
    tasks: list[ScriptedTask],
    mode: str,
    *,
    seed: int = 0,
    config: GatewayConfig | None = None,
) -> dict[str, Any]:
    """Run the suite on a fresh runtime; returns the report document."""
    if mode not in MODES:
        raise InvalidTask(f"unknown mode {mode!r} (choose from {MODES})")
    runtime = GatewayRuntime(config or load_config(), clock=_SimClock())

    records: list[TaskRunRecord] = []
    for index, task in enumerate(tasks):
        records.append(_run_task(runtime, task, mode, seed, index))

    totals = {
        "tasks": len(records),
        "succeeded": sum(1 for r in records if r.ok),
        "tool_calls": sum(r.tool_calls for r in records),
        "recoveries_attempted": sum(r.recoveries_attempted for r in records),
        "recoveries_succeeded": sum(r.recoveries_succeeded for r in records),
        "approvals_triggered": sum(r.approvals_triggered for r in records),
        "idempotent_replays": sum(r.idempotent_replays for r in records),
        "expectations_met": sum(1 for r in records if r.met_expectation),
    }
    rates = {
        "success_rate": round(totals["succeeded"] / totals["tasks"], 4),
        "recovery_rate": (
            round(totals["recoveries_succeeded"] / totals["recoveries_attempted"], 4)
            if totals["recoveries_attempted"]
            else None
        ),
    }
    return {
        "mode": mode,
        "seed": seed,
        "tasks": [r.to_dict() for r in records],
        "totals": totals,
        "rates": rates,
    }


class _SimClock:
    """Deterministic monotone clock so reports carry no wall-time noise."""

    def __init__(self) -> None:
        self._now = 1_700_000_000.0

    def __call__(self) -> float:
        self._now += 1.0
        return self._now


def _caller(runtime: GatewayRuntime, token: str):
    principal = runtime.authenticate(token)
    if principal is None:
        raise InvalidTask(f"unknown caller token {token!r}")
    return principal


def _settle_approval(runtime: GatewayRuntime, task: ScriptedTask, response: NtcResponse) -> tuple[str, NtcResponse]:
    """Apply the scripted human decision to a suspended invocation."""
    if task.approver is None:
        return "suspended", response
    approver = _caller(runtime, task.approver["token"])
    pending_id = response.pending_approval_id
    assert pending_id is not None
    snapshot = runtime.approvals.decide(
        pending_id,
        approver,
        task.approver.get("verdict", "approve"),
        task.approver.get("rationale", ""),
    )
    if snapshot.status == "approved":
        result = snapshot.result or {}
        return "approved_and_resumed", _wire_to_ntc(result)
    return "rejected", _wire_to_ntc(snapshot.result or {})


def _wire_to_ntc(doc: Mapping[str, Any]) -> NtcResponse:
    if not doc:
        return error_ntc("unknown", "no result recorded")
    return NtcResponse(
        ok=doc.get("ok", False),
        answer=doc.get("answer", ""),
        confidence=doc.get("confidence", 0.0),
        result_refs=list(doc.get("result_refs", [])),
        requires_confirmation=doc.get("requires_confirmation", False),
        evidence=list(doc.get("evidence", [])),
        next_actions=list(doc.get("next_actions", [])),
        pending_approval_id=doc.get("pending_approval_id"),
        error=doc.get("error"),
    )


def _classify(response: NtcResponse) -> str:
    if response.ok and response.pending_approval_id:
        return "suspended"
    if response.ok:
        return "ok"
    return (response.error or {}).get("cause", "error")


def _run_task(runtime: GatewayRuntime, task: ScriptedTask, mode: str, seed: int, index: int) -> TaskRunRecord:
    caller = _caller(runtime, task.caller_token)
    counters = {"tool_calls": 0, "recov_att": 0, "recov_ok": 0, "approvals": 0, "replays": 0}
    planner = ScriptedPlanner(task.planner)
    outcome = "error"
    answer = ""

    attempts = 0
    max_attempts = task.repeat + (1 if task.retry_on_failure else 0)
    response: NtcResponse | None = None
    with FaultInjector(runtime, caller.tenant, task.tool, task.faults if mode == "six_verb" else {}):
        while attempts < max_attempts:
            attempts += 1
            invocation_id = f"sim-{seed}-{mode}-{index}-{attempts}"
            counters["tool_calls"] += 1
            if mode == "six_verb":
                result = runtime.loop.run(
                    caller, task.tool, task.input, planner, invocation_id=invocation_id
                )
                response = result.response
            else:
                response = _run_baseline(runtime, caller, task, invocation_id)
            outcome = _classify(response)

            if outcome == "suspended":
                counters["approvals"] += 1
                outcome, response = _settle_approval(runtime, task, response)
            if any(e.get("type") == "idempotent_replay" for e in response.evidence):
                counters["replays"] += 1

            if outcome in RECOVERABLE and task.retry_on_failure and attempts < max_attempts:
                # the recovery payload told the planner to retry once
                counters["recov_att"] += 1
                continue
            if counters["recov_att"] > counters["recov_ok"] and response.ok:
                counters["recov_ok"] += 1
            if attempts >= task.repeat and outcome not in RECOVERABLE:
                break
            if attempts >= max_attempts:
                break

    assert response is not None
    answer = response.answer
    expected = task.expect.get("six_verb" if mode == "six_verb" else "baseline", "")
    return TaskRunRecord(
        name=task.name,
        outcome=outcome,
        ok=response.ok and outcome in ("ok", "approved_and_resumed"),
        expected=expected,
        met_expectation=(outcome == expected) if expected else True,
        tool_calls=counters["tool_calls"],
        recoveries_attempted=counters["recov_att"],
        recoveries_succeeded=counters["recov_ok"],
        approvals_triggered=counters["approvals"],
        idempotent_replays=counters["replays"],
        disambiguations=planner.disambiguations,
        answer=answer,
    )


def _run_baseline(
    runtime: GatewayRuntime,
    caller,
    task: ScriptedTask,
    invocation_id: str,
) -> NtcResponse:
    """The exact-id paradigm: no search, no resolution, no recovery guidance.

    Reads become a lookup by guessed id; writes run the governance pipeline
    (enterprise controls don't vanish with the paradigm) and then call the
    handler directly -- no preview, no verify, no idempotency.
    """
    spec = task.baseline
    entity_type = spec.get("entity_type", "")
    id_guess = spec.get("id_guess", "")
    entity = runtime.store.get(entity_type, id_guess) if entity_type else None
    tool = runtime.registry.get(caller.tenant, task.tool)

    if entity is None:
        # Assumption-1 failure mode: an opaque miss with no candidates and no hint
        return error_ntc("not_found", f"{entity_type} {id_guess!r} does not exist")

    if tool.descriptor.mode == "read":
        return NtcResponse(
            ok=True,
            answer=f"{entity.title}",
            confidence=1.0,
            result_refs=[{**entity.ref(), "actions": []}],
        )

    raw_input = dict(task.input)
    id_field = spec.get("id_field")
    if id_field:
        raw_input[id_field] = id_guess

    ctx = InvocationContext.start(tool, caller, task.name, raw_input, invocation_id=invocation_id)
    ctx.thresholds = runtime.loop.thresholds
    ctx.params = dict(raw_input)
    ctx.resolved_entities = [entity]
    ctx.target_scopes = [entity.scope_path]
    ctx.request_facts = derive_request_facts(ctx, runtime.store)

    decision = runtime.pipeline.evaluate(ctx)
    if decision.kind is DecisionKind.APPROVAL_REQUIRED:
        assert decision.risk is not None
        _, response = runtime.approvals.submit_for_approval(ctx, decision.risk)
        return response
    if not decision.proceed:
        return error_ntc(decision.kind.value, decision.reason or decision.kind.value)

    handler = ctx.handlers.get("execute_action")
    if handler is None:
        return error_ntc("verb_unsupported", f"{task.tool} cannot execute")
    try:
        with runtime.store.transaction():
            outcome = handler(ctx, dict(ctx.params), runtime.store)
    except GatewayError as exc:
        return error_ntc(exc.code, exc.message)
    runtime.audit.record(
        kind="execute",
        invocation_id=ctx.invocation_id,
        tool=tool.descriptor.name,
        caller=caller.to_dict(),
        verb="execute_action",
        stage_trace=list(ctx.stage_trace) + ["execute"],
        params=dict(ctx.params),
        decision="executed_baseline",
    )
    return NtcResponse(
        ok=True,
        answer=outcome.answer,
        confidence=1.0,
        result_refs=outcome.result_refs,
        evidence=outcome.evidence,
    )

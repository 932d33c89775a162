"""One in-flight tool call: everything the pipeline and verbs operate on."""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from typing import Any

from .governance import Principal, RequestFacts, RiskAssessment, ScopePath
from .registry import RegisteredTool, ToolDescriptor


def new_invocation_id() -> str:
    return uuid.uuid4().hex[:16]


@dataclass
class InvocationContext:
    invocation_id: str
    tool: ToolDescriptor
    handlers: dict[str, Any]
    caller: Principal
    intent: str
    raw_input: dict[str, Any]
    params: dict[str, Any] = field(default_factory=dict)
    resolved_entities: list[Any] = field(default_factory=list)  # resolution.Entity
    target_scopes: list[ScopePath] = field(default_factory=list)
    request_facts: RequestFacts = field(default_factory=RequestFacts)
    state: str = "init"
    stage_trace: list[str] = field(default_factory=list)
    current_verb: str = "auto"
    idempotency_key: str | None = None
    risk: RiskAssessment | None = None
    decision: Any = None
    candidate_set: Any = None
    thresholds: Any = None  # resolution.ResolutionThresholds

    @classmethod
    def start(
        cls,
        tool: RegisteredTool,
        caller: Principal,
        intent: str,
        raw_input: dict[str, Any],
        *,
        invocation_id: str | None = None,
        verb: str = "auto",
    ) -> "InvocationContext":
        return cls(
            invocation_id=invocation_id or new_invocation_id(),
            tool=tool.descriptor,
            handlers=dict(tool.handlers),
            caller=caller,
            intent=intent,
            raw_input=dict(raw_input),
            current_verb=verb,
        )

    def snapshot_payload(self) -> dict[str, Any]:
        """Serializable view for approval suspension; enough to resume exactly."""
        return {
            "invocation_id": self.invocation_id,
            "tool": self.tool.name,
            "tenant": self.tool.tenant,
            "caller": self.caller.to_dict(),
            "intent": self.intent,
            "raw_input": dict(self.raw_input),
            "params": dict(self.params),
            "resolved_refs": [e.ref() for e in self.resolved_entities],
            "target_scopes": [s.to_dict() for s in self.target_scopes],
            "request_facts": self.request_facts.to_dict(),
            "state": self.state,
            "stage_trace": list(self.stage_trace),
            "idempotency_key": self.idempotency_key,
            "risk": self.risk.to_dict() if self.risk else None,
        }

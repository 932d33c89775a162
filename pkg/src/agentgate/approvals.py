"""Human approval gate: suspend, decide, resume.

A gated invocation is serialized into a snapshot (full context plus a digest
of its parameters), the caller gets a non-blocking "pending" response, and a
designated approver later approves or rejects. Approval resumes execution
from the exact suspension point with byte-identical parameters; rejection
returns the approver's rationale. Snapshots are journaled so suspension
survives process restarts.
"""

from __future__ import annotations

import statistics
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .audit import AuditLog, Clock
from .contract import NtcResponse, error_ntc, make_ntc
from .errors import (
    AlreadyDecided,
    ApproverNotAuthorized,
    DriftDetected,
    DuplicateSubmission,
    EmptyRationale,
    NotApproved,
    NotPending,
    SnapshotCorrupt,
)
from .execution import params_digest
from .governance import Principal, RiskAssessment
from .invocation import InvocationContext
from .journal import AppendOnlyJournal

DEFAULT_SNAPSHOT_EXPIRY = 7 * 24 * 3600.0  # seconds
DEFAULT_ESTIMATED_WAIT = 600.0  # seconds, used until history accumulates
WAIT_HISTORY = 20

STATUSES = ("pending", "approved", "rejected", "expired")


@dataclass
class ApprovalSnapshot:
    pending_approval_id: str
    context: dict[str, Any]  # serialized InvocationContext
    requester: dict[str, Any]
    approver_role: str
    tenant: str
    created_at: float
    params_digest: str
    status: str = "pending"
    decision: dict[str, Any] | None = None
    result: dict[str, Any] | None = None  # NTC wire of the resumed/denied outcome
    resumed_at: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "pending_approval_id": self.pending_approval_id,
            "context": self.context,
            "requester": self.requester,
            "approver_role": self.approver_role,
            "tenant": self.tenant,
            "created_at": self.created_at,
            "params_digest": self.params_digest,
            "status": self.status,
            "decision": self.decision,
            "result": self.result,
            "resumed_at": self.resumed_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ApprovalSnapshot":
        try:
            return cls(
                pending_approval_id=data["pending_approval_id"],
                context=dict(data["context"]),
                requester=dict(data["requester"]),
                approver_role=data["approver_role"],
                tenant=data["tenant"],
                created_at=data["created_at"],
                params_digest=data["params_digest"],
                status=data.get("status", "pending"),
                decision=data.get("decision"),
                result=data.get("result"),
                resumed_at=data.get("resumed_at"),
            )
        except KeyError as exc:
            raise SnapshotCorrupt(f"snapshot record missing field {exc}") from exc

    def summary(self) -> dict[str, Any]:
        risk = self.context.get("risk") or {}
        return {
            "pending_approval_id": self.pending_approval_id,
            "tool": self.context.get("tool"),
            "requester": self.requester.get("user_id"),
            "tenant": self.tenant,
            "status": self.status,
            "created_at": self.created_at,
            "risk": risk,
            "final_risk_level": risk.get("final_level"),
            "triggered_factors": [f for f in risk.get("factors", []) if f.get("triggered")],
            "affected_count": self.context.get("request_facts", {}).get("affected_count"),
            "params": self.context.get("params", {}),
            "intent": self.context.get("intent", ""),
            "decision": self.decision,
            "result": self.result,
        }


ResumeRunner = Callable[[ApprovalSnapshot], NtcResponse]
EventPublisher = Callable[[dict[str, Any]], None]


class ApprovalService:
    """Snapshot store plus decision state machine.

    Decisions are atomic check-and-set on snapshot status: exactly one verdict
    wins a race and later attempts see AlreadyDecided. Nothing global is held
    while snapshots sit pending, so unrelated traffic never blocks.
    """

    def __init__(
        self,
        journal_path: str | None,
        audit: AuditLog,
        publish: EventPublisher,
        *,
        approver_role_for: Callable[[str], str],
        clock: Clock = time.time,
        expiry: float = DEFAULT_SNAPSHOT_EXPIRY,
        default_wait: float = DEFAULT_ESTIMATED_WAIT,
    ) -> None:
        self._journal = AppendOnlyJournal(journal_path)
        self._audit = audit
        self._publish = publish
        self._approver_role_for = approver_role_for
        self._clock = clock
        self._expiry = expiry
        self._default_wait = default_wait
        self._lock = threading.Lock()
        self._snapshots: dict[str, ApprovalSnapshot] = {}
        self._by_invocation: dict[str, str] = {}
        self._decision_latencies: list[float] = []
        self.resume_runner: ResumeRunner | None = None
        self._load()

    def _load(self) -> None:
        for record in self._journal.records():
            snapshot = ApprovalSnapshot.from_dict(record)
            self._snapshots[snapshot.pending_approval_id] = snapshot
            invocation_id = snapshot.context.get("invocation_id")
            if invocation_id:
                self._by_invocation[invocation_id] = snapshot.pending_approval_id
            if snapshot.decision and snapshot.decision.get("decided_at") is not None:
                self._decision_latencies.append(
                    snapshot.decision["decided_at"] - snapshot.created_at
                )

    def _persist(self, snapshot: ApprovalSnapshot) -> None:
        self._journal.append(snapshot.to_dict())

    def _event(self, kind: str, snapshot: ApprovalSnapshot, **payload: Any) -> None:
        self._publish(
            {
                "kind": kind,
                "pending_approval_id": snapshot.pending_approval_id,
                "tenant": snapshot.tenant,
                "ts": self._clock(),
                "payload": {"tool": snapshot.context.get("tool"), **payload},
            }
        )

    # -- suspension

    def estimated_wait(self) -> float:
        with self._lock:
            history = self._decision_latencies[-WAIT_HISTORY:]
        if len(history) < 3:
            return self._default_wait
        return float(statistics.median(history))

    def submit_for_approval(
        self,
        ctx: InvocationContext,
        risk: RiskAssessment,
        extra_evidence: list[dict[str, Any]] | None = None,
    ) -> tuple[str, NtcResponse]:
        payload = ctx.snapshot_payload()
        with self._lock:
            existing_id = self._by_invocation.get(ctx.invocation_id)
            if existing_id is not None and self._snapshots[existing_id].status == "pending":
                raise DuplicateSubmission(
                    f"invocation {ctx.invocation_id} already awaits approval as {existing_id}"
                )
            snapshot = ApprovalSnapshot(
                pending_approval_id=uuid.uuid4().hex[:12],
                context=payload,
                requester=ctx.caller.to_dict(),
                approver_role=self._approver_role_for(ctx.tool.permission_policy.capability),
                tenant=ctx.tool.tenant,
                created_at=self._clock(),
                params_digest=params_digest(payload["params"]),
            )
            self._snapshots[snapshot.pending_approval_id] = snapshot
            self._by_invocation[ctx.invocation_id] = snapshot.pending_approval_id
            self._persist(snapshot)

        self._audit.record(
            kind="approval_created",
            invocation_id=ctx.invocation_id,
            tool=ctx.tool.name,
            caller=ctx.caller.to_dict(),
            verb=ctx.current_verb,
            stage_trace=list(ctx.stage_trace),
            decision="approval_required",
            pending_approval_id=snapshot.pending_approval_id,
            risk=risk.to_dict(),
        )
        self._event(
            "created",
            snapshot,
            risk=risk.to_dict(),
            requester=ctx.caller.user_id,
            # full row summary so an event-driven inbox needs no follow-up fetch
            summary=snapshot.summary(),
        )

        wait = self.estimated_wait()
        response = make_ntc(
            ok=True,
            answer=(
                f"Approval required before {ctx.tool.name} can execute "
                f"(risk {risk.final_level_name}). Pending as {snapshot.pending_approval_id}."
            ),
            refs=[e.ref() for e in ctx.resolved_entities],
            confidence=1.0,
            evidence=list(extra_evidence or [])
            + [
                {"type": "risk_assessment", "detail": risk.to_dict()},
                {"type": "estimated_wait", "detail": {"seconds": wait}},
            ],
            requires_confirmation=True,
            pending_approval_id=snapshot.pending_approval_id,
        )
        return snapshot.pending_approval_id, response

    # -- decisions

    def _get(self, pending_id: str) -> ApprovalSnapshot:
        snapshot = self._snapshots.get(pending_id)
        if snapshot is None:
            raise NotPending(f"no approval snapshot {pending_id!r}")
        return snapshot

    def expire_due(self) -> list[str]:
        now = self._clock()
        expired: list[str] = []
        with self._lock:
            for snapshot in self._snapshots.values():
                if snapshot.status == "pending" and now - snapshot.created_at > self._expiry:
                    snapshot.status = "expired"
                    snapshot.result = error_ntc(
                        "approval_expired",
                        f"Approval {snapshot.pending_approval_id} expired before a decision was made.",
                        suggestion="resubmit the request if it is still needed",
                    ).to_wire()
                    self._persist(snapshot)
                    expired.append(snapshot.pending_approval_id)
        for pending_id in expired:
            snapshot = self._snapshots[pending_id]
            self._event(
                "expired",
                snapshot,
                result_answer=snapshot.result["answer"] if snapshot.result else None,
            )
            self._audit.record(
                kind="approval_expired",
                invocation_id=snapshot.context.get("invocation_id"),
                tool=snapshot.context.get("tool"),
                pending_approval_id=pending_id,
                decision="expired",
            )
        return expired

    def decide(
        self,
        pending_id: str,
        approver: Principal,
        verdict: str,
        rationale: str = "",
    ) -> ApprovalSnapshot:
        if verdict not in ("approve", "reject"):
            raise NotPending(f"unknown verdict {verdict!r}")
        self.expire_due()

        with self._lock:
            snapshot = self._get(pending_id)
            if snapshot.status != "pending":
                if snapshot.decision is not None:
                    raise AlreadyDecided(
                        f"approval {pending_id} already {snapshot.status}",
                        decision=dict(snapshot.decision),
                    )
                raise NotPending(f"approval {pending_id} is {snapshot.status}")
            if approver.tenant != snapshot.tenant:
                raise ApproverNotAuthorized("approver belongs to a different tenant")
            if approver.role != snapshot.approver_role:
                raise ApproverNotAuthorized(
                    f"role {approver.role!r} is not the designated approver role "
                    f"{snapshot.approver_role!r}"
                )
            if approver.user_id == snapshot.requester.get("user_id"):
                raise ApproverNotAuthorized("requesters may not approve their own requests")
            if verdict == "reject" and not rationale.strip():
                raise EmptyRationale("rejection requires a nonempty rationale")

            decided_at = self._clock()
            snapshot.status = "approved" if verdict == "approve" else "rejected"
            snapshot.decision = {
                "approver": approver.user_id,
                "verdict": verdict,
                "rationale": rationale,
                "decided_at": decided_at,
            }
            if verdict == "reject":
                snapshot.result = error_ntc(
                    "approval_rejected",
                    f"Request was rejected by {approver.user_id}: {rationale}",
                    suggestion="revise the request per the approver's rationale",
                ).to_wire()
            self._decision_latencies.append(decided_at - snapshot.created_at)
            self._persist(snapshot)

        self._audit.record(
            kind="approval_decided",
            invocation_id=snapshot.context.get("invocation_id"),
            tool=snapshot.context.get("tool"),
            caller=approver.to_dict(),
            pending_approval_id=pending_id,
            decision=snapshot.status,
            rationale=rationale,
        )
        self._event(
            "approved" if verdict == "approve" else "rejected",
            snapshot,
            approver=approver.user_id,
            rationale=rationale,
            result_answer=snapshot.result["answer"] if snapshot.result else None,
            ok=snapshot.result["ok"] if snapshot.result else None,
        )
        if verdict == "approve":
            # immediate in-process scheduling: the decided verdict is already
            # durable, so a resume crash cannot lose the decision
            self.resume_execution(pending_id)
        return snapshot

    # -- resume

    def resume_execution(self, pending_id: str) -> NtcResponse:
        snapshot = self._get(pending_id)
        if snapshot.status != "approved":
            raise NotApproved(f"approval {pending_id} is {snapshot.status}, not approved")
        if snapshot.resumed_at is not None and snapshot.result is not None:
            return _ntc_from_wire(snapshot.result)
        if self.resume_runner is None:
            raise SnapshotCorrupt("no resume runner wired")

        stored = snapshot.params_digest
        if params_digest(snapshot.context.get("params", {})) != stored:
            self._audit.record(
                kind="approval_drift",
                pending_approval_id=pending_id,
                tool=snapshot.context.get("tool"),
                decision="drift_detected",
            )
            raise DriftDetected(
                f"snapshot {pending_id} parameters no longer match the suspension-time digest"
            )

        response = self.resume_runner(snapshot)
        with self._lock:
            snapshot.result = response.to_wire()
            snapshot.resumed_at = self._clock()
            self._persist(snapshot)
        self._audit.record(
            kind="approval_resumed",
            invocation_id=snapshot.context.get("invocation_id"),
            tool=snapshot.context.get("tool"),
            pending_approval_id=pending_id,
            decision="resumed",
        )
        self._event("resumed", snapshot, result_answer=response.answer, ok=response.ok)
        return response

    # -- queries

    def get_snapshot(self, pending_id: str) -> ApprovalSnapshot:
        return self._get(pending_id)

    def list_pending(
        self,
        tenant: str,
        approver: Principal,
        status: str | None = "pending",
    ) -> list[dict[str, Any]]:
        """Snapshots awaiting this approver's role, oldest first."""
        self.expire_due()
        with self._lock:
            rows = [
                s for s in self._snapshots.values()
                if s.tenant == tenant
                and (status is None or s.status == status)
                and (status != "pending" or s.approver_role == approver.role)
            ]
        rows.sort(key=lambda s: (s.created_at, s.pending_approval_id))
        return [s.summary() for s in rows]


def _ntc_from_wire(doc: Mapping[str, Any]) -> NtcResponse:
    return make_ntc(
        ok=doc["ok"],
        answer=doc.get("answer", ""),
        refs=doc.get("result_refs", []),
        confidence=doc.get("confidence", 0.0),
        evidence=doc.get("evidence", []),
        next_actions=doc.get("next_actions", []),
        requires_confirmation=doc.get("requires_confirmation", False),
        pending_approval_id=doc.get("pending_approval_id"),
        error=doc.get("error"),
    )

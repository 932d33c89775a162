from __future__ import annotations

import threading

import pytest

from agentgate.errors import (
    AlreadyDecided,
    ApproverNotAuthorized,
    DriftDetected,
    DuplicateSubmission,
    EmptyRationale,
    NotApproved,
    NotPending,
)

BULK_INPUT = {
    "store": "downtown branch",
    "category": "maintenance",
    "items": [f"Inspect extinguisher {i}" for i in range(12)],
}


def suspend(runtime, mgr, invocation_id="apr-1", items=None):
    payload = dict(BULK_INPUT)
    if items is not None:
        payload["items"] = items
    result = runtime.loop.run(mgr, "ticket.bulk_import", payload, invocation_id=invocation_id)
    assert result.outcome == "suspended"
    return result.response.pending_approval_id, result


def test_submit_returns_pending_response_and_event(runtime, mgr):
    pending_id, result = suspend(runtime, mgr)
    response = result.response
    assert response.requires_confirmation and response.pending_approval_id == pending_id
    kinds = [e["type"] for e in response.evidence]
    assert "risk_assessment" in kinds and "estimated_wait" in kinds and "preview" in kinds
    events = runtime.events.records()
    assert events[-1]["kind"] == "created"
    assert events[-1]["pending_approval_id"] == pending_id


def test_duplicate_submission_rejected(runtime, mgr):
    _, result = suspend(runtime, mgr)
    with pytest.raises(DuplicateSubmission):
        runtime.approvals.submit_for_approval(result.ctx, result.ctx.risk)


def test_approve_resumes_and_mutates_store(runtime, mgr, supervisor):
    pending_id, _ = suspend(runtime, mgr)
    before = len(runtime.store.by_type("ticket"))
    snapshot = runtime.approvals.decide(pending_id, supervisor, "approve", "capacity ok")
    assert snapshot.status == "approved"
    assert len(runtime.store.by_type("ticket")) == before + 12
    assert snapshot.result and snapshot.result["ok"]
    kinds = [e["kind"] for e in runtime.events.records()]
    assert kinds[-2:] == ["approved", "resumed"]


def test_reject_requires_rationale_and_leaves_store_unchanged(runtime, mgr, supervisor):
    pending_id, _ = suspend(runtime, mgr)
    with pytest.raises(EmptyRationale):
        runtime.approvals.decide(pending_id, supervisor, "reject", "   ")
    before = runtime.store.snapshot_hash()
    snapshot = runtime.approvals.decide(pending_id, supervisor, "reject", "budget freeze")
    assert snapshot.status == "rejected"
    assert runtime.store.snapshot_hash() == before
    assert "budget freeze" in snapshot.result["answer"]
    assert snapshot.result["error"]["cause"] == "approval_rejected"
    with pytest.raises(NotApproved):
        runtime.approvals.resume_execution(pending_id)


def test_second_decision_sees_already_decided(runtime, mgr, supervisor):
    pending_id, _ = suspend(runtime, mgr)
    runtime.approvals.decide(pending_id, supervisor, "approve", "ok")
    with pytest.raises(AlreadyDecided) as excinfo:
        runtime.approvals.decide(pending_id, supervisor, "reject", "changed my mind")
    assert excinfo.value.decision["verdict"] == "approve"


def test_wrong_role_and_self_approval_rejected(runtime, mgr, clerk):
    pending_id, _ = suspend(runtime, mgr)
    with pytest.raises(ApproverNotAuthorized):
        runtime.approvals.decide(pending_id, clerk, "approve", "")
    with pytest.raises(ApproverNotAuthorized):
        # requester's own role is not the designated one either way, so craft
        # a same-role principal with the requester's id
        from agentgate.governance import Principal, ScopePath

        impostor = Principal(
            user_id=mgr.user_id,
            tenant="tenant-a",
            role="ops_supervisor",
            scope=ScopePath("tenant-a", "brand-central"),
        )
        runtime.approvals.decide(pending_id, impostor, "approve", "")


def test_cross_tenant_approver_rejected(runtime, mgr):
    pending_id, _ = suspend(runtime, mgr)
    foreign = runtime.authenticate("token-tenantb")
    with pytest.raises(ApproverNotAuthorized):
        runtime.approvals.decide(pending_id, foreign, "approve", "")


def test_concurrent_approve_reject_single_winner(runtime, mgr, supervisor):
    pending_id, _ = suspend(runtime, mgr)
    outcomes: list[str] = []
    barrier = threading.Barrier(2)

    def act(verdict: str) -> None:
        barrier.wait()
        try:
            runtime.approvals.decide(pending_id, supervisor, verdict, "race")
            outcomes.append(f"won:{verdict}")
        except AlreadyDecided:
            outcomes.append("lost")

    threads = [threading.Thread(target=act, args=(v,)) for v in ("approve", "reject")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(o.split(":")[0] for o in outcomes) == ["lost", "won"]
    snapshot = runtime.approvals.get_snapshot(pending_id)
    assert snapshot.status in ("approved", "rejected")


def test_resume_detects_parameter_drift(runtime, mgr, supervisor):
    pending_id, _ = suspend(runtime, mgr)
    snapshot = runtime.approvals.get_snapshot(pending_id)
    snapshot.context["params"]["items"] = ["tampered item"]
    with pytest.raises(DriftDetected):
        runtime.approvals.decide(pending_id, supervisor, "approve", "ok")
    # the tampered snapshot never executed
    assert all(t.title != "tampered item" for t in runtime.store.by_type("ticket"))


def test_restart_preserves_pending_snapshot(make_runtime, tmp_path):
    runtime_a = make_runtime(data_dir=tmp_path)
    mgr = runtime_a.authenticate("token-mgr-downtown")
    pending_id, _ = suspend(runtime_a, mgr)

    runtime_b = make_runtime(data_dir=tmp_path)
    snapshot = runtime_b.approvals.get_snapshot(pending_id)
    assert snapshot.status == "pending"
    supervisor = runtime_b.authenticate("token-supervisor")
    decided = runtime_b.approvals.decide(pending_id, supervisor, "approve", "ok after restart")
    assert decided.status == "approved"
    assert decided.result["ok"]
    assert len(runtime_b.store.by_type("ticket")) == len(runtime_a.store.by_type("ticket")) + 12


def test_expiry_sweep(runtime, mgr, clock):
    pending_id, _ = suspend(runtime, mgr)
    clock.advance(runtime.config.snapshot_expiry + 1)
    expired = runtime.approvals.expire_due()
    assert pending_id in expired
    snapshot = runtime.approvals.get_snapshot(pending_id)
    assert snapshot.status == "expired"
    assert any(e["kind"] == "expired" for e in runtime.events.records())
    with pytest.raises(NotPending):
        runtime.approvals.decide(
            pending_id, runtime.authenticate("token-supervisor"), "approve", ""
        )


def test_list_pending_filters_and_orders(runtime, mgr, supervisor, clock):
    first, _ = suspend(runtime, mgr, invocation_id="apr-a")
    clock.advance(60)
    second, _ = suspend(
        runtime, mgr, invocation_id="apr-b", items=[f"Replace hose {i}" for i in range(11)]
    )
    rows = runtime.approvals.list_pending("tenant-a", supervisor)
    assert [r["pending_approval_id"] for r in rows] == [first, second]

    director = runtime.authenticate("token-director")
    assert runtime.approvals.list_pending("tenant-a", director) == []

    runtime.approvals.decide(second, supervisor, "reject", "dup")
    remaining = runtime.approvals.list_pending("tenant-a", supervisor)
    assert [r["pending_approval_id"] for r in remaining] == [first]


def test_pending_gate_does_not_block_other_traffic(runtime, mgr):
    suspend(runtime, mgr)
    result = runtime.loop.run(mgr, "ticket.search", {"query": "downtown maintenance tickets"})
    assert result.response.ok


def test_estimated_wait_uses_decision_history(runtime, mgr, supervisor, clock):
    assert runtime.approvals.estimated_wait() == runtime.config.default_wait
    for i in range(3):
        pending_id, _ = suspend(
            runtime, mgr, invocation_id=f"apr-wait-{i}",
            items=[f"Wait probe {i} item {j}" for j in range(11)],
        )
        clock.advance(100)
        runtime.approvals.decide(pending_id, supervisor, "reject", "history")
    assert runtime.approvals.estimated_wait() == pytest.approx(100.0, abs=2.0)

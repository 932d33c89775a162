"""Acceptance suite: one test per release criterion, pass/fail line printed.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Each test pins its tolerance and, where stated, its runtime budget.
The console reconciliation criterion lives in the frontend's vitest suite
(frontend/tests), since it exercises the TypeScript client.
"""

from __future__ import annotations

import itertools
import json
import random
import threading
import time
from copy import deepcopy

import pytest

from agentgate.contract import CalibrationTracker, compute_ece
from agentgate.errors import IllegalTransition, NoMatch
from agentgate.gateway.config import load_config
from agentgate.gateway.runtime import GatewayRuntime
from agentgate.gateway.simulate import load_tasks, run_simulation
from agentgate.governance import (
    Principal,
    RequestFacts,
    ScopePath,
    assess_risk,
    scope_contains,
)
from agentgate.invocation import InvocationContext
from agentgate.protocol import ProtocolState, Verb, transition
from agentgate.registry import PermissionPolicy, ToolDescriptor
from agentgate.resolution import (
    Candidate,
    CandidateSet,
    Entity,
    EntityStore,
    ResolutionThresholds,
    resolve_candidates,
    semantic_search,
)

GOLDEN_DIR = __file__.rsplit("/", 1)[0] + "/golden"


def _pass(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


# --- 1. FSM completeness ---------------------------------------------------------

def test_acceptance_fsm_completeness():
    started = time.perf_counter()
    states = [s.value for s in ProtocolState]
    verbs = [v.value for v in Verb]
    definition = {
        ("init", "semantic_search"): "candidates",
        ("candidates", "resolve_candidates"): "resolved",
        ("resolved", "preview_action"): "previewed",
        ("resolved", "execute_action"): "executed",
        ("previewed", "execute_action"): "executed",
        ("executed", "verify_result"): "verified",
        ("error", "recover_from_error"): "resolved",
    }
    checked = 0
    for state, verb in itertools.product(states, verbs):
        checked += 1
        if verb == "failure":
            assert transition(state, verb, "write") is ProtocolState.ERROR
        elif (state, verb) in definition and state != "verified":
            assert transition(state, verb, "write").value == definition[(state, verb)]
        else:
            with pytest.raises(IllegalTransition):
                transition(state, verb, "write")
    assert checked == 49
    assert transition("error", "recover_from_error", "write") is ProtocolState.RESOLVED
    for state in states:
        if state == "verified":
            continue
        outgoing = [v for v in verbs if v != "failure" and (state, v) in definition]
        assert outgoing or state == "verified", f"{state} has no caller exit"
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"FSM enumeration took {elapsed:.3f}s"
    _pass("FSM completeness: 7x7 enumeration matches the transition definition")


# --- 2. Golden NTC fixtures --------------------------------------------------------

def _fresh_runtime() -> GatewayRuntime:
    return GatewayRuntime(load_config())


def _golden(name: str) -> dict:
    with open(f"{GOLDEN_DIR}/{name}", encoding="utf-8") as fh:
        return json.load(fh)


def test_acceptance_golden_fixtures():
    started = time.perf_counter()
    search_golden = _golden("ticket_search_roundtrip.json")
    create_golden = _golden("ticket_create_roundtrip.json")

    def run_roundtrips() -> tuple[str, str, str]:
        runtime = _fresh_runtime()
        mgr = runtime.authenticate("token-mgr-downtown")
        search = runtime.handle_invoke(mgr, search_golden["request"])
        preview = runtime.handle_invoke(mgr, create_golden["preview_request"])
        execute = runtime.handle_invoke(mgr, create_golden["execute_request"])
        assert search == search_golden["response"]
        assert preview == create_golden["preview_response"]
        assert execute == create_golden["execute_response"]
        dump = lambda doc: json.dumps(doc, separators=(",", ":"))
        return dump(search), dump(preview), dump(execute)

    first = run_roundtrips()
    second = run_roundtrips()
    assert first == second, "golden round-trips are not byte-stable across runs"
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"golden round-trips took {elapsed:.3f}s"
    _pass("golden fixtures: search + preview/execute reproduce every pinned field")


# --- 3. Risk formula oracle ---------------------------------------------------------

def test_acceptance_risk_formula_oracle():
    started = time.perf_counter()

    def facts(bits):
        return RequestFacts(
            affected_count=25 if bits[0] else 2,
            cross_brand=bool(bits[1]),
            overwrites_published=bool(bits[2]),
            batch_size=8 if bits[3] else 1,
            irreversible=bool(bits[4]),
            single_entity=bool(bits[5]),
            same_store_only=bool(bits[6]),
        )

    def brute(bits, base, waived):
        delta = sum(
            (
                1 if bits[0] else 0,
                1 if bits[1] and not waived else 0,
                1 if bits[2] else 0,
                1 if bits[3] else 0,
                1 if bits[4] else 0,
                -1 if bits[5] else 0,
                -1 if bits[6] else 0,
            )
        )
        return max(0, min(3, base + delta))

    def tool(base, flag=False):
        return ToolDescriptor(
            name="x.y", mode="write", tenant="tenant-a",
            permission_policy=PermissionPolicy(capability="x"),
            risk_level=base, approval_required=flag,
            idempotency_key_fields=("k",),
            supported_verbs=("semantic_search", "execute_action"),
        )

    plain = Principal("u", "tenant-a", "r", ScopePath("tenant-a"))
    waiver = Principal("u", "tenant-a", "r", ScopePath("tenant-a"), frozenset({"cross_brand"}))

    cases = 0
    for base in range(4):
        for bits in itertools.product((0, 1), repeat=7):
            cases += 1
            got = assess_risk(tool(base), facts(bits), plain)
            assert got.final_level == brute(bits, base, waived=False)
            assert got.requires_approval == (got.final_level >= 2)

            waived = assess_risk(tool(base), facts(bits), waiver)
            assert waived.final_level == brute(bits, base, waived=True)
            flag_forced = assess_risk(tool(base, flag=True), facts(bits), plain)
            assert flag_forced.requires_approval
    assert cases == 512
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"risk oracle took {elapsed:.3f}s"
    _pass("risk formula: 512 cases match brute-force clamp; waiver flips one factor")


# --- 4. Cross-tenant totality ---------------------------------------------------------

def test_acceptance_cross_tenant_totality(runtime):
    rng = random.Random(42)
    executions = {"count": 0}

    def counting_handler(ctx, params, store):
        executions["count"] += 1
        raise AssertionError("handler must never run")

    descriptor = ToolDescriptor(
        name="probe.write", mode="write", tenant="tenant-a",
        permission_policy=PermissionPolicy(capability="probe", object_scope="store"),
        idempotency_key_fields=("k",),
        supported_verbs=("semantic_search", "execute_action"),
    )
    runtime.matrix.grant("prober", "probe.write")
    registered = type("R", (), {"descriptor": descriptor, "handlers": {"execute_action": counting_handler}})()

    blocked = 0
    for i in range(1000):
        caller = Principal(
            user_id=f"u{i}", tenant="tenant-a", role="prober",
            scope=ScopePath("tenant-a", rng.choice(["brand-central", "brand-north", None])),
        )
        foreign_tenant = rng.choice(["tenant-b", "tenant-c", f"tenant-{i}"])
        target = ScopePath(foreign_tenant, "b", "s") if rng.random() < 0.5 else ScopePath(foreign_tenant)
        ctx = InvocationContext.start(registered, caller, "probe", {"k": f"v{i}"})
        ctx.params = dict(ctx.raw_input)
        ctx.target_scopes = [target]
        decision = runtime.pipeline.evaluate(ctx)
        assert decision.kind.value == "tenant_blocked", (i, decision.kind)
        blocked += 1
    assert blocked == 1000
    assert executions["count"] == 0
    _pass("cross-tenant totality: 1000/1000 mismatched-tenant requests hard-blocked, zero executions")


# --- 5. Pipeline ordering ---------------------------------------------------------------

def test_acceptance_pipeline_ordering(runtime, mgr, supervisor):
    def pipeline_trace(invocation_id):
        records = [
            r for r in runtime.audit.records()
            if r.get("invocation_id") == invocation_id and r["kind"] == "pipeline"
        ]
        return records[-1]["stage_trace"]

    runtime.loop.run(mgr, "ticket.create", {"store": "downtown branch", "category": "c"},
                     invocation_id="acc-schema")
    assert pipeline_trace("acc-schema") == ["schema"]

    runtime.loop.run(supervisor, "brand.config.update",
                     {"brand": "central brand", "welcome_message": "x"},
                     invocation_id="acc-capability")
    assert pipeline_trace("acc-capability") == ["schema", "capability"]

    class Injector:
        def choose_candidate(self, candidates):
            return candidates.top().entity

        def supply_params(self, entity):
            return {"ticket": "T-2024-0050", "priority": "high"}

        def confirm_preview(self, diff):
            return True

    runtime.loop.run(mgr, "ticket.update", {"ticket": "plumbing leak", "priority": "high"},
                     planner=Injector(), invocation_id="acc-scope")
    assert pipeline_trace("acc-scope") == ["schema", "capability", "scope"]

    runtime.loop.run(mgr, "ticket.bulk_import",
                     {"store": "downtown branch", "items": [f"i{n}" for n in range(12)]},
                     invocation_id="acc-approval")
    assert pipeline_trace("acc-approval") == ["schema", "capability", "scope", "risk", "approval"]

    registered = runtime.registry.get("tenant-a", "ticket.create")
    handlers = dict(registered.handlers)

    def broken(ctx, params, store):
        raise RuntimeError("backend exploded")

    handlers["execute_action"] = broken
    runtime.registry.register_tool("tenant-a", registered.descriptor, handlers, replace=True)
    result = runtime.loop.run(
        mgr, "ticket.create",
        {"store": "downtown branch", "category": "m", "title": "boom"},
        invocation_id="acc-execute",
    )
    assert result.response.error["cause"] == "handler_failure"
    loop_trace = [
        r for r in runtime.audit.records()
        if r.get("invocation_id") == "acc-execute" and r["kind"] == "loop"
    ][-1]["stage_trace"]
    assert loop_trace == ["schema", "capability", "scope", "risk", "approval", "execute"]
    _pass("pipeline ordering: each failable stage leaves the exact audit prefix")


# --- 6. Idempotency under contention ------------------------------------------------------

def test_acceptance_idempotency_under_contention(make_runtime, clock):
    started = time.perf_counter()
    runtime = make_runtime()
    mgr = runtime.authenticate("token-mgr-downtown")
    request = {
        "tool": "ticket.create",
        "verb": "execute_action",
        "input": {
            "store": "downtown branch",
            "category": "equipment maintenance",
            "title": "Contention probe",
            "priority": "medium",
        },
    }
    before = len(runtime.store.by_type("ticket"))
    results: list[dict] = []
    lock = threading.Lock()
    barrier = threading.Barrier(32)

    def worker():
        barrier.wait()
        doc = runtime.handle_invoke(mgr, request)
        with lock:
            results.append(doc)

    threads = [threading.Thread(target=worker) for _ in range(32)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    assert len(results) == 32
    assert len(runtime.store.by_type("ticket")) == before + 1

    def stripped(doc):
        out = json.loads(json.dumps(doc))
        out["evidence"] = [
            e for e in out["evidence"] if e["type"] not in ("idempotent_replay", "warning")
        ]
        return out

    canon = [stripped(doc) for doc in results]
    assert all(doc == canon[0] for doc in canon)
    replays = sum(
        1 for doc in results if any(e["type"] == "idempotent_replay" for e in doc["evidence"])
    )
    assert replays == 31

    clock.advance(runtime.config.idempotency_window + 1)
    post_window = runtime.handle_invoke(mgr, request)
    assert post_window["ok"]
    assert len(runtime.store.by_type("ticket")) == before + 2
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"contention run took {elapsed:.3f}s"
    _pass("idempotency: 32 concurrent executes -> 1 mutation, replays identical, window honored")


# --- 7. Approval lifecycle ------------------------------------------------------------------

BULK = {
    "store": "downtown branch",
    "category": "maintenance",
    "items": [f"Lifecycle item {i}" for i in range(12)],
}


def test_acceptance_approval_lifecycle(make_runtime, tmp_path, clock):
    # approve path matches gate-free execution on a cloned store
    runtime = make_runtime()
    mgr = runtime.authenticate("token-mgr-downtown")
    supervisor = runtime.authenticate("token-supervisor")
    suspended = runtime.loop.run(mgr, "ticket.bulk_import", BULK, invocation_id="acc-appr")
    pending_id = suspended.response.pending_approval_id
    snapshot_copy = deepcopy(runtime.approvals.get_snapshot(pending_id))

    clone = make_runtime()
    assert clone.store.snapshot_hash() == runtime.store.snapshot_hash()
    clone_response = clone.loop.resume_from_snapshot(snapshot_copy)
    assert clone_response.ok

    decided = runtime.approvals.decide(pending_id, supervisor, "approve", "go")
    assert decided.status == "approved" and decided.result["ok"]
    assert runtime.store.snapshot_hash() == clone.store.snapshot_hash()

    # reject path: hash unchanged, rationale surfaced
    runtime2 = make_runtime()
    mgr2 = runtime2.authenticate("token-mgr-downtown")
    supervisor2 = runtime2.authenticate("token-supervisor")
    suspended2 = runtime2.loop.run(mgr2, "ticket.bulk_import", BULK, invocation_id="acc-rej")
    before = runtime2.store.snapshot_hash()
    rejected = runtime2.approvals.decide(
        suspended2.response.pending_approval_id, supervisor2, "reject", "budget freeze"
    )
    assert rejected.status == "rejected"
    assert runtime2.store.snapshot_hash() == before
    assert "budget freeze" in rejected.result["answer"]

    # concurrent approve/reject: one verdict persists
    runtime3 = make_runtime()
    mgr3 = runtime3.authenticate("token-mgr-downtown")
    supervisor3 = runtime3.authenticate("token-supervisor")
    suspended3 = runtime3.loop.run(mgr3, "ticket.bulk_import", BULK, invocation_id="acc-race")
    pending3 = suspended3.response.pending_approval_id
    verdicts: list[str] = []
    barrier = threading.Barrier(2)

    def act(verdict):
        barrier.wait()
        try:
            runtime3.approvals.decide(pending3, supervisor3, verdict, "race")
            verdicts.append(verdict)
        except Exception:
            pass

    threads = [threading.Thread(target=act, args=(v,)) for v in ("approve", "reject")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(verdicts) == 1
    assert runtime3.approvals.get_snapshot(pending3).status in ("approved", "rejected")

    # restart between suspend and decide preserves the snapshot
    persistent = make_runtime(data_dir=tmp_path)
    mgr4 = persistent.authenticate("token-mgr-downtown")
    suspended4 = persistent.loop.run(mgr4, "ticket.bulk_import", BULK, invocation_id="acc-restart")
    pending4 = suspended4.response.pending_approval_id

    reborn = make_runtime(data_dir=tmp_path)
    snapshot = reborn.approvals.get_snapshot(pending4)
    assert snapshot.status == "pending"
    supervisor4 = reborn.authenticate("token-supervisor")
    final = reborn.approvals.decide(pending4, supervisor4, "approve", "after restart")
    assert final.status == "approved" and final.result["ok"]
    _pass("approval lifecycle: resume==gate-free clone, reject inert, single verdict, restart-safe")


# --- 8. Calibration ---------------------------------------------------------------------------

def test_acceptance_calibration():
    rng = random.Random(1234)
    for _ in range(1000):
        static = rng.random()
        window = [rng.random() < 0.6 for _ in range(rng.randint(10, 100))]
        tracker = CalibrationTracker(static_confidence=lambda _tool: static)
        for outcome in window:
            tracker.record_outcome("t.t", outcome)
        expected = 0.3 * static + 0.7 * (sum(window) / len(window))
        assert abs(tracker.calibrated_confidence("t.t") - expected) < 1e-9

    def brute(samples):
        buckets = {}
        for s in samples:
            idx = min(int(s["confidence"] * 10), 9)
            buckets.setdefault(idx, []).append(s)
        total = len(samples)
        out = 0.0
        for members in buckets.values():
            conf = sum(m["confidence"] for m in members) / len(members)
            acc = sum(1.0 for m in members if m["correct"]) / len(members)
            out += len(members) / total * abs(acc - conf)
        return out

    for _ in range(100):
        samples = [
            {"confidence": rng.random(), "correct": rng.random() < 0.5}
            for _ in range(rng.randint(1, 60))
        ]
        assert abs(compute_ece(samples).ece - brute(samples)) < 1e-12

    single = [{"confidence": 0.8, "correct": i < 6} for i in range(10)]
    assert compute_ece(single).ece == pytest.approx(0.2, abs=1e-15)
    _pass("calibration: blend to 1e-9 over 1000 cases; ECE matches oracle to 1e-12; bucket=0.2")


# --- 9. Resolution reconciliation ----------------------------------------------------------------

def _cands(scores):
    return CandidateSet(
        candidates=tuple(
            Candidate(
                entity=Entity(type="store", id=f"s{i:02d}", title=f"S{i}", attributes={},
                              scope_path=ScopePath("tenant-a", "b", f"s{i:02d}")),
                score=s,
            )
            for i, s in enumerate(scores)
        ),
        query="q",
        thresholds=ResolutionThresholds(),
    )


def test_acceptance_resolution_reconciliation():
    assert not resolve_candidates(_cands([0.85, 0.72])).auto
    assert resolve_candidates(_cands([0.95, 0.40])).auto
    for score in (0.05, 0.3, 0.55, 0.99):
        assert resolve_candidates(_cands([score])).auto

    rng = random.Random(99)
    words = ["alpha", "beta", "gamma", "delta", "mill", "harbor", "plaza", "north", "east", "lane"]
    checks = 0
    while checks < 10_000:
        store = EntityStore()
        brands = ["b1", "b2"]
        for i in range(8):
            brand = rng.choice(brands)
            store.upsert(
                Entity(
                    type="store", id=f"s{i:03d}",
                    title=" ".join(rng.sample(words, rng.randint(1, 3))),
                    attributes={},
                    scope_path=ScopePath("tenant-a", brand, f"s{i:03d}"),
                )
            )
        caller_scope = rng.choice(
            [ScopePath("tenant-a"), ScopePath("tenant-a", "b1"), ScopePath("tenant-a", "b2")]
        )
        tau_s = rng.uniform(0.0, 0.6)
        query = " ".join(rng.sample(words, rng.randint(1, 3)))
        try:
            result = semantic_search(
                store, "tenant-a", "store", query,
                ResolutionThresholds(tau_s=tau_s), caller_scope,
            )
        except NoMatch:
            checks += 1
            continue
        for candidate in result.candidates:
            assert candidate.score >= tau_s
            assert scope_contains(caller_scope, candidate.entity.scope_path)
            checks += 1
    _pass("resolution: margin rule reconciles the threshold cases; 10k tau_s/scope checks hold")


# --- 10. Simulation determinism + paradigm contrast ------------------------------------------------

def test_acceptance_simulation_contrast():
    seed, tasks = load_tasks()
    six_a = run_simulation(tasks, "six_verb", seed=seed)
    six_b = run_simulation(tasks, "six_verb", seed=seed)
    base_a = run_simulation(tasks, "exact_id_baseline", seed=seed)
    base_b = run_simulation(tasks, "exact_id_baseline", seed=seed)
    assert json.dumps(six_a, sort_keys=True) == json.dumps(six_b, sort_keys=True)
    assert json.dumps(base_a, sort_keys=True) == json.dumps(base_b, sort_keys=True)

    def task(report, name):
        return next(t for t in report["tasks"] if t["name"] == name)

    ambiguous = task(six_a, "ambiguous_store_create")
    assert ambiguous["ok"] and ambiguous["disambiguations"] == 1
    flaky = task(six_a, "flaky_handler_create")
    assert flaky["ok"] and flaky["recoveries_succeeded"] == 1

    for name in ("ambiguous_store_create", "flaky_handler_create"):
        baseline_task = task(base_a, name)
        assert baseline_task["outcome"] == "not_found"
    _pass("simulation: deterministic reports; six-verb recovers where exact-id fails opaquely")

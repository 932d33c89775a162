"""Gateway runtime: one object owning every subsystem, wired per config.

The runtime is what the HTTP layer, the CLI, and the simulation harness talk
to. It authenticates tokens, routes invocations into the interaction loop,
and exposes discovery, approvals, audit, and the event stream.
"""

from __future__ import annotations

import time
from pathlib import Path
from typing import Any

from ..approvals import ApprovalService
from ..audit import AuditLog, Clock
from ..contract import CalibrationTracker, NtcResponse, error_ntc, validate_ntc
from ..errors import GatewayError, UnknownTenant, UnknownTool
from ..execution import Executor, IdempotencyStore
from ..governance import CapabilityMatrix, Pipeline, Principal
from ..protocol import InteractionLoop, PlannerCallback
from ..registry import ToolDescriptor, ToolRegistry
from ..resolution import EntityStore, lexical_score
from .config import GatewayConfig, load_config
from .events import EventBroker
from .fixtures import load_fixtures


class GatewayRuntime:
    def __init__(
        self,
        config: GatewayConfig | None = None,
        *,
        clock: Clock = time.time,
        load_bundled_fixtures: bool = True,
    ) -> None:
        self.config = config or load_config()
        self.clock = clock

        self.audit = AuditLog(self.config.journal_path("audit.jsonl"), clock=clock)
        self.events = EventBroker(self.config.journal_path("events.jsonl"), clock=clock)
        self.store = EntityStore()
        self.registry = ToolRegistry(self.config.tenants)
        self.matrix = CapabilityMatrix(self.config.capability_entries)
        self.pipeline = Pipeline(self.matrix, self.audit)
        self.idempotency = IdempotencyStore(self.config.idempotency_window, clock=clock)

        self.calibration = CalibrationTracker(
            static_confidence=self._static_confidence,
            is_registered=self._calibration_key_known,
            review_hook=self._flag_for_review,
        )
        self.registry.set_replace_hook(self._on_descriptor_replace)

        self.executor = Executor(
            self.store,
            self.idempotency,
            self.audit,
            confidence_for=lambda tool: self.calibration.calibrated_confidence(
                _calibration_key(tool.tenant, tool.name)
            ),
            clock=clock,
        )
        self.approvals = ApprovalService(
            self.config.journal_path("approvals.jsonl"),
            self.audit,
            self.events.publish,
            approver_role_for=self.config.approver_role_for,
            clock=clock,
            expiry=self.config.snapshot_expiry,
            default_wait=self.config.default_wait,
        )
        self.loop = InteractionLoop(
            self.registry,
            self.store,
            self.pipeline,
            self.executor,
            self.approvals,
            self.audit,
            record_outcome=self.record_outcome,
            thresholds=self.config.thresholds,
            clock=clock,
        )

        if load_bundled_fixtures and self.config.fixtures_path is not None:
            load_fixtures(self.config.fixtures_path, self.store, self.registry)
        if self.config.data_dir is not None:
            registered = Path(self.config.data_dir) / "registered_tools.jsonl"
            if registered.exists():
                load_fixtures(registered, self.store, self.registry)

    # -- calibration plumbing

    def _static_confidence(self, key: str) -> float:
        tenant, name = key.split("/", 1)
        return self.registry.get(tenant, name).descriptor.static_confidence

    def _calibration_key_known(self, key: str) -> bool:
        tenant, _, name = key.partition("/")
        return self.registry.exists(tenant, name)

    def _flag_for_review(self, key: str, value: float) -> None:
        tenant, _, name = key.partition("/")
        self.audit.record(
            kind="calibration_flag",
            tool=name,
            tenant=tenant,
            decision="flag_for_review",
            calibrated_confidence=value,
        )

    def _on_descriptor_replace(self, name: str, invalidated: bool) -> None:
        if invalidated:
            for tenant in self.registry.tenants():
                self.calibration.reset(_calibration_key(tenant, name))

    def record_outcome(self, tenant: str, name: str, success: bool) -> None:
        self.calibration.record_outcome(_calibration_key(tenant, name), success)

    def calibrated_confidence(self, tenant: str, name: str) -> float:
        return self.calibration.calibrated_confidence(_calibration_key(tenant, name))

    # -- auth

    def authenticate(self, token: str | None) -> Principal | None:
        if not token:
            return None
        return self.config.principal_for_token(token)

    # -- wire operations

    def handle_invoke(self, caller: Principal, request: dict[str, Any]) -> dict[str, Any]:
        """POST /invoke: run the full loop or a single verb; always an NTC."""
        tool_name = request.get("tool", "")
        verb = request.get("verb", "auto") or "auto"
        raw_input = request.get("input") or {}
        try:
            if not self.registry.exists(caller.tenant, tool_name):
                return self._unknown_tool(caller, tool_name).to_wire()
            if verb == "auto":
                result = self.loop.run(caller, tool_name, raw_input)
            else:
                result = self.loop.run_verb(caller, tool_name, verb, raw_input)
            return result.response.to_wire()
        except GatewayError as exc:
            return error_ntc(exc.code, exc.message).to_wire()

    def _unknown_tool(self, caller: Principal, tool_name: str) -> NtcResponse:
        names = self.registry.names(caller.tenant)
        ranked = sorted(
            names,
            key=lambda name: (-lexical_score(tool_name or "?", name), name),
        )[:3]
        self.audit.record(
            kind="loop",
            tool=tool_name,
            caller=caller.to_dict(),
            decision="unknown_tool",
            suggestions=ranked,
        )
        return error_ntc(
            "unknown_tool",
            f"tool {tool_name!r} is not registered in tenant {caller.tenant!r}",
            candidates=[{"type": "tool", "id": name, "title": name} for name in ranked],
            suggestion="did you mean: " + ", ".join(ranked) if ranked else "list tools first",
        )

    def handle_discovery(self, caller: Principal, tenant: str | None = None) -> list[dict[str, Any]]:
        return self.registry.list_tools(tenant or caller.tenant, caller)

    def handle_approvals_list(self, caller: Principal, status: str | None = "pending") -> list[dict[str, Any]]:
        if status == "all":
            status = None
        return self.approvals.list_pending(caller.tenant, caller, status)

    def handle_decision(
        self, caller: Principal, pending_id: str, verdict: str, rationale: str = ""
    ) -> dict[str, Any]:
        snapshot = self.approvals.decide(pending_id, caller, verdict, rationale)
        return snapshot.summary()

    def handle_audit_tail(self, n: int = 50) -> list[dict[str, Any]]:
        return self.audit.tail(n)

    def known_tool_names(self, tenant: str) -> set[str]:
        return set(self.registry.names(tenant))

    def validate_response(self, tenant: str, document: Any) -> list[dict[str, Any]]:
        return validate_ntc(document, known_tools=self.known_tool_names(tenant))

    # -- lifecycle helpers

    def register_descriptor(
        self,
        tenant: str,
        descriptor_doc: dict[str, Any],
        handler_spec: dict[str, Any] | None = None,
        *,
        replace: bool = False,
    ):
        from .builtins import build_handlers

        descriptor = ToolDescriptor.from_dict(descriptor_doc, tenant=tenant)
        spec = handler_spec or {"kind": "entity_search", "config": {"entity_type": "ticket"}}
        handlers = build_handlers(spec.get("kind", "entity_search"), spec.get("config"))
        self.registry.ensure_tenant(tenant)
        return self.registry.register_tool(tenant, descriptor, handlers, replace=replace)


def _calibration_key(tenant: str, name: str) -> str:
    return f"{tenant}/{name}"


def build_runtime(
    config_path: str | Path | None = None,
    *,
    clock: Clock = time.time,
    data_dir: str | Path | None = None,
) -> GatewayRuntime:
    config = load_config(config_path)
    if data_dir is not None:
        config.data_dir = Path(data_dir)
        config.data_dir.mkdir(parents=True, exist_ok=True)
    return GatewayRuntime(config, clock=clock)

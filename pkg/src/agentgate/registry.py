"""Tool registration and tenant-scoped discovery.

Tools are registered declaratively: a descriptor (what the tool is, which
verbs it supports, how it is governed) plus in-process handler bindings for
the verbs that execute logic. Discovery is tenant-scoped and role-independent:
visibility is not authorization.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .errors import (
    DuplicateTool,
    HandlerMissing,
    InvalidDescriptor,
    InvalidName,
    MissingIdempotencyFields,
    UnknownTenant,
    UnknownTool,
)
from .governance import RISK_NAMES, SCOPE_LEVELS

VERBS = (
    "semantic_search",
    "resolve_candidates",
    "preview_action",
    "execute_action",
    "verify_result",
    "recover_from_error",
)
# verbs whose logic lives in a handler; R and C are engine-implemented
HANDLER_VERBS = ("semantic_search", "preview_action", "execute_action", "verify_result")

MODES = ("read", "write", "commit")
SOURCES = ("system", "third_party", "mcp", "model_native", "skill", "ops_cli")

_NAME_RE = re.compile(r"^[a-z0-9_]+(\.[a-z0-9_]+)+$")

_RISK_BY_NAME = {name: level for level, name in RISK_NAMES.items()}

_DESCRIPTOR_FIELDS = {
    "name",
    "domain",
    "mode",
    "source",
    "risk_level",
    "approval_required",
    "input_schema",
    "output_schema",
    "permission_policy",
    "idempotency_key_fields",
    "supported_verbs",
    "description",
    "static_confidence",
    "tenant",
}


@dataclass(frozen=True)
class PermissionPolicy:
    capability: str
    object_scope: str = "store"  # most operations in this domain are store-level

    def __post_init__(self) -> None:
        if self.object_scope not in SCOPE_LEVELS:
            raise InvalidDescriptor(
                f"permission_policy.object_scope must be one of {SCOPE_LEVELS}, got {self.object_scope!r}"
            )

    def to_dict(self) -> dict[str, str]:
        return {"capability": self.capability, "object_scope": self.object_scope}


@dataclass(frozen=True)
class ToolDescriptor:
    """Declarative registration record for one tool."""

    name: str
    mode: str
    tenant: str
    permission_policy: PermissionPolicy
    domain: str = ""
    source: str = "system"
    risk_level: int = 0
    approval_required: bool = False
    input_schema: dict[str, Any] = field(default_factory=dict)
    output_schema: dict[str, Any] = field(default_factory=dict)
    idempotency_key_fields: tuple[str, ...] = ()
    supported_verbs: tuple[str, ...] = ()
    description: str = ""
    static_confidence: float = 0.8

    def validate(self) -> None:
        if not _NAME_RE.match(self.name):
            raise InvalidName(
                f"tool name {self.name!r} violates the dotted verb.noun convention "
                "(>=2 lowercase alphanumeric/underscore segments)"
            )
        if self.mode not in MODES:
            raise InvalidDescriptor(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.source not in SOURCES:
            raise InvalidDescriptor(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.risk_level not in RISK_NAMES:
            raise InvalidDescriptor(f"risk_level must be 0..3, got {self.risk_level!r}")
        unknown_verbs = [v for v in self.supported_verbs if v not in VERBS]
        if unknown_verbs:
            raise InvalidDescriptor(f"unknown verbs {unknown_verbs} (choose from {VERBS})")
        if not (0.0 <= self.static_confidence <= 1.0):
            raise InvalidDescriptor(f"static_confidence must lie in [0,1], got {self.static_confidence}")

        verbs = set(self.supported_verbs)
        if self.mode in ("write", "commit"):
            if not self.idempotency_key_fields:
                raise MissingIdempotencyFields(
                    f"{self.mode}-mode tool {self.name!r} must declare idempotency_key_fields"
                )
            if "execute_action" not in verbs:
                raise InvalidDescriptor(f"{self.mode}-mode tool {self.name!r} must support execute_action")
        if self.mode == "commit" and "preview_action" not in verbs:
            # commit effects are irreversible; they never skip preview, so the
            # verb must be present for the protocol to reach execution at all
            raise InvalidDescriptor(f"commit-mode tool {self.name!r} must support preview_action")
        if self.mode == "read":
            if "semantic_search" not in verbs:
                raise InvalidDescriptor(f"read-mode tool {self.name!r} must support semantic_search")
            forbidden = verbs & {"preview_action", "execute_action"}
            if forbidden:
                raise InvalidDescriptor(
                    f"read-mode tool {self.name!r} may not support {sorted(forbidden)}"
                )
        if "verify_result" in verbs and "execute_action" not in verbs:
            raise InvalidDescriptor(
                f"tool {self.name!r}: verify_result without execute_action is not accepted"
            )

    def supports(self, verb: str) -> bool:
        return verb in self.supported_verbs

    @property
    def risk_level_name(self) -> str:
        return RISK_NAMES[self.risk_level]

    def summary(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "domain": self.domain,
            "mode": self.mode,
            "source": self.source,
            "risk_level": self.risk_level,
            "risk_level_name": self.risk_level_name,
            "approval_required": self.approval_required,
            "supported_verbs": list(self.supported_verbs),
            "description": self.description,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "domain": self.domain,
            "mode": self.mode,
            "source": self.source,
            "risk_level": self.risk_level,
            "approval_required": self.approval_required,
            "input_schema": self.input_schema,
            "output_schema": self.output_schema,
            "permission_policy": self.permission_policy.to_dict(),
            "idempotency_key_fields": list(self.idempotency_key_fields),
            "supported_verbs": list(self.supported_verbs),
            "description": self.description,
            "static_confidence": self.static_confidence,
            "tenant": self.tenant,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], *, tenant: str | None = None) -> "ToolDescriptor":
        """Strict parse: unknown fields are rejected to catch descriptor drift."""
        unknown = set(data) - _DESCRIPTOR_FIELDS
        if unknown:
            raise InvalidDescriptor(f"unknown descriptor fields: {sorted(unknown)}")
        for required in ("name", "mode"):
            if required not in data:
                raise InvalidDescriptor(f"descriptor missing required field {required!r}")
        policy_data = data.get("permission_policy") or {}
        unknown_policy = set(policy_data) - {"capability", "object_scope"}
        if unknown_policy:
            raise InvalidDescriptor(f"unknown permission_policy fields: {sorted(unknown_policy)}")
        risk = data.get("risk_level", 0)
        if isinstance(risk, str):
            if risk not in _RISK_BY_NAME:
                raise InvalidDescriptor(f"unknown risk_level {risk!r}")
            risk = _RISK_BY_NAME[risk]
        descriptor = cls(
            name=data["name"],
            mode=data["mode"],
            tenant=data.get("tenant") or tenant or "",
            permission_policy=PermissionPolicy(
                capability=policy_data.get("capability", data["name"]),
                object_scope=policy_data.get("object_scope", "store"),
            ),
            domain=data.get("domain", ""),
            source=data.get("source", "system"),
            risk_level=risk,
            approval_required=bool(data.get("approval_required", False)),
            input_schema=dict(data.get("input_schema", {})),
            output_schema=dict(data.get("output_schema", {})),
            idempotency_key_fields=tuple(data.get("idempotency_key_fields", ())),
            supported_verbs=tuple(data.get("supported_verbs", ())),
            description=data.get("description", ""),
            static_confidence=float(data.get("static_confidence", 0.8)),
        )
        if not descriptor.tenant:
            raise InvalidDescriptor(f"descriptor {descriptor.name!r} has no tenant")
        descriptor.validate()
        return descriptor


@dataclass(frozen=True)
class RegisteredTool:
    descriptor: ToolDescriptor
    handlers: Mapping[str, Callable[..., Any]]
    version: int


@dataclass(frozen=True)
class RegistrationReceipt:
    tenant: str
    name: str
    version: int
    replaced: bool
    calibration_invalidated: bool


class ToolRegistry:
    """Tenant-partitioned tool map; read-mostly, single-writer registrations."""

    def __init__(self, tenants: tuple[str, ...] | list[str] = ()) -> None:
        self._tools: dict[tuple[str, str], RegisteredTool] = {}
        self._tenants: set[str] = set(tenants)
        self._write_lock = threading.Lock()
        self._on_replace: Callable[[str, bool], None] | None = None

    def set_replace_hook(self, hook: Callable[[str, bool], None]) -> None:
        """hook(tool_name, calibration_invalidated) fires on descriptor replace."""
        self._on_replace = hook

    def ensure_tenant(self, tenant: str) -> None:
        with self._write_lock:
            self._tenants.add(tenant)

    def tenants(self) -> set[str]:
        return set(self._tenants)

    def register_tool(
        self,
        tenant: str,
        descriptor: ToolDescriptor,
        handlers: Mapping[str, Callable[..., Any]],
        *,
        replace: bool = False,
    ) -> RegistrationReceipt:
        descriptor.validate()
        if descriptor.tenant != tenant:
            raise InvalidDescriptor(
                f"descriptor tenant {descriptor.tenant!r} does not match registration tenant {tenant!r}"
            )
        missing = [
            verb for verb in HANDLER_VERBS
            if descriptor.supports(verb) and verb not in handlers
        ]
        if missing:
            raise HandlerMissing(f"tool {descriptor.name!r} lacks handlers for {missing}")

        with self._write_lock:
            if tenant not in self._tenants:
                raise UnknownTenant(f"unknown tenant {tenant!r}")
            key = (tenant, descriptor.name)
            existing = self._tools.get(key)
            if existing is not None and not replace:
                raise DuplicateTool(f"tool {descriptor.name!r} already registered in tenant {tenant!r}")
            version = existing.version + 1 if existing else 1
            self._tools[key] = RegisteredTool(descriptor=descriptor, handlers=dict(handlers), version=version)

        calibration_invalidated = False
        if existing is not None:
            # the calibration window measures the handler's behavior, which is
            # only presumed changed when mode or verb envelope changed
            calibration_invalidated = (
                existing.descriptor.mode != descriptor.mode
                or set(existing.descriptor.supported_verbs) != set(descriptor.supported_verbs)
            )
            if self._on_replace is not None:
                self._on_replace(descriptor.name, calibration_invalidated)
        return RegistrationReceipt(
            tenant=tenant,
            name=descriptor.name,
            version=version,
            replaced=existing is not None,
            calibration_invalidated=calibration_invalidated,
        )

    def get(self, tenant: str, name: str) -> RegisteredTool:
        tool = self._tools.get((tenant, name))
        if tool is None:
            raise UnknownTool(f"tool {name!r} not registered in tenant {tenant!r}", tool=name)
        return tool

    def exists(self, tenant: str, name: str) -> bool:
        return (tenant, name) in self._tools

    def names(self, tenant: str) -> list[str]:
        return sorted(name for (t, name) in self._tools if t == tenant)

    def list_tools(self, tenant: str, caller) -> list[dict[str, Any]]:
        """Full tenant listing, independent of the caller's capabilities.

        Tools from other tenants are never visible; within the tenant every
        member sees the same list regardless of role.
        """
        if tenant not in self._tenants:
            raise UnknownTenant(f"unknown tenant {tenant!r}")
        if caller is not None and caller.tenant != tenant:
            # tenant namespaces are private: a foreign tenant is indistinguishable
            # from a nonexistent one
            raise UnknownTenant(f"tenant {tenant!r} is not accessible to this caller")
        return [
            tool.descriptor.summary()
            for (t, _), tool in sorted(self._tools.items())
            if t == tenant
        ]

"""Governed execution: the six-layer validation pipeline and its building blocks.

Stages run strictly in order -- schema, capability, scope, risk, approval --
and the first failure short-circuits. Capability answers "may this role call
this tool at all"; scope answers "may this caller touch these objects";
dynamic risk escalation adjusts the tool's registered base level from runtime
facts and decides whether a human must approve before the handler runs.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Sequence

import jsonschema

from .errors import ConfigError

if TYPE_CHECKING:  # pragma: no cover - typing only, avoids import cycle
    from .invocation import InvocationContext
    from .registry import ToolDescriptor


# --- scope hierarchy ---------------------------------------------------------

SCOPE_LEVELS = ("tenant", "brand", "store", "user")

RISK_LOW, RISK_MEDIUM, RISK_HIGH, RISK_CRITICAL = 0, 1, 2, 3
RISK_NAMES = {0: "low", 1: "medium", 2: "high", 3: "critical"}
APPROVAL_THRESHOLD = RISK_HIGH


@dataclass(frozen=True)
class ScopePath:
    """Position in the Tenant > Brand > Store > User containment hierarchy."""

    tenant: str
    brand: str | None = None
    store: str | None = None
    user: str | None = None

    def __post_init__(self) -> None:
        if not self.tenant:
            raise ConfigError("scope requires a tenant")
        # lower levels require all higher levels present
        if self.store is not None and self.brand is None:
            raise ConfigError("store-level scope requires a brand")
        if self.user is not None and self.store is None:
            raise ConfigError("user-level scope requires a store")

    def level(self, name: str) -> str | None:
        return getattr(self, name)

    def depth(self) -> int:
        """Index of the deepest populated level (0=tenant .. 3=user)."""
        for idx in range(len(SCOPE_LEVELS) - 1, -1, -1):
            if getattr(self, SCOPE_LEVELS[idx]) is not None:
                return idx
        return 0

    def deepest_level(self) -> str:
        return SCOPE_LEVELS[self.depth()]

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in SCOPE_LEVELS if getattr(self, name) is not None}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScopePath":
        return cls(
            tenant=data["tenant"],
            brand=data.get("brand"),
            store=data.get("store"),
            user=data.get("user"),
        )


@dataclass(frozen=True)
class Principal:
    """Authenticated caller: identity, role, scope, capability flags."""

    user_id: str
    tenant: str
    role: str
    scope: ScopePath
    capability_flags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.scope.tenant != self.tenant:
            raise ConfigError(
                f"principal {self.user_id!r}: scope tenant {self.scope.tenant!r} "
                f"differs from principal tenant {self.tenant!r}"
            )

    def has_flag(self, flag: str) -> bool:
        return flag in self.capability_flags

    def to_dict(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "tenant": self.tenant,
            "role": self.role,
            "scope": self.scope.to_dict(),
            "capability_flags": sorted(self.capability_flags),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Principal":
        return cls(
            user_id=data["user_id"],
            tenant=data["tenant"],
            role=data["role"],
            scope=ScopePath.from_dict(data["scope"]),
            capability_flags=frozenset(data.get("capability_flags", ())),
        )


class ScopeVerdict(str, Enum):
    ALLOW = "allow"
    DENY = "deny"
    HARD_BLOCK = "hard_block"


@dataclass(frozen=True)
class ScopeDecision:
    verdict: ScopeVerdict
    reason: str = ""

    def __bool__(self) -> bool:
        return self.verdict is ScopeVerdict.ALLOW


def check_scope(caller_scope: ScopePath, target_scope: ScopePath, required_level: str) -> ScopeDecision:
    """Decide whether ``caller_scope`` may reach ``target_scope``.

    Tenants differing is an unconditional hard block. Otherwise the caller
    must contain the target at ``required_level``: every level the caller is
    pinned to (at or above the required level) must match the target, and a
    caller pinned below the required level is too narrow for the operation.
    """
    if required_level not in SCOPE_LEVELS:
        raise ConfigError(f"unknown scope level {required_level!r}")
    if caller_scope.tenant != target_scope.tenant:
        return ScopeDecision(ScopeVerdict.HARD_BLOCK, "cross-tenant access is unconditionally blocked")

    required_depth = SCOPE_LEVELS.index(required_level)
    for depth in range(required_depth + 1):
        if target_scope.level(SCOPE_LEVELS[depth]) is None:
            return ScopeDecision(
                ScopeVerdict.DENY,
                f"target scope missing {SCOPE_LEVELS[depth]!r} for a {required_level}-level operation",
            )

    for depth in range(1, len(SCOPE_LEVELS)):
        name = SCOPE_LEVELS[depth]
        pinned = caller_scope.level(name)
        if pinned is None:
            continue
        if depth > required_depth:
            return ScopeDecision(
                ScopeVerdict.DENY,
                f"caller is {name}-scoped, narrower than the {required_level}-level operation",
            )
        if target_scope.level(name) != pinned:
            return ScopeDecision(
                ScopeVerdict.DENY,
                f"target {name} {target_scope.level(name)!r} outside caller scope",
            )
    return ScopeDecision(ScopeVerdict.ALLOW)


def scope_contains(caller_scope: ScopePath, entity_scope: ScopePath) -> bool:
    """Visibility predicate for query post-filtering (layer 3 on reads)."""
    decision = check_scope(caller_scope, entity_scope, entity_scope.deepest_level())
    return decision.verdict is ScopeVerdict.ALLOW


# --- capability matrix --------------------------------------------------------

class CapabilityMatrix:
    """Role x tool grant relation with trailing-wildcard patterns.

    Lookup is total: anything not granted is denied. ``ticket.*`` matches
    ``ticket.search`` and ``ticket.close.batch`` but not ``ticket`` itself.
    """

    def __init__(self, entries: Iterable[tuple[str, str]] = ()) -> None:
        self._grants: dict[str, set[str]] = {}
        for role, pattern in entries:
            self.grant(role, pattern)

    def grant(self, role: str, pattern: str) -> None:
        self._grants.setdefault(role, set()).add(pattern)

    def allows(self, role: str, tool_name: str) -> bool:
        for pattern in self._grants.get(role, ()):
            if pattern == tool_name:
                return True
            if pattern.endswith(".*") and tool_name.startswith(pattern[:-1]):
                return True
        return False

    @classmethod
    def from_config(cls, entries: Iterable[Mapping[str, Any]]) -> "CapabilityMatrix":
        matrix = cls()
        for entry in entries:
            patterns = entry.get("tools", entry.get("patterns", ()))
            if isinstance(patterns, str):
                patterns = [patterns]
            for pattern in patterns:
                matrix.grant(entry["role"], pattern)
        return matrix


def check_capability(matrix: CapabilityMatrix, role: str, tool_name: str) -> bool:
    return matrix.allows(role, tool_name)


# --- layer 1: input schema ----------------------------------------------------

def _schema_hint(error: jsonschema.ValidationError) -> str:
    if error.validator == "required":
        missing = error.message.split("'")[1] if "'" in error.message else "?"
        return f"provide required field '{missing}'"
    if error.validator == "enum":
        return f"allowed values: {list(error.validator_value)}"
    if error.validator == "type":
        return f"expected type: {error.validator_value}"
    if error.validator in ("minimum", "maximum", "exclusiveMinimum", "exclusiveMaximum"):
        return f"bound: {error.validator} {error.validator_value}"
    if error.validator in ("minLength", "maxLength", "minItems", "maxItems"):
        return f"size bound: {error.validator} {error.validator_value}"
    if error.validator == "additionalProperties":
        return "remove fields not declared in the schema"
    return error.message


def _error_path(error: jsonschema.ValidationError) -> str:
    parts: list[str] = []
    for piece in error.absolute_path:
        if isinstance(piece, int):
            parts.append(f"[{piece}]")
        else:
            parts.append(f".{piece}" if parts else str(piece))
    path = "".join(parts)
    if error.validator == "required" and "'" in error.message:
        missing = error.message.split("'")[1]
        path = f"{path}.{missing}" if path else missing
    return path or "$"


def validate_input_schema(tool: "ToolDescriptor", params: Mapping[str, Any]) -> list[dict[str, Any]]:
    """Validate ``params`` against the tool's input schema.

    Returns violations as data: each carries the offending path, the violated
    rule, and a correction hint the planner can act on. Empty list means
    conforming input.
    """
    schema = tool.input_schema or {}
    validator = jsonschema.Draft202012Validator(schema)
    violations = []
    for error in validator.iter_errors(dict(params)):
        violations.append(
            {
                "path": _error_path(error),
                "rule": error.validator,
                "hint": _schema_hint(error),
            }
        )
    violations.sort(key=lambda v: (v["path"], v["rule"]))
    return violations


# --- layer 4: dynamic risk -----------------------------------------------------

@dataclass(frozen=True)
class RequestFacts:
    """Runtime facts the risk factors trigger on, derived before risk runs."""

    affected_count: int = 0
    cross_brand: bool = False
    overwrites_published: bool = False
    batch_size: int = 1
    irreversible: bool = False
    single_entity: bool = False
    same_store_only: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "affected_count": self.affected_count,
            "cross_brand": self.cross_brand,
            "overwrites_published": self.overwrites_published,
            "batch_size": self.batch_size,
            "irreversible": self.irreversible,
            "single_entity": self.single_entity,
            "same_store_only": self.same_store_only,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RequestFacts":
        return cls(**{k: data[k] for k in cls().to_dict() if k in data})


@dataclass(frozen=True)
class RiskFactor:
    name: str
    delta: int
    triggered: bool
    rationale: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "delta": self.delta,
            "triggered": self.triggered,
            "rationale": self.rationale,
        }


@dataclass(frozen=True)
class RiskAssessment:
    base_level: int
    factors: tuple[RiskFactor, ...]
    final_level: int
    requires_approval: bool

    @property
    def final_level_name(self) -> str:
        return RISK_NAMES[self.final_level]

    def to_dict(self) -> dict[str, Any]:
        return {
            "base_level": self.base_level,
            "base_level_name": RISK_NAMES[self.base_level],
            "factors": [f.to_dict() for f in self.factors],
            "final_level": self.final_level,
            "final_level_name": self.final_level_name,
            "requires_approval": self.requires_approval,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RiskAssessment":
        return cls(
            base_level=data["base_level"],
            factors=tuple(
                RiskFactor(f["name"], f["delta"], f["triggered"], f["rationale"])
                for f in data.get("factors", ())
            ),
            final_level=data["final_level"],
            requires_approval=data["requires_approval"],
        )


def clamp_risk(level: int) -> int:
    return max(RISK_LOW, min(RISK_CRITICAL, level))


def assess_risk(tool: "ToolDescriptor", facts: RequestFacts, caller: Principal) -> RiskAssessment:
    """Adjust the tool's base risk by the runtime escalation factors.

    Escalators (+1 each): >10 affected entities, cross-brand reach (waived
    when the caller holds the ``cross_brand`` capability flag), overwriting
    published content, batches >5, irreversible effect. De-escalators (-1):
    exactly one entity, confined to the caller's own store. The sum is
    clamped to [low, critical]; approval is required at high or above, or
    whenever the descriptor demands it outright.
    """
    waived = facts.cross_brand and caller.has_flag("cross_brand")
    factors = (
        RiskFactor(
            "affected_count", +1, facts.affected_count > 10,
            f"{facts.affected_count} entities affected (threshold 10)",
        ),
        RiskFactor(
            "cross_brand", +1, facts.cross_brand and not waived,
            "waived: caller holds cross_brand capability flag" if waived
            else "operation reaches a different brand" if facts.cross_brand
            else "single-brand operation",
        ),
        RiskFactor(
            "overwrites_published", +1, facts.overwrites_published,
            "overwrites published content" if facts.overwrites_published else "no published content touched",
        ),
        RiskFactor(
            "batch_size", +1, facts.batch_size > 5,
            f"batch of {facts.batch_size} items (threshold 5)",
        ),
        RiskFactor(
            "irreversible", +1, facts.irreversible,
            "no undo path" if facts.irreversible else "reversible",
        ),
        RiskFactor(
            "single_entity", -1, facts.single_entity,
            "exactly one entity" if facts.single_entity else "not a single-entity operation",
        ),
        RiskFactor(
            "same_store_only", -1, facts.same_store_only,
            "confined to the caller's own store" if facts.same_store_only else "reaches beyond the caller's store",
        ),
    )
    base = tool.risk_level
    final = clamp_risk(base + sum(f.delta for f in factors if f.triggered))
    # the descriptor flag is absolute: de-escalators cannot disarm it
    requires = final >= APPROVAL_THRESHOLD or tool.approval_required
    return RiskAssessment(base_level=base, factors=factors, final_level=final, requires_approval=requires)


# --- the pipeline ---------------------------------------------------------------

PIPELINE_STAGES = ("schema", "capability", "scope", "risk", "approval", "execute")


class DecisionKind(str, Enum):
    PROCEED = "proceed"
    SCHEMA_REJECTED = "schema_rejected"
    CAPABILITY_DENIED = "capability_denied"
    SCOPE_DENIED = "scope_denied"
    TENANT_BLOCKED = "tenant_blocked"
    APPROVAL_REQUIRED = "approval_required"


@dataclass(frozen=True)
class PipelineDecision:
    kind: DecisionKind
    violations: tuple[dict[str, Any], ...] = ()
    reason: str = ""
    risk: RiskAssessment | None = None

    @property
    def proceed(self) -> bool:
        return self.kind is DecisionKind.PROCEED

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.violations:
            out["violations"] = list(self.violations)
        if self.reason:
            out["reason"] = self.reason
        if self.risk is not None:
            out["risk"] = self.risk.to_dict()
        return out


class Pipeline:
    """Stage runner. Pure given (ctx, matrix); safe under concurrent calls."""

    def __init__(self, matrix: CapabilityMatrix, audit) -> None:
        self._matrix = matrix
        self._audit = audit
        self._lock = threading.Lock()

    def evaluate(self, ctx: "InvocationContext") -> PipelineDecision:
        decision = self._evaluate(ctx)
        ctx.decision = decision
        self._audit.record(
            kind="pipeline",
            invocation_id=ctx.invocation_id,
            tool=ctx.tool.name,
            caller=ctx.caller.to_dict(),
            verb=ctx.current_verb,
            stage_trace=list(ctx.stage_trace),
            params=dict(ctx.raw_input),
            decision=decision.to_dict(),
            risk=decision.risk.to_dict() if decision.risk else None,
        )
        return decision

    def _evaluate(self, ctx: "InvocationContext") -> PipelineDecision:
        ctx.stage_trace.append("schema")
        violations = validate_input_schema(ctx.tool, ctx.raw_input)
        if violations:
            return PipelineDecision(DecisionKind.SCHEMA_REJECTED, violations=tuple(violations))

        ctx.stage_trace.append("capability")
        if not self._matrix.allows(ctx.caller.role, ctx.tool.name):
            return PipelineDecision(
                DecisionKind.CAPABILITY_DENIED,
                reason=f"role {ctx.caller.role!r} has no capability for {ctx.tool.name!r}",
            )

        ctx.stage_trace.append("scope")
        required = ctx.tool.permission_policy.object_scope
        for target in ctx.target_scopes:
            verdict = check_scope(ctx.caller.scope, target, required)
            if verdict.verdict is ScopeVerdict.HARD_BLOCK:
                return PipelineDecision(DecisionKind.TENANT_BLOCKED, reason=verdict.reason)
            if verdict.verdict is ScopeVerdict.DENY:
                return PipelineDecision(DecisionKind.SCOPE_DENIED, reason=verdict.reason)

        if ctx.tool.mode == "read":
            # reads stop here: scope acts as the query post-filter, and
            # risk/approval gate mutations only
            return PipelineDecision(DecisionKind.PROCEED)

        ctx.stage_trace.append("risk")
        risk = assess_risk(ctx.tool, ctx.request_facts, ctx.caller)
        ctx.risk = risk

        ctx.stage_trace.append("approval")
        if risk.requires_approval:
            return PipelineDecision(DecisionKind.APPROVAL_REQUIRED, risk=risk)
        return PipelineDecision(DecisionKind.PROCEED, risk=risk)

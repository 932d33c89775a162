"""Exception taxonomy for the gateway runtime.

Every domain failure carries a stable machine-readable ``code`` so it can be
surfaced to planners as structured recovery guidance instead of an opaque
status. Transport-level failures (bad credentials) are the only exceptions
that escape this taxonomy.
"""

from __future__ import annotations

from typing import Any


class GatewayError(Exception):
    """Base class for all domain errors.

    ``code`` is the stable cause identifier used in NTC error payloads;
    ``details`` carries structured context for recovery guidance.
    """

    code = "gateway_error"

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details = details


# --- registry ---------------------------------------------------------------

class InvalidName(GatewayError):
    code = "invalid_name"


class InvalidDescriptor(GatewayError):
    code = "invalid_descriptor"


class MissingIdempotencyFields(GatewayError):
    code = "missing_idempotency_fields"


class DuplicateTool(GatewayError):
    code = "duplicate_tool"


class HandlerMissing(GatewayError):
    code = "handler_missing"


class UnknownTenant(GatewayError):
    code = "unknown_tenant"


class UnknownTool(GatewayError):
    code = "unknown_tool"


# --- resolution --------------------------------------------------------------

class UnknownEntityType(GatewayError):
    code = "unknown_entity_type"


class NoMatch(GatewayError):
    """Empty candidate set after threshold/scope filtering.

    Carries the recovery payload contract: candidates (empty) and a
    suggestion the planner can act on.
    """

    code = "no_match"

    def __init__(self, message: str, *, suggestion: str, **details: Any) -> None:
        super().__init__(message, **details)
        self.suggestion = suggestion


class EmptyCandidates(GatewayError):
    code = "empty_candidates"


class EmptyQuery(GatewayError):
    code = "empty_query"


# --- protocol ----------------------------------------------------------------

class IllegalTransition(GatewayError):
    """A (state, verb) pair outside the transition relation.

    Names the offending state and verb plus the legal alternatives so the
    caller can self-correct.
    """

    code = "illegal_transition"

    def __init__(self, state: str, verb: str, legal: list[str]) -> None:
        super().__init__(
            f"no transition for verb {verb!r} in state {state!r}; legal: {legal}",
            state=state,
            verb=verb,
            legal=legal,
        )
        self.state = state
        self.verb = verb
        self.legal = legal


class VerbUnsupported(GatewayError):
    code = "verb_unsupported"


# --- contract ----------------------------------------------------------------

class InvalidContract(GatewayError):
    code = "invalid_contract"


class EmptySamples(GatewayError):
    code = "empty_samples"


# --- execution ---------------------------------------------------------------

class MissingKeyField(GatewayError):
    code = "missing_key_field"


class HandlerFailure(GatewayError):
    code = "handler_failure"


class ConflictingInFlight(GatewayError):
    code = "conflicting_in_flight"


class VerificationFailed(GatewayError):
    """Post-execution verify found persisted state diverging from intent."""

    code = "verification_failed"


class EntityVanished(GatewayError):
    code = "entity_vanished"


# --- approvals ---------------------------------------------------------------

class PersistenceFailure(GatewayError):
    code = "persistence_failure"


class DuplicateSubmission(GatewayError):
    code = "duplicate_submission"


class NotPending(GatewayError):
    code = "not_pending"


class AlreadyDecided(NotPending):
    """A second decision on a settled snapshot; carries the winning one."""

    code = "already_decided"

    def __init__(self, message: str, *, decision: dict[str, Any]) -> None:
        super().__init__(message, decision=decision)
        self.decision = decision


class ApproverNotAuthorized(GatewayError):
    code = "approver_not_authorized"


class EmptyRationale(GatewayError):
    code = "empty_rationale"


class NotApproved(GatewayError):
    code = "not_approved"


class DriftDetected(GatewayError):
    code = "drift_detected"


class SnapshotCorrupt(GatewayError):
    code = "snapshot_corrupt"


# --- gateway -----------------------------------------------------------------

class ParseError(GatewayError):
    """Fixture/config parse failure with location."""

    code = "parse_error"

    def __init__(self, message: str, *, line: int, column: int = 0, **details: Any) -> None:
        super().__init__(message, line=line, column=column, **details)
        self.line = line
        self.column = column


class InvalidTask(GatewayError):
    code = "invalid_task"


class ConfigError(GatewayError):
    code = "config_error"

"""agentgate: a gateway runtime for agent-first tools.

Tools register declaratively, interact through a six-verb protocol
(search, resolve, preview, execute, verify, recover), answer in a normalized
decision-support envelope, and execute under a six-layer governance pipeline
with dynamic risk escalation and human approval with suspend/resume.
"""

from .contract import (
    CalibrationReport,
    CalibrationTracker,
    NtcResponse,
    compute_ece,
    make_ntc,
    validate_ntc,
)
from .governance import (
    CapabilityMatrix,
    Principal,
    RequestFacts,
    RiskAssessment,
    ScopePath,
    assess_risk,
    check_capability,
    check_scope,
    validate_input_schema,
)
from .protocol import AutoPlanner, InteractionLoop, PlannerCallback, ProtocolState, Verb, transition
from .registry import PermissionPolicy, ToolDescriptor, ToolRegistry
from .resolution import (
    Candidate,
    CandidateSet,
    Entity,
    EntityStore,
    ResolutionThresholds,
    resolve_candidates,
    semantic_search,
)

__version__ = "0.1.0"

__all__ = [
    "AutoPlanner",
    "CalibrationReport",
    "CalibrationTracker",
    "Candidate",
    "CandidateSet",
    "CapabilityMatrix",
    "Entity",
    "EntityStore",
    "InteractionLoop",
    "NtcResponse",
    "PermissionPolicy",
    "PlannerCallback",
    "Principal",
    "ProtocolState",
    "RequestFacts",
    "ResolutionThresholds",
    "RiskAssessment",
    "ScopePath",
    "ToolDescriptor",
    "ToolRegistry",
    "Verb",
    "assess_risk",
    "check_capability",
    "check_scope",
    "compute_ece",
    "make_ntc",
    "resolve_candidates",
    "semantic_search",
    "transition",
    "validate_input_schema",
    "validate_ntc",
]

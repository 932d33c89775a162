"""Normalized tool contract: response envelope, calibration, ECE audit.

Every tool answer -- success or failure -- is delivered in one envelope a
planner can reason over: a natural-language answer, typed entity references,
confidence, evidence, and suggested next actions. Per-tool confidence is
calibrated by blending the author-assigned prior with the empirical success
rate over a sliding window of recent invocations.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import EmptySamples, InvalidContract, UnknownTool

TOOL_CONTRACT_VERSION = 1

CALIBRATION_WINDOW = 100
CALIBRATION_ALPHA = 0.3  # weight of the author-assigned prior
CALIBRATION_MIN_SAMPLES = 10  # below this the window is noise-dominant
REVIEW_FLAG_THRESHOLD = 0.5

ECE_BUCKETS = 10

# next_actions may point at a phase of a registered tool ("ticket.create.execute")
_PHASE_SUFFIXES = {
    "search": "semantic_search",
    "resolve": "resolve_candidates",
    "preview": "preview_action",
    "execute": "execute_action",
    "verify": "verify_result",
    "verify_result": "verify_result",
}


# --- response envelope ----------------------------------------------------------

@dataclass
class NtcResponse:
    ok: bool
    answer: str
    confidence: float
    tool_contract_version: int = TOOL_CONTRACT_VERSION
    result_refs: list[dict[str, Any]] = field(default_factory=list)
    requires_confirmation: bool = False
    evidence: list[dict[str, Any]] = field(default_factory=list)
    next_actions: list[dict[str, Any]] = field(default_factory=list)
    pending_approval_id: str | None = None
    error: dict[str, Any] | None = None

    def to_wire(self) -> dict[str, Any]:
        """Canonical wire form: fixed field order, optional fields only when set."""
        doc: dict[str, Any] = {
            "ok": self.ok,
            "answer": self.answer,
            "tool_contract_version": self.tool_contract_version,
            "result_refs": [dict(r) for r in self.result_refs],
            "requires_confirmation": self.requires_confirmation,
            "confidence": self.confidence,
            "evidence": [dict(e) for e in self.evidence],
            "next_actions": [dict(a) for a in self.next_actions],
        }
        if self.pending_approval_id is not None:
            doc["pending_approval_id"] = self.pending_approval_id
        if self.error is not None:
            doc["error"] = self.error
        return doc

    def canonical_json(self) -> str:
        return json.dumps(self.to_wire(), ensure_ascii=False, separators=(",", ":"))


def _normalize_ref(ref: Mapping[str, Any]) -> dict[str, Any]:
    for key in ("type", "id", "title"):
        if key not in ref:
            raise InvalidContract(f"result ref missing {key!r}: {dict(ref)!r}")
    return {
        "type": str(ref["type"]),
        "id": str(ref["id"]),
        "title": str(ref["title"]),
        "actions": [str(a) for a in ref.get("actions", [])],
    }


def _normalize_next_action(action: Mapping[str, Any]) -> dict[str, Any]:
    if "action" not in action:
        raise InvalidContract(f"next action missing 'action': {dict(action)!r}")
    ref_count = int(action.get("ref_count", 0))
    if ref_count < 0:
        raise InvalidContract(f"next action ref_count must be nonnegative, got {ref_count}")
    return {
        "action": str(action["action"]),
        "label": str(action.get("label", "")),
        "ref_count": ref_count,
    }


def make_ntc(
    ok: bool,
    answer: str,
    refs: Iterable[Mapping[str, Any]] = (),
    confidence: float = 0.0,
    evidence: Iterable[Mapping[str, Any]] = (),
    next_actions: Iterable[Mapping[str, Any]] = (),
    *,
    requires_confirmation: bool = False,
    pending_approval_id: str | None = None,
    error: Mapping[str, Any] | None = None,
) -> NtcResponse:
    """Build a canonical NTC response; out-of-range confidence is clamped
    with a warning evidence item rather than rejected."""
    if not ok and error is None:
        raise InvalidContract("ok=false responses must carry an error payload")
    if error is not None and "cause" not in error:
        raise InvalidContract("error payload must carry a 'cause'")

    evidence_items = [
        {"type": str(e["type"]), "detail": e.get("detail")} if "type" in e
        else _raise_invalid(f"evidence item missing 'type': {dict(e)!r}")
        for e in evidence
    ]
    clamped = min(1.0, max(0.0, float(confidence)))
    if clamped != confidence:
        evidence_items.append(
            {"type": "warning", "detail": {"rule": "confidence_clamped", "supplied": float(confidence)}}
        )
    return NtcResponse(
        ok=ok,
        answer=str(answer),
        confidence=clamped,
        result_refs=[_normalize_ref(r) for r in refs],
        requires_confirmation=requires_confirmation,
        evidence=evidence_items,
        next_actions=[_normalize_next_action(a) for a in next_actions],
        pending_approval_id=pending_approval_id,
        error=dict(error) if error is not None else None,
    )


def _raise_invalid(message: str) -> dict[str, Any]:
    raise InvalidContract(message)


def error_ntc(
    cause: str,
    message: str,
    *,
    candidates: Iterable[Mapping[str, Any]] = (),
    suggestion: str = "",
    evidence: Iterable[Mapping[str, Any]] = (),
) -> NtcResponse:
    """Failure envelope: ok=false plus the structured recovery contract."""
    return make_ntc(
        ok=False,
        answer=message,
        confidence=0.0,
        evidence=evidence,
        error={
            "cause": cause,
            "candidates": [dict(c) for c in candidates],
            "suggestion": suggestion,
        },
    )


def action_names_tool(action: str, known_tools: set[str]) -> bool:
    if action in known_tools:
        return True
    base, _, suffix = action.rpartition(".")
    return bool(base) and base in known_tools and suffix in _PHASE_SUFFIXES


def validate_ntc(document: Any, *, known_tools: set[str] | None = None) -> list[dict[str, Any]]:
    """Conformance check; violations are data, each naming path and rule."""
    violations: list[dict[str, Any]] = []

    def bad(path: str, rule: str, hint: str) -> None:
        violations.append({"path": path, "rule": rule, "hint": hint})

    if not isinstance(document, Mapping):
        return [{"path": "$", "rule": "type", "hint": "NTC document must be an object"}]

    if not isinstance(document.get("ok"), bool):
        bad("ok", "type", "ok must be a boolean")
    if not isinstance(document.get("answer"), str):
        bad("answer", "type", "answer must be a string")
    if document.get("tool_contract_version") != TOOL_CONTRACT_VERSION:
        bad("tool_contract_version", "const", f"tool_contract_version must be {TOOL_CONTRACT_VERSION}")

    confidence = document.get("confidence")
    if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
        bad("confidence", "type", "confidence must be a number")
    elif not (0.0 <= float(confidence) <= 1.0):
        bad("confidence", "range", "confidence must lie in [0,1]")

    refs = document.get("result_refs")
    if not isinstance(refs, Sequence) or isinstance(refs, (str, bytes)):
        bad("result_refs", "type", "result_refs must be an array")
    else:
        for i, ref in enumerate(refs):
            if not isinstance(ref, Mapping):
                bad(f"result_refs[{i}]", "type", "ref must be an object")
                continue
            for key in ("type", "id", "title"):
                if not isinstance(ref.get(key), str):
                    bad(f"result_refs[{i}].{key}", "type", f"{key} must be a string")
            if not isinstance(ref.get("actions", []), Sequence) or isinstance(ref.get("actions", []), str):
                bad(f"result_refs[{i}].actions", "type", "actions must be an array of tool names")

    if not isinstance(document.get("requires_confirmation"), bool):
        bad("requires_confirmation", "type", "requires_confirmation must be a boolean")
    elif document["requires_confirmation"] and document.get("pending_approval_id") is None and document.get("ok") is not True:
        # confirmations are either previews awaiting confirm (ok=true) or
        # suspended invocations, which must carry the pending approval id
        bad("pending_approval_id", "required", "suspended responses must carry pending_approval_id")

    evidence = document.get("evidence")
    if not isinstance(evidence, Sequence) or isinstance(evidence, (str, bytes)):
        bad("evidence", "type", "evidence must be an array")
    else:
        for i, item in enumerate(evidence):
            if not isinstance(item, Mapping) or not isinstance(item.get("type"), str):
                bad(f"evidence[{i}].type", "type", "evidence items must be objects with a string type")

    actions = document.get("next_actions")
    if not isinstance(actions, Sequence) or isinstance(actions, (str, bytes)):
        bad("next_actions", "type", "next_actions must be an array")
    else:
        for i, item in enumerate(actions):
            if not isinstance(item, Mapping):
                bad(f"next_actions[{i}]", "type", "next action must be an object")
                continue
            name = item.get("action")
            if not isinstance(name, str):
                bad(f"next_actions[{i}].action", "type", "action must be a tool name string")
            elif known_tools is not None and not action_names_tool(name, known_tools):
                bad(f"next_actions[{i}].action", "registered", f"{name!r} is not a registered tool")
            if not isinstance(item.get("label", ""), str):
                bad(f"next_actions[{i}].label", "type", "label must be a string")
            ref_count = item.get("ref_count", 0)
            if not isinstance(ref_count, int) or isinstance(ref_count, bool) or ref_count < 0:
                bad(f"next_actions[{i}].ref_count", "range", "ref_count must be a nonnegative integer")

    if document.get("ok") is False and not isinstance(document.get("error"), Mapping):
        bad("error", "required", "ok=false responses must carry an error object")
    elif isinstance(document.get("error"), Mapping) and not isinstance(document["error"].get("cause"), str):
        bad("error.cause", "type", "error.cause must be a string")

    return violations


# --- confidence calibration -------------------------------------------------------

@dataclass
class CalibrationState:
    outcomes: deque = field(default_factory=lambda: deque(maxlen=CALIBRATION_WINDOW))

    def window_rate(self) -> float:
        return sum(self.outcomes) / len(self.outcomes)


class CalibrationTracker:
    """Sliding-window success tracking and confidence blending per tool.

    calibrated = alpha * static + (1 - alpha) * window_rate once the window
    holds at least ``min_samples`` outcomes; before that the author-assigned
    prior stands alone. Updates are atomic per tool.
    """

    def __init__(
        self,
        static_confidence: Callable[[str], float],
        *,
        is_registered: Callable[[str], bool] | None = None,
        review_hook: Callable[[str, float], None] | None = None,
        window: int = CALIBRATION_WINDOW,
        min_samples: int = CALIBRATION_MIN_SAMPLES,
    ) -> None:
        self._static_confidence = static_confidence
        self._is_registered = is_registered
        self._review_hook = review_hook
        self._window = window
        self._min_samples = min_samples
        self._states: dict[str, CalibrationState] = {}
        self._lock = threading.Lock()

    def _check(self, tool: str) -> None:
        if self._is_registered is not None and not self._is_registered(tool):
            raise UnknownTool(f"tool {tool!r} is not registered", tool=tool)

    def record_outcome(self, tool: str, success: bool) -> CalibrationState:
        self._check(tool)
        with self._lock:
            state = self._states.setdefault(
                tool, CalibrationState(outcomes=deque(maxlen=self._window))
            )
            state.outcomes.append(bool(success))
            return state

    def window_length(self, tool: str) -> int:
        state = self._states.get(tool)
        return len(state.outcomes) if state else 0

    def calibrated_confidence(self, tool: str) -> float:
        self._check(tool)
        static = float(self._static_confidence(tool))
        with self._lock:
            state = self._states.get(tool)
            if state is None or len(state.outcomes) < self._min_samples:
                value = static
            else:
                value = CALIBRATION_ALPHA * static + (1.0 - CALIBRATION_ALPHA) * state.window_rate()
        if value < REVIEW_FLAG_THRESHOLD and self._review_hook is not None:
            self._review_hook(tool, value)
        return value

    def reset(self, tool: str) -> None:
        with self._lock:
            self._states.pop(tool, None)


# --- calibration audit (ECE) --------------------------------------------------------

@dataclass(frozen=True)
class CalibrationBucket:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "count": self.count,
            "mean_confidence": self.mean_confidence,
            "accuracy": self.accuracy,
        }


@dataclass(frozen=True)
class CalibrationReport:
    buckets: tuple[CalibrationBucket, ...]
    ece: float
    sample_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "buckets": [b.to_dict() for b in self.buckets],
            "ece": self.ece,
            "sample_count": self.sample_count,
        }


def compute_ece(samples: Sequence[Mapping[str, Any]]) -> CalibrationReport:
    """Bucketed expected calibration error over (confidence, correct) samples.

    Ten equal-width buckets with a right-inclusive top bucket, so confidence
    1.0 lands in [0.9, 1.0]. ECE is the count-weighted mean absolute gap
    between mean confidence and empirical accuracy over nonempty buckets.
    """
    if not samples:
        raise EmptySamples("compute_ece requires at least one sample")
    parsed: list[tuple[float, bool]] = []
    for i, sample in enumerate(samples):
        confidence = float(sample["confidence"])
        if not (0.0 <= confidence <= 1.0):
            raise InvalidContract(f"sample {i}: confidence {confidence} outside [0,1]")
        parsed.append((confidence, bool(sample["correct"])))

    grouped: dict[int, list[tuple[float, bool]]] = {}
    for confidence, correct in parsed:
        idx = min(int(confidence * ECE_BUCKETS), ECE_BUCKETS - 1)
        grouped.setdefault(idx, []).append((confidence, correct))

    total = len(parsed)
    buckets: list[CalibrationBucket] = []
    ece = 0.0
    for idx in range(ECE_BUCKETS):
        members = grouped.get(idx, [])
        if members:
            mean_conf = sum(c for c, _ in members) / len(members)
            accuracy = sum(1 for _, ok in members if ok) / len(members)
            ece += (len(members) / total) * abs(accuracy - mean_conf)
        else:
            mean_conf = 0.0
            accuracy = 0.0
        buckets.append(
            CalibrationBucket(
                lower=idx / ECE_BUCKETS,
                upper=(idx + 1) / ECE_BUCKETS,
                count=len(members),
                mean_confidence=mean_conf,
                accuracy=accuracy,
            )
        )
    return CalibrationReport(buckets=tuple(buckets), ece=ece, sample_count=total)

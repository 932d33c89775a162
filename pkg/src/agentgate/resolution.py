"""Entity store with deterministic fuzzy search and candidate resolution.

Descriptive queries ("downtown branch") are scored against entity titles and
attribute values with a dependency-free lexical scorer: the mean of token-set
Jaccard and character-trigram multiset Jaccard, with exact case-insensitive
title matches forced to 1.0. Deterministic by construction so identical
queries over identical stores always produce byte-identical candidate sets.
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterator, Mapping

from .errors import ConfigError, EmptyCandidates, EmptyQuery, NoMatch, UnknownEntityType
from .governance import ScopePath, scope_contains

MAX_CANDIDATES = 10  # bounded disambiguation prompts

DEFAULT_TAU_S = 0.30
DEFAULT_TAU_R = 0.70
DEFAULT_MARGIN = 0.15


# --- types --------------------------------------------------------------------

@dataclass
class Entity:
    """One addressable object: (type, id) unique within the store."""

    type: str
    id: str
    title: str
    attributes: dict[str, Any] = field(default_factory=dict)
    scope_path: ScopePath = None  # type: ignore[assignment]

    def ref(self) -> dict[str, Any]:
        return {"type": self.type, "id": self.id, "title": self.title}

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": self.type,
            "id": self.id,
            "title": self.title,
            "attributes": dict(self.attributes),
            "scope": self.scope_path.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Entity":
        return cls(
            type=data["type"],
            id=data["id"],
            title=data["title"],
            attributes=dict(data.get("attributes", {})),
            scope_path=ScopePath.from_dict(data["scope"]),
        )

    def clone(self) -> "Entity":
        return replace(self, attributes=dict(self.attributes))


@dataclass(frozen=True)
class Candidate:
    entity: Entity
    score: float

    def to_dict(self) -> dict[str, Any]:
        return {"entity": self.entity.ref(), "score": self.score}


@dataclass(frozen=True)
class ResolutionThresholds:
    """tau_s: relevance floor; tau_r: auto-resolve floor; margin: top-1/2 gap."""

    tau_s: float = DEFAULT_TAU_S
    tau_r: float = DEFAULT_TAU_R
    margin: float = DEFAULT_MARGIN

    def __post_init__(self) -> None:
        if not (0.0 <= self.tau_s <= self.tau_r <= 1.0):
            raise ConfigError(f"thresholds must satisfy 0 <= tau_s <= tau_r <= 1, got {self}")
        if not (0.0 <= self.margin <= 1.0):
            raise ConfigError(f"margin must lie in [0,1], got {self.margin}")

    def to_dict(self) -> dict[str, float]:
        return {"tau_s": self.tau_s, "tau_r": self.tau_r, "margin": self.margin}


@dataclass(frozen=True)
class CandidateSet:
    """Ranked candidates, descending score, ties broken by ascending id."""

    candidates: tuple[Candidate, ...]
    query: str
    thresholds: ResolutionThresholds

    def __len__(self) -> int:
        return len(self.candidates)

    def top(self) -> Candidate:
        return self.candidates[0]

    def scores(self) -> list[float]:
        return [c.score for c in self.candidates]

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "thresholds": self.thresholds.to_dict(),
            "candidates": [c.to_dict() for c in self.candidates],
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class Resolution:
    """Outcome of the R verb: either one entity or a disambiguation prompt."""

    auto: bool
    entity: Entity | None = None
    candidates: CandidateSet | None = None


# --- lexical scorer -------------------------------------------------------------

def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def token_jaccard(a: str, b: str) -> float:
    sa, sb = set(a.split()), set(b.split())
    if not sa and not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def _trigrams(text: str) -> Counter:
    if len(text) < 3:
        return Counter({text: 1}) if text else Counter()
    return Counter(text[i : i + 3] for i in range(len(text) - 2))


def trigram_jaccard(a: str, b: str) -> float:
    ca, cb = _trigrams(a), _trigrams(b)
    union = sum((ca | cb).values())
    if union == 0:
        return 0.0
    return sum((ca & cb).values()) / union


def lexical_score(query: str, text: str, *, exact_boost: bool = False) -> float:
    """Similarity in [0,1]; exact normalized match forces 1.0 when boosted."""
    q, t = normalize_text(query), normalize_text(text)
    if not q or not t:
        return 0.0
    if exact_boost and q == t:
        return 1.0
    return 0.5 * token_jaccard(q, t) + 0.5 * trigram_jaccard(q, t)


def score_entity(query: str, entity: Entity) -> float:
    # per-field scoring: title (with exact-match boost) plus every attribute
    # value; the best field wins so attribute mentions still rank
    best = lexical_score(query, entity.title, exact_boost=True)
    for value in entity.attributes.values():
        if isinstance(value, str):
            best = max(best, lexical_score(query, value))
    return best


# --- entity store ----------------------------------------------------------------

class EntityStore:
    """In-memory entity store with a single-writer transactional commit path.

    Reads never block. Mutations go through ``transaction()``, which either
    fully applies or restores the pre-call state, and serialize on one lock.
    """

    def __init__(self) -> None:
        self._entities: dict[tuple[str, str], Entity] = {}
        self._known_types: set[str] = set()
        self._id_formats: dict[str, str] = {}
        self._id_seq: dict[str, int] = {}
        self._write_lock = threading.RLock()
        self._in_txn = False

    # -- registration / configuration

    def register_type(self, entity_type: str, *, id_format: str = "{type}_{seq:04d}", next_seq: int = 1) -> None:
        with self._write_lock:
            self._known_types.add(entity_type)
            self._id_formats.setdefault(entity_type, id_format)
            self._id_seq.setdefault(entity_type, next_seq)

    def known_types(self) -> set[str]:
        return set(self._known_types)

    def allocate_id(self, entity_type: str) -> str:
        with self._write_lock:
            if entity_type not in self._known_types:
                raise UnknownEntityType(f"unknown entity type {entity_type!r}")
            seq = self._id_seq[entity_type]
            self._id_seq[entity_type] = seq + 1
            return self._id_formats[entity_type].format(type=entity_type, seq=seq)

    # -- reads

    def get(self, entity_type: str, entity_id: str) -> Entity | None:
        return self._entities.get((entity_type, entity_id))

    def by_type(self, entity_type: str) -> list[Entity]:
        return sorted(
            (e for (t, _), e in self._entities.items() if t == entity_type),
            key=lambda e: e.id,
        )

    def all_entities(self) -> list[Entity]:
        return sorted(self._entities.values(), key=lambda e: (e.type, e.id))

    def __len__(self) -> int:
        return len(self._entities)

    def snapshot_hash(self) -> str:
        doc = [e.to_dict() for e in self.all_entities()]
        payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(payload).hexdigest()

    # -- writes

    def upsert(self, entity: Entity) -> Entity:
        if entity.scope_path is None:
            raise ConfigError(f"entity {entity.type}/{entity.id} has no scope")
        with self._write_lock:
            self._known_types.add(entity.type)
            self._id_formats.setdefault(entity.type, "{type}_{seq:04d}")
            self._id_seq.setdefault(entity.type, 1)
            self._entities[(entity.type, entity.id)] = entity
            return entity

    def delete(self, entity_type: str, entity_id: str) -> None:
        with self._write_lock:
            self._entities.pop((entity_type, entity_id), None)

    @contextmanager
    def transaction(self) -> Iterator["EntityStore"]:
        """All-or-nothing mutation boundary (single writer)."""
        with self._write_lock:
            saved_entities = {key: entity.clone() for key, entity in self._entities.items()}
            saved_seq = dict(self._id_seq)
            saved_types = set(self._known_types)
            try:
                yield self
            except BaseException:
                self._entities = saved_entities
                self._id_seq = saved_seq
                self._known_types = saved_types
                raise


# --- the S and R verbs -------------------------------------------------------------

def semantic_search(
    store: EntityStore,
    tenant: str,
    entity_type: str,
    query: str,
    thresholds: ResolutionThresholds | None = None,
    scope: ScopePath | None = None,
    extra_filter: Callable[[Entity], bool] | None = None,
) -> CandidateSet:
    """Rank the tenant's visible entities of one type against a free-text query.

    Every returned candidate scores at least tau_s and lies within ``scope``.
    Raises NoMatch (with recovery guidance) when nothing survives filtering.
    """
    thresholds = thresholds or ResolutionThresholds()
    if not query or not query.strip():
        raise EmptyQuery("query must be nonempty")
    if entity_type not in store.known_types():
        raise UnknownEntityType(f"unknown entity type {entity_type!r}")

    scored: list[Candidate] = []
    for entity in store.by_type(entity_type):
        if entity.scope_path.tenant != tenant:
            continue
        if scope is not None and not scope_contains(scope, entity.scope_path):
            continue
        if extra_filter is not None and not extra_filter(entity):
            continue
        score = score_entity(query, entity)
        if score >= thresholds.tau_s:
            scored.append(Candidate(entity=entity, score=score))

    scored.sort(key=lambda c: (-c.score, c.entity.id))
    scored = scored[:MAX_CANDIDATES]
    if not scored:
        raise NoMatch(
            f"no {entity_type} matched {query!r}",
            suggestion=f"broaden the query or list known {entity_type} entities",
            entity_type=entity_type,
            query=query,
        )
    return CandidateSet(candidates=tuple(scored), query=query, thresholds=thresholds)


def resolve_candidates(candidates: CandidateSet, thresholds: ResolutionThresholds | None = None) -> Resolution:
    """Auto-resolve a singleton or a confidently separated top candidate.

    Auto-resolution requires either exactly one candidate, or a top score at
    or above tau_r with a top-1/top-2 gap of at least ``margin``; anything
    else comes back as a disambiguation prompt with the full ranked set.
    """
    thresholds = thresholds or candidates.thresholds
    if len(candidates) == 0:
        raise EmptyCandidates("cannot resolve an empty candidate set")
    top = candidates.top()
    if len(candidates) == 1:
        return Resolution(auto=True, entity=top.entity)
    gap = top.score - candidates.candidates[1].score
    if top.score >= thresholds.tau_r and gap >= thresholds.margin:
        return Resolution(auto=True, entity=top.entity)
    return Resolution(auto=False, candidates=candidates)

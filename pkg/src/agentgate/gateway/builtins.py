"""Built-in handler factories for fixture-registered tools.

A tool's fixture line names a handler kind plus a config block; the factory
returns the verb->callable bindings the registry stores. The generic kinds
(entity_search, entity_create, entity_update, bulk import) cover descriptor-
driven tools; the ticket kinds add the domain behavior (overdue counting,
shift-based auto-assignment, pinned fixture confidences) the bundled demo
store exercises.
"""

from __future__ import annotations

from typing import Any, Callable, Mapping

from ..errors import HandlerFailure, NoMatch
from ..execution import (
    ExecuteOutcome,
    ExecutionResult,
    PreviewOutcome,
    SearchOutcome,
    VerifyOutcome,
    generic_verify,
)
from ..governance import scope_contains
from ..invocation import InvocationContext
from ..resolution import (
    Candidate,
    CandidateSet,
    Entity,
    EntityStore,
    ResolutionThresholds,
    semantic_search,
)

# floor used when fishing an entity mention out of a longer descriptive query
EXTRACTION_TAU_S = 0.05


def _match_filters(entity: Entity, filters: Mapping[str, Any] | None) -> bool:
    if not filters:
        return True
    return all(entity.attributes.get(k) == v for k, v in filters.items())


def _visible_sorted(store: EntityStore, ctx: InvocationContext, entity_type: str) -> list[Entity]:
    return [
        e
        for e in store.by_type(entity_type)
        if e.scope_path.tenant == ctx.tool.tenant and scope_contains(ctx.caller.scope, e.scope_path)
    ]


def store_backed_verify(
    ctx: InvocationContext,
    result: ExecutionResult,
    intent: str,
    params: dict[str, Any],
    store: EntityStore,
) -> VerifyOutcome:
    """Default V binding: re-read affected entities and compare field-by-field."""
    return generic_verify(store, result, params)


# --- generic kinds -----------------------------------------------------------------

def entity_search_handlers(config: Mapping[str, Any]) -> dict[str, Callable]:
    entity_type = config["entity_type"]
    query_field = config.get("query_field", "query")
    ref_actions = list(config.get("ref_actions", []))

    def search(ctx: InvocationContext, raw: dict[str, Any], store: EntityStore) -> SearchOutcome:
        query = raw.get(query_field) or ctx.intent
        filters = raw.get("filters") or {}
        candidates = semantic_search(
            store,
            ctx.tool.tenant,
            entity_type,
            query,
            ctx.thresholds,
            ctx.caller.scope,
            extra_filter=lambda e: _match_filters(e, filters),
        )
        refs = [{**c.entity.ref(), "actions": ref_actions} for c in candidates.candidates]
        return SearchOutcome(
            candidates=candidates,
            answer=f"Found {len(candidates)} {entity_type} match(es) for '{query}'.",
            result_refs=refs,
            evidence=[
                {"type": "count", "detail": {"total": len(candidates)}},
                {
                    "type": "match",
                    "detail": {
                        "top": candidates.top().entity.title,
                        "match_score": round(candidates.top().score, 4),
                    },
                },
            ],
        )

    return {"semantic_search": search}


def entity_update_handlers(config: Mapping[str, Any]) -> dict[str, Callable]:
    entity_type = config["entity_type"]
    query_field = config.get("query_field", "query")
    updatable = list(config.get("updatable", []))
    fixed_updates = dict(config.get("fixed_updates", {}))

    def search(ctx: InvocationContext, raw: dict[str, Any], store: EntityStore) -> SearchOutcome:
        query = raw.get(query_field) or ctx.intent
        candidates = semantic_search(
            store, ctx.tool.tenant, entity_type, query, ctx.thresholds, ctx.caller.scope
        )
        return SearchOutcome(candidates=candidates)

    def resolve_params(ctx: InvocationContext, entity: Entity | None, store: EntityStore) -> dict[str, Any]:
        params = {k: v for k, v in ctx.raw_input.items() if k != query_field}
        if entity is not None:
            params[query_field] = entity.id
        return params

    def _updates(params: Mapping[str, Any]) -> dict[str, Any]:
        updates = {k: params[k] for k in updatable if k in params}
        updates.update(fixed_updates)
        return updates

    def _target(ctx: InvocationContext, params: Mapping[str, Any], store: EntityStore) -> Entity:
        entity = store.get(entity_type, str(params.get(query_field, "")))
        if entity is None:
            raise HandlerFailure(f"{entity_type} {params.get(query_field)!r} not found")
        return entity

    def target_entities(ctx: InvocationContext, params: dict[str, Any], store: EntityStore) -> list[Entity]:
        # governance checks the entity the params actually point at, which
        # may differ from the search result if the planner injected an id
        entity = store.get(entity_type, str(params.get(query_field, "")))
        return [entity] if entity is not None else []

    def preview(ctx: InvocationContext, params: dict[str, Any], store: EntityStore) -> PreviewOutcome:
        entity = _target(ctx, params, store)
        updates = _updates(params)
        changes = [
            {
                "entity": entity.ref(),
                "field": field,
                "before": entity.attributes.get(field),
                "after": value,
            }
            for field, value in sorted(updates.items())
        ]
        return PreviewOutcome(
            answer=f"Ready to update {entity.title}: {len(changes)} field(s) change.",
            changes=changes,
            result_refs=[{**entity.ref(), "actions": []}],
            evidence=[{"type": "diff", "detail": {"changes": changes}}],
            next_actions=[
                {"action": f"{ctx.tool.name}.execute", "label": "Confirm and apply", "ref_count": 1}
            ],
        )

    def execute(ctx: InvocationContext, params: dict[str, Any], store: EntityStore) -> ExecuteOutcome:
        entity = _target(ctx, params, store)
        updates = _updates(params)
        for field, value in updates.items():
            entity.attributes[field] = value
        store.upsert(entity)
        return ExecuteOutcome(
            answer=f"Updated {entity.title}: {', '.join(sorted(updates))}.",
            payload={"updated": sorted(updates)},
            result_refs=[{**entity.ref(), "actions": []}],
            evidence=[{"type": "updated", "detail": {"id": entity.id, "fields": sorted(updates)}}],
            affected=[(entity.type, entity.id)],
        )

    return {
        "semantic_search": search,
        "resolve_params": resolve_params,
        "target_entities": target_entities,
        "preview_action": preview,
        "execute_action": execute,
        "verify_result": store_backed_verify,
    }


# --- ticket domain ------------------------------------------------------------------

def ticket_search_handlers(config: Mapping[str, Any]) -> dict[str, Callable]:
    pinned_confidence = config.get("pinned_confidence")
    pinned_match_score = config.get("pinned_match_score")
    ref_actions = list(config.get("ref_actions", ["ticket.update", "ticket.close"]))

    def search(ctx: InvocationContext, raw: dict[str, Any], store: EntityStore) -> SearchOutcome:
        query = raw["query"]
        filters = raw.get("filters") or {}

        target_store: Entity | None = None
        try:
            # the store mention is buried in a longer sentence, so extract it
            # with a permissive relevance floor
            store_candidates = semantic_search(
                store,
                ctx.tool.tenant,
                "store",
                query,
                ResolutionThresholds(tau_s=EXTRACTION_TAU_S, tau_r=ctx.thresholds.tau_r, margin=ctx.thresholds.margin),
                ctx.caller.scope,
            )
            target_store = store_candidates.top().entity
        except NoMatch:
            target_store = None

        if target_store is not None:
            tickets = [
                t
                for t in _visible_sorted(store, ctx, "ticket")
                if t.attributes.get("store_id") == target_store.id and _match_filters(t, filters)
            ]
            candidates = CandidateSet(
                candidates=tuple(Candidate(entity=t, score=1.0) for t in tickets),
                query=query,
                thresholds=ctx.thresholds,
            )
            if not tickets:
                raise NoMatch(
                    f"no tickets matched {query!r} at {target_store.title}",
                    suggestion="broaden the query or drop the filters",
                    query=query,
                )
        else:
            candidates = semantic_search(
                store,
                ctx.tool.tenant,
                "ticket",
                query,
                ctx.thresholds,
                ctx.caller.scope,
                extra_filter=lambda e: _match_filters(e, filters),
            )
            tickets = [c.entity for c in candidates.candidates]

        overdue = sum(1 for t in tickets if t.attributes.get("overdue_days", 0) > 0)
        categories = {t.attributes.get("category", "") for t in tickets}
        category = categories.pop() if len(categories) == 1 else "matching"
        status = filters.get("status", "open")
        place = f" at {target_store.title}" if target_store is not None else ""
        answer = f"Found {len(tickets)} {status} {category} tickets{place}, {overdue} are overdue."

        evidence: list[dict[str, Any]] = [
            {"type": "count", "detail": {"total": len(tickets), "overdue": overdue}}
        ]
        if target_store is not None:
            evidence.append(
                {
                    "type": "match",
                    "detail": {
                        "store": target_store.title,
                        "match_score": pinned_match_score
                        if pinned_match_score is not None
                        else round(candidates.top().score, 4),
                    },
                }
            )
        next_actions = []
        if overdue:
            next_actions = [
                {
                    "action": "ticket.update",
                    "label": "Update priority of overdue tickets",
                    "ref_count": overdue,
                },
                {
                    "action": "ticket.escalate",
                    "label": "Escalate overdue tickets to manager",
                    "ref_count": overdue,
                },
            ]
        return SearchOutcome(
            candidates=candidates,
            answer=answer,
            result_refs=[{**t.ref(), "actions": ref_actions} for t in tickets],
            evidence=evidence,
            next_actions=next_actions,
            confidence=pinned_confidence,
        )

    return {"semantic_search": search}


def _assignee_for(store: EntityStore, ctx: InvocationContext, store_entity: Entity, shift: str) -> Entity | None:
    users = [
        u
        for u in store.by_type("user")
        if u.scope_path.tenant == ctx.tool.tenant
        and u.scope_path.store == store_entity.id
        and u.attributes.get("shift") == shift
    ]
    return users[0] if users else None


def ticket_create_handlers(config: Mapping[str, Any]) -> dict[str, Callable]:
    pinned = config.get("pinned_confidence", {})
    sla_hours = int(config.get("sla_hours", 48))
    shift = config.get("assign_shift", "morning")
    assign_rule = config.get("assign_rule", "shift_based")

    def search(ctx: InvocationContext, raw: dict[str, Any], store: EntityStore) -> SearchOutcome:
        return SearchOutcome(
            candidates=semantic_search(
                store, ctx.tool.tenant, "store", raw["store"], ctx.thresholds, ctx.caller.scope
            )
        )

    def resolve_params(ctx: InvocationContext, entity: Entity | None, store: EntityStore) -> dict[str, Any]:
        params = dict(ctx.raw_input)
        if entity is not None:
            params["store"] = entity.id
        params.setdefault("priority", "medium")
        return params

    def _store_entity(params: Mapping[str, Any], store: EntityStore) -> Entity:
        entity = store.get("store", str(params["store"]))
        if entity is None:
            raise HandlerFailure(f"store {params['store']!r} not found")
        return entity

    def target_entities(ctx: InvocationContext, params: dict[str, Any], store: EntityStore) -> list[Entity]:
        entity = store.get("store", str(params.get("store", "")))
        return [entity] if entity is not None else []

    def preview(ctx: InvocationContext, params: dict[str, Any], store: EntityStore) -> PreviewOutcome:
        store_entity = _store_entity(params, store)
        assignee = _assignee_for(store, ctx, store_entity, shift)
        resolution_score = pinned.get("resolution", 0.95)
        answer = (
            f"Ready to create ticket. Resolved store to {store_entity.title} "
            f"(confidence {resolution_score:.2f})."
        )
        refs = [{**store_entity.ref(), "actions": []}]
        evidence = [
            {
                "type": "resolution",
                "detail": {
                    "field": "store",
                    "input": ctx.raw_input.get("store", params["store"]),
                    "resolved": store_entity.title,
                    "score": resolution_score,
                },
            }
        ]
        if assignee is not None:
            answer += f" Auto-assigned to {assignee.title} ({shift} shift)."
            refs.append({**assignee.ref(), "actions": []})
            evidence.append(
                {"type": "auto_assign", "detail": {"rule": assign_rule, "assignee": assignee.title}}
            )
        return PreviewOutcome(
            answer=answer,
            creations=[
                {
                    "type": "ticket",
                    "title": params["title"],
                    "fields": {
                        "category": params.get("category"),
                        "priority": params.get("priority", "medium"),
                        "store_id": store_entity.id,
                    },
                }
            ],
            result_refs=refs,
            evidence=evidence,
            next_actions=[
                {
                    "action": f"{ctx.tool.name}.execute",
                    "label": "Confirm and create ticket",
                    "ref_count": 1,
                }
            ],
            confidence=pinned.get("preview"),
        )

    def execute(ctx: InvocationContext, params: dict[str, Any], store: EntityStore) -> ExecuteOutcome:
        store_entity = _store_entity(params, store)
        assignee = _assignee_for(store, ctx, store_entity, shift)
        ticket_id = store.allocate_id("ticket")
        entity = Entity(
            type="ticket",
            id=ticket_id,
            title=params["title"],
            attributes={
                "title": params["title"],
                "category": params.get("category"),
                "priority": params.get("priority", "medium"),
                "status": "open",
                "store_id": store_entity.id,
                "assignee_id": assignee.id if assignee else None,
                "sla_hours": sla_hours,
                "overdue_days": 0,
            },
            scope_path=store_entity.scope_path,
        )
        store.upsert(entity)
        return ExecuteOutcome(
            answer=f"Ticket {ticket_id} created successfully.",
            payload={"id": ticket_id},
            result_refs=[
                {**entity.ref(), "actions": ["ticket.update", "ticket.verify"]}
            ],
            evidence=[{"type": "created", "detail": {"id": ticket_id, "sla_hours": sla_hours}}],
            next_actions=[
                {
                    "action": "ticket.verify_result",
                    "label": "Verify ticket was created correctly",
                    "ref_count": 1,
                }
            ],
            confidence=pinned.get("execute"),
            affected=[("ticket", ticket_id)],
            verify_map={"store": "store_id"},
        )

    return {
        "semantic_search": search,
        "resolve_params": resolve_params,
        "target_entities": target_entities,
        "preview_action": preview,
        "execute_action": execute,
        "verify_result": store_backed_verify,
    }


def ticket_bulk_import_handlers(config: Mapping[str, Any]) -> dict[str, Callable]:
    def search(ctx: InvocationContext, raw: dict[str, Any], store: EntityStore) -> SearchOutcome:
        return SearchOutcome(
            candidates=semantic_search(
                store, ctx.tool.tenant, "store", raw["store"], ctx.thresholds, ctx.caller.scope
            )
        )

    def resolve_params(ctx: InvocationContext, entity: Entity | None, store: EntityStore) -> dict[str, Any]:
        params = dict(ctx.raw_input)
        if entity is not None:
            params["store"] = entity.id
        return params

    def preview(ctx: InvocationContext, params: dict[str, Any], store: EntityStore) -> PreviewOutcome:
        items = list(params.get("items", []))
        store_entity = store.get("store", str(params["store"]))
        title = store_entity.title if store_entity else params["store"]
        return PreviewOutcome(
            answer=f"Ready to import {len(items)} tickets into {title}.",
            creations=[{"type": "ticket", "title": item} for item in items],
            result_refs=[{**store_entity.ref(), "actions": []}] if store_entity else [],
            evidence=[{"type": "count", "detail": {"to_create": len(items)}}],
            next_actions=[
                {"action": f"{ctx.tool.name}.execute", "label": "Confirm import", "ref_count": len(items)}
            ],
        )

    def execute(ctx: InvocationContext, params: dict[str, Any], store: EntityStore) -> ExecuteOutcome:
        store_entity = store.get("store", str(params["store"]))
        if store_entity is None:
            raise HandlerFailure(f"store {params['store']!r} not found")
        created = []
        for item in params.get("items", []):
            ticket_id = store.allocate_id("ticket")
            store.upsert(
                Entity(
                    type="ticket",
                    id=ticket_id,
                    title=str(item),
                    attributes={
                        "title": str(item),
                        "category": params.get("category", "maintenance"),
                        "priority": "medium",
                        "status": "open",
                        "store_id": store_entity.id,
                        "overdue_days": 0,
                    },
                    scope_path=store_entity.scope_path,
                )
            )
            created.append(ticket_id)
        return ExecuteOutcome(
            answer=f"Imported {len(created)} tickets into {store_entity.title}.",
            payload={"created": created},
            result_refs=[
                {"type": "ticket", "id": tid, "title": str(item), "actions": []}
                for tid, item in zip(created, params.get("items", []))
            ],
            evidence=[{"type": "created", "detail": {"count": len(created)}}],
            affected=[("ticket", tid) for tid in created],
        )

    def target_entities(ctx: InvocationContext, params: dict[str, Any], store: EntityStore) -> list[Entity]:
        entity = store.get("store", str(params.get("store", "")))
        return [entity] if entity is not None else []

    return {
        "semantic_search": search,
        "resolve_params": resolve_params,
        "target_entities": target_entities,
        "preview_action": preview,
        "execute_action": execute,
    }


HANDLER_KINDS: dict[str, Callable[[Mapping[str, Any]], dict[str, Callable]]] = {
    "entity_search": entity_search_handlers,
    "entity_update": entity_update_handlers,
    "ticket_search": ticket_search_handlers,
    "ticket_create": ticket_create_handlers,
    "ticket_bulk_import": ticket_bulk_import_handlers,
}


def build_handlers(kind: str, config: Mapping[str, Any] | None = None) -> dict[str, Callable]:
    if kind not in HANDLER_KINDS:
        raise HandlerFailure(f"unknown handler kind {kind!r} (choose from {sorted(HANDLER_KINDS)})")
    return HANDLER_KINDS[kind](config or {})

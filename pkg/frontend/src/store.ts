import type {
  ApprovalSummary,
  ConnectionState,
  LifecycleEvent,
  RiskFactor,
} from "./types.js";

/** The console's row model: everything an approver sees for one snapshot. */
export interface InboxRow {
  pendingApprovalId: string;
  tool: string;
  requester: string;
  tenant: string;
  createdAt: number;
  status: "pending" | "approved" | "rejected" | "expired";
  finalRiskLevel: number | null;
  finalRiskName: string;
  triggeredFactors: RiskFactor[];
  affectedCount: number | null;
  approver: string | null;
  rationale: string | null;
  resultText: string | null;
  resultOk: boolean | null;
  /** transient UI flag: approved but the resumed result hasn't arrived yet */
  resuming: boolean;
}

const RISK_NAMES = ["low", "medium", "high", "critical"];

export function rowFromSummary(summary: ApprovalSummary): InboxRow {
  const level = summary.final_risk_level ?? summary.risk?.final_level ?? null;
  return {
    pendingApprovalId: summary.pending_approval_id,
    tool: summary.tool,
    requester: summary.requester,
    tenant: summary.tenant,
    createdAt: summary.created_at,
    status: summary.status,
    finalRiskLevel: level,
    finalRiskName: level === null ? "unknown" : RISK_NAMES[level] ?? String(level),
    triggeredFactors: summary.triggered_factors ?? [],
    affectedCount: summary.affected_count ?? null,
    approver: summary.decision?.approver ?? null,
    rationale: summary.decision?.rationale ?? null,
    resultText: summary.result?.answer ?? null,
    resultOk: summary.result?.ok ?? null,
    resuming: false,
  };
}

/** Canonical view used for the reconciliation property: transient UI state
 * stripped, rows sorted oldest-first. */
export interface CanonicalRow extends Omit<InboxRow, "resuming"> {}

function canonical(row: InboxRow): CanonicalRow {
  const { resuming: _resuming, ...rest } = row;
  return rest;
}

const STATUS_RANK: Record<InboxRow["status"], number> = {
  pending: 0,
  approved: 1,
  rejected: 1,
  expired: 1,
};

/**
 * Event-sourced mirror of the server's approval state.
 *
 * Duplicate deliveries dedup by (pending_approval_id, kind); per-snapshot
 * event order is preserved by the gateway, and a stale status event never
 * downgrades a settled row. After any quiesced event sequence the canonical
 * snapshot equals what a fresh GET /approvals fetch would build.
 */
export class InboxStore {
  private rows = new Map<string, InboxRow>();
  private seen = new Set<string>();
  connection: ConnectionState = "connecting";

  /** Replace the cache from a fetch (initial load or manual refresh). */
  reconcile(summaries: ApprovalSummary[]): void {
    this.rows.clear();
    for (const summary of summaries) {
      this.rows.set(summary.pending_approval_id, rowFromSummary(summary));
    }
  }

  /** Apply one lifecycle event; returns false for duplicates/no-ops. */
  applyEvent(event: LifecycleEvent): boolean {
    const dedupKey = `${event.pending_approval_id}:${event.kind}`;
    if (this.seen.has(dedupKey)) return false;
    this.seen.add(dedupKey);

    const existing = this.rows.get(event.pending_approval_id);
    switch (event.kind) {
      case "created": {
        if (!event.payload.summary) return false;
        if (existing) return false;
        this.rows.set(event.pending_approval_id, rowFromSummary(event.payload.summary));
        return true;
      }
      case "approved":
      case "rejected": {
        if (!existing || STATUS_RANK[existing.status] > 0) return false;
        existing.status = event.kind;
        existing.approver = event.payload.approver ?? null;
        existing.rationale = event.payload.rationale ?? null;
        existing.resultText = event.payload.result_answer ?? null;
        existing.resultOk = event.payload.ok ?? null;
        existing.resuming = event.kind === "approved";
        return true;
      }
      case "resumed": {
        if (!existing) return false;
        existing.resultText = event.payload.result_answer ?? null;
        existing.resultOk = event.payload.ok ?? null;
        existing.resuming = false;
        return true;
      }
      case "expired": {
        if (!existing || STATUS_RANK[existing.status] > 0) return false;
        existing.status = "expired";
        existing.resultText = event.payload.result_answer ?? null;
        existing.resultOk = false;
        return true;
      }
      default:
        return false;
    }
  }

  /** Server verdict wins over any local belief (no optimistic UI): after a
   * decision POST, fold the authoritative summary back in. */
  applyAuthoritative(summary: ApprovalSummary): void {
    const row = rowFromSummary(summary);
    const existing = this.rows.get(summary.pending_approval_id);
    if (existing?.resuming && row.status === "approved" && row.resultText === null) {
      row.resuming = true;
    }
    this.rows.set(summary.pending_approval_id, row);
  }

  get(pendingId: string): InboxRow | undefined {
    return this.rows.get(pendingId);
  }

  /** All rows, oldest first. */
  ordered(): InboxRow[] {
    return [...this.rows.values()].sort(
      (a, b) => a.createdAt - b.createdAt || a.pendingApprovalId.localeCompare(b.pendingApprovalId),
    );
  }

  pending(): InboxRow[] {
    return this.ordered().filter((row) => row.status === "pending");
  }

  decided(): InboxRow[] {
    return this.ordered().filter((row) => row.status !== "pending");
  }

  /** Canonical state for the reconciliation property. */
  snapshot(): CanonicalRow[] {
    return this.ordered().map(canonical);
  }
}

export function snapshotFromSummaries(summaries: ApprovalSummary[]): CanonicalRow[] {
  const store = new InboxStore();
  store.reconcile(summaries);
  return store.snapshot();
}

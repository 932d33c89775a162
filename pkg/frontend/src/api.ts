import type { ApprovalSummary, DecisionResponse, ToolSummary } from "./types.js";

/**
 * Thin wire client. The only mutation the console ever performs is
 * POST /approvals/{id}/decision; everything else is read-only.
 */
export class ApiClient {
  constructor(
    readonly baseUrl: string,
    readonly token: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private headers(): Record<string, string> {
    return {
      Authorization: `Bearer ${this.token}`,
      "Content-Type": "application/json",
    };
  }

  private async getJson(path: string): Promise<any> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: this.headers(),
    });
    if (response.status === 401) throw new Error("unauthenticated");
    return response.json();
  }

  async fetchApprovals(status: string = "pending"): Promise<ApprovalSummary[]> {
    const doc = await this.getJson(`/approvals?status=${encodeURIComponent(status)}`);
    if (!doc.ok) throw new Error(doc.error?.cause ?? "approvals_fetch_failed");
    return doc.approvals as ApprovalSummary[];
  }

  async listTools(): Promise<ToolSummary[]> {
    const doc = await this.getJson("/tools");
    if (!doc.ok) throw new Error(doc.error?.cause ?? "tools_fetch_failed");
    return doc.tools as ToolSummary[];
  }

  async submitDecision(
    pendingId: string,
    verdict: "approve" | "reject",
    rationale: string,
  ): Promise<DecisionResponse> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/approvals/${encodeURIComponent(pendingId)}/decision`,
      {
        method: "POST",
        headers: this.headers(),
        body: JSON.stringify({ verdict, rationale }),
      },
    );
    if (response.status === 401) throw new Error("unauthenticated");
    return (await response.json()) as DecisionResponse;
  }

  eventsUrl(replayOnly = false): string {
    return `${this.baseUrl}/events${replayOnly ? "?replay_only=true" : ""}`;
  }
}

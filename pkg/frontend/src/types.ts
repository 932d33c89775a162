// Wire shapes the console consumes. These mirror the gateway's JSON exactly;
// the console never recomputes risk or reshapes server verdicts.

export interface RiskFactor {
  name: string;
  delta: number;
  triggered: boolean;
  rationale: string;
}

export interface RiskAssessment {
  base_level: number;
  base_level_name: string;
  factors: RiskFactor[];
  final_level: number;
  final_level_name: string;
  requires_approval: boolean;
}

export interface DecisionRecord {
  approver: string;
  verdict: "approve" | "reject";
  rationale: string;
  decided_at: number;
}

export interface NtcResult {
  ok: boolean;
  answer: string;
  [key: string]: unknown;
}

/** One row of GET /approvals. */
export interface ApprovalSummary {
  pending_approval_id: string;
  tool: string;
  requester: string;
  tenant: string;
  status: "pending" | "approved" | "rejected" | "expired";
  created_at: number;
  risk: Partial<RiskAssessment>;
  final_risk_level: number | null;
  triggered_factors: RiskFactor[];
  affected_count: number | null;
  params: Record<string, unknown>;
  intent: string;
  decision: DecisionRecord | null;
  result: NtcResult | null;
}

/** One frame of GET /events. */
export interface LifecycleEvent {
  seq: number;
  ts: number;
  kind: "created" | "approved" | "rejected" | "resumed" | "expired";
  pending_approval_id: string;
  tenant: string;
  payload: {
    tool?: string;
    requester?: string;
    approver?: string;
    rationale?: string;
    result_answer?: string | null;
    ok?: boolean | null;
    risk?: RiskAssessment;
    summary?: ApprovalSummary;
  };
}

export interface ToolSummary {
  name: string;
  mode: string;
  risk_level: number;
  supported_verbs: string[];
  description: string;
}

export interface DecisionResponse {
  ok: boolean;
  approval?: ApprovalSummary;
  error?: {
    cause: string;
    message: string;
    details?: { decision?: DecisionRecord };
  };
}

export type ConnectionState = "connecting" | "live" | "offline";

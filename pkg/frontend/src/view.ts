import type { InboxRow } from "./store.js";
import type { ConnectionState } from "./types.js";

export interface ViewHandlers {
  onApprove(pendingId: string): void;
  onReject(pendingId: string, rationale: string): void;
}

const RISK_CLASS = ["risk-low", "risk-medium", "risk-high", "risk-critical"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function riskBadge(row: InboxRow): HTMLElement {
  const level = row.finalRiskLevel ?? 0;
  return el("span", `badge ${RISK_CLASS[level] ?? "risk-low"}`, row.finalRiskName);
}

function factorChips(row: InboxRow): HTMLElement {
  const wrap = el("div", "factors");
  for (const factor of row.triggeredFactors) {
    const chip = el(
      "span",
      "chip",
      `${factor.name.replace(/_/g, "-")} ${factor.delta > 0 ? "+" : ""}${factor.delta}`,
    );
    chip.title = factor.rationale;
    wrap.appendChild(chip);
  }
  return wrap;
}

function decisionControls(row: InboxRow, handlers: ViewHandlers): HTMLElement {
  const wrap = el("div", "decision");
  const approve = el("button", "approve", "Approve");
  approve.addEventListener("click", () => handlers.onApprove(row.pendingApprovalId));

  const rationale = el("textarea", "rationale") as HTMLTextAreaElement;
  rationale.placeholder = "Rationale (required to reject)";

  const reject = el("button", "reject", "Reject");
  const hint = el("span", "form-error", "");
  reject.addEventListener("click", () => {
    // mirrors the server's EmptyRationale rule client-side
    if (!rationale.value.trim()) {
      hint.textContent = "A rationale is required to reject.";
      rationale.focus();
      return;
    }
    hint.textContent = "";
    handlers.onReject(row.pendingApprovalId, rationale.value.trim());
  });

  wrap.append(approve, reject, rationale, hint);
  return wrap;
}

function statusLine(row: InboxRow): HTMLElement {
  if (row.status === "pending") {
    return el("div", "status pending", "awaiting decision");
  }
  if (row.resuming) {
    return el("div", "status resuming", `approved by ${row.approver} - resuming...`);
  }
  const wrap = el("div", `status ${row.status}`);
  const head =
    row.status === "approved"
      ? `approved by ${row.approver}`
      : row.status === "rejected"
        ? `rejected by ${row.approver}: ${row.rationale}`
        : "expired before a decision";
  wrap.appendChild(el("div", "verdict", head));
  if (row.resultText) {
    wrap.appendChild(el("div", "result-text", row.resultText));
  }
  return wrap;
}

function renderRow(row: InboxRow, handlers: ViewHandlers): HTMLElement {
  const card = el("article", `row ${row.status}`);
  card.dataset.id = row.pendingApprovalId;

  const head = el("header");
  head.append(
    el("span", "tool", row.tool),
    riskBadge(row),
    el("span", "requester", `by ${row.requester}`),
    el(
      "span",
      "affected",
      row.affectedCount === null ? "" : `${row.affectedCount} entities`,
    ),
  );
  card.appendChild(head);
  card.appendChild(factorChips(row));
  card.appendChild(statusLine(row));
  if (row.status === "pending") {
    card.appendChild(decisionControls(row, handlers));
  }
  return card;
}

export function renderInbox(
  container: HTMLElement,
  rows: InboxRow[],
  decided: InboxRow[],
  connection: ConnectionState,
  handlers: ViewHandlers,
): void {
  container.replaceChildren();

  const banner = el("div", `connection ${connection}`);
  banner.textContent =
    connection === "live"
      ? "stream connected"
      : connection === "offline"
        ? "stream offline - retrying..."
        : "connecting...";
  container.appendChild(banner);

  const pendingSection = el("section", "pending-list");
  pendingSection.appendChild(el("h2", undefined, `Pending approvals (${rows.length})`));
  if (rows.length === 0) {
    pendingSection.appendChild(el("p", "empty", "Nothing awaiting your decision."));
  } else {
    for (const row of rows) pendingSection.appendChild(renderRow(row, handlers));
  }
  container.appendChild(pendingSection);

  if (decided.length > 0) {
    const decidedSection = el("section", "decided-list");
    decidedSection.appendChild(el("h2", undefined, "Recently decided"));
    for (const row of decided.slice(-10).reverse()) {
      decidedSection.appendChild(renderRow(row, handlers));
    }
    container.appendChild(decidedSection);
  }
}

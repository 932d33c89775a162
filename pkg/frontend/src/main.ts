import { ApiClient } from "./api.js";
import { EventStream } from "./sse.js";
import { InboxStore } from "./store.js";
import type { LifecycleEvent } from "./types.js";
import { renderInbox } from "./view.js";

function resolveToken(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("token");
  if (fromQuery) {
    localStorage.setItem("agentgate-token", fromQuery);
    return fromQuery;
  }
  const stored = localStorage.getItem("agentgate-token");
  if (stored) return stored;
  const typed = window.prompt("Approver bearer token:") ?? "";
  localStorage.setItem("agentgate-token", typed);
  return typed;
}

function main(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");

  // served by the gateway itself under /console, so the API is one level up
  const baseUrl = window.location.origin;
  const api = new ApiClient(baseUrl, resolveToken());
  const store = new InboxStore();

  const redraw = () =>
    renderInbox(root, store.pending(), store.decided(), store.connection, {
      onApprove: (id) => decide(id, "approve", ""),
      onReject: (id, rationale) => decide(id, "reject", rationale),
    });

  async function decide(id: string, verdict: "approve" | "reject", rationale: string) {
    const row = store.get(id);
    if (row && verdict === "approve") {
      row.resuming = true; // row shows "resuming..." until the resumed event lands
      redraw();
    }
    const outcome = await api.submitDecision(id, verdict, rationale);
    if (outcome.ok && outcome.approval) {
      store.applyAuthoritative(outcome.approval);
    } else if (outcome.error?.cause === "already_decided") {
      // race lost: render the winning decision instead of hiding it
      await refetch();
    }
    redraw();
  }

  async function refetch() {
    try {
      store.reconcile(await api.fetchApprovals("all"));
    } catch {
      // keep the current cache; the stream will converge
    }
  }

  const stream = new EventStream(api.eventsUrl(), {
    headers: { Authorization: `Bearer ${api.token}` },
    onFrame: (frame) => {
      const event = JSON.parse(frame.data) as LifecycleEvent;
      if (store.applyEvent(event)) redraw();
    },
    onStateChange: (state) => {
      store.connection = state;
      redraw();
    },
  });

  void refetch().then(redraw);
  stream.start();
}

main();

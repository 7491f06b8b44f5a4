// Bootstrap: create or rejoin a session, render the backlog, then follow the
// event stream. The API server address comes from the page URL query
// (?api=http://host:port) with a localhost default.

import { ApiClient, StreamClient } from "./client.js";
import {
  UiState,
  applyBacklog,
  applyEvent,
  fromEvents,
  initialState,
  withConnection,
  withDraftField,
  withEcho,
  withReportErrors,
} from "./store.js";
import { ReportField } from "./types.js";
import { render } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const apiBase = params.get("api") ?? "http://127.0.0.1:8470";
const wsBase = apiBase.replace(/^http/, "ws");
const topic = params.get("topic") ?? "Low-Carbon Campus";

const root = document.getElementById("app") as HTMLElement;
const api = new ApiClient(apiBase);

let state: UiState;

function update(next: UiState): void {
  state = next;
  render(root, state, handlers);
}

const handlers = {
  onSend(text: string): void {
    if (!state.sessionId) return;
    update(withEcho(state, text));
    api.sendMessage(state.sessionId, text).catch(() => {
      update(withConnection(state, state.connection, "Message failed — try again."));
    });
  },
  onDraftChange(field: ReportField, value: string): void {
    update(withDraftField(state, field, value));
  },
  onSubmitReport(): void {
    if (!state.sessionId) return;
    api
      .submitReport(state.sessionId, state.reportDraft)
      .then((result) => {
        if (!result.ok) {
          update(withReportErrors(state, result.fieldErrors));
        }
        // success arrives as report_submitted/completed events on the stream
      })
      .catch(() => update(withConnection(state, state.connection, "Report failed — try again.")));
  },
};

async function boot(): Promise<void> {
  const existing = params.get("session");
  const sessionId = existing ?? (await api.createSession(topic)).id;
  if (!existing) {
    const url = new URL(window.location.href);
    url.searchParams.set("session", sessionId);
    window.history.replaceState(null, "", url.toString());
  }
  // Instant paint from the session view, then the authoritative event fold
  // (which carries the sequence numbers the stream resumes from).
  const view = await api.getSession(sessionId);
  update(applyBacklog(initialState(), view, 0));
  const backlog = await api.getEvents(sessionId);
  update(fromEvents(backlog));

  const stream = new StreamClient(
    wsBase,
    sessionId,
    {
      onEvent: (event) => update(applyEvent(state, event)),
      onStatus: (status) =>
        update(
          withConnection(state, status, status === "open" ? null : "Connection lost — reconnecting…"),
        ),
    },
    (url) => new WebSocket(url) as unknown as import("./client.js").SocketLike,
  );
  stream.start(state.lastSeq);
}

boot().catch((error) => {
  root.textContent = `Could not reach the session service at ${apiBase}: ${error}`;
});

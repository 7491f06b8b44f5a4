// Pure UI state. Every transition comes from server data: the backlog
// snapshot plus the ordered event stream. Replaying the same inputs always
// yields the same state, and no user action mutates stage or transcript
// locally (optimistic echoes live in a separate pending list until the
// server event confirms them).

import {
  DecisionRecord,
  FINAL_STAGE,
  ReportField,
  SessionEvent,
  SessionView,
} from "./types.js";

export interface Message {
  seq: number; // 0 for optimistic echoes awaiting their server event
  author: "student" | "mentor" | "system_nudge";
  text: string;
  at: string;
  nudge: boolean;
}

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface UiState {
  sessionId: string | null;
  taskTopic: string;
  stage: number;
  status: "active" | "completed" | "abandoned";
  completionEligible: boolean;
  messages: Message[];
  pendingEchoes: string[]; // optimistic student texts not yet confirmed
  lastSeq: number;
  connection: ConnectionStatus;
  banner: string | null;
  reportDraft: Record<ReportField, string>;
  reportErrors: Partial<Record<ReportField, string>>;
  reportSubmitted: boolean;
}

export function initialState(): UiState {
  return {
    sessionId: null,
    taskTopic: "",
    stage: 1,
    status: "active",
    completionEligible: false,
    messages: [],
    pendingEchoes: [],
    lastSeq: 0,
    connection: "connecting",
    banner: null,
    reportDraft: {
      problem_background: "",
      solution_concept: "",
      implementation_plan: "",
      anticipated_challenges: "",
    },
    reportErrors: {},
    reportSubmitted: false,
  };
}

export function applyBacklog(state: UiState, view: SessionView, lastSeq: number): UiState {
  const messages: Message[] = view.transcript.map((t, index) => ({
    seq: index + 1, // placeholder ordering; real seqs arrive with events
    author: t.author,
    text: t.text,
    at: t.at,
    nudge: t.author === "system_nudge",
  }));
  return {
    ...state,
    sessionId: view.id,
    taskTopic: view.task_topic,
    stage: view.stage,
    status: view.status,
    completionEligible: view.completion_eligible,
    messages,
    lastSeq,
    reportSubmitted: view.report !== null,
  };
}

// Rebuild wholly from an event list (used when joining via the events API
// and by tests); state is a pure fold over the events.
export function fromEvents(events: SessionEvent[]): UiState {
  return events.reduce((state, event) => applyEvent(state, event), initialState());
}

export function applyEvent(state: UiState, event: SessionEvent): UiState {
  if (event.seq <= state.lastSeq) {
    return state; // duplicate delivery (reconnect overlap): drop
  }
  const next: UiState = { ...state, lastSeq: event.seq };
  switch (event.kind) {
    case "created":
      return {
        ...next,
        sessionId: String(event.payload["session_id"] ?? ""),
        taskTopic: String(event.payload["task_topic"] ?? ""),
        stage: Number(event.payload["stage"] ?? 1),
      };
    case "student_msg": {
      const text = String(event.payload["text"] ?? "");
      const pendingEchoes = state.pendingEchoes.filter((t) => t !== text);
      return {
        ...next,
        pendingEchoes,
        messages: [...state.messages, message(event, "student")],
      };
    }
    case "mentor_msg":
      return { ...next, messages: [...state.messages, message(event, "mentor")] };
    case "nudge":
      return { ...next, messages: [...state.messages, message(event, "system_nudge")] };
    case "decision": {
      const decision = event.payload as unknown as DecisionRecord;
      return {
        ...next,
        stage: decision.stage_after,
        completionEligible: state.completionEligible || Boolean(decision.completion_eligible),
      };
    }
    case "report_submitted":
      return { ...next, reportSubmitted: true, reportErrors: {} };
    case "completed":
      return { ...next, status: "completed" };
    default:
      return next;
  }
}

function message(event: SessionEvent, author: Message["author"]): Message {
  return {
    seq: event.seq,
    author,
    text: String(event.payload["text"] ?? ""),
    at: event.at,
    nudge: event.kind === "nudge",
  };
}

// -- selectors ---------------------------------------------------------------

export function activeStage(state: UiState): number {
  return Math.min(Math.max(state.stage, 1), FINAL_STAGE);
}

export function stepperStates(state: UiState): Array<"done" | "active" | "todo"> {
  const current = activeStage(state);
  return [1, 2, 3, 4, 5, 6].map((n) => (n < current ? "done" : n === current ? "active" : "todo"));
}

export function reportEnabled(state: UiState): boolean {
  return state.stage === FINAL_STAGE && state.status === "active";
}

export function inputEnabled(state: UiState): boolean {
  return state.connection === "open" && state.status === "active";
}

export function visibleMessages(state: UiState): Message[] {
  const echoes: Message[] = state.pendingEchoes.map((text) => ({
    seq: 0,
    author: "student",
    text,
    at: "",
    nudge: false,
  }));
  return [...state.messages, ...echoes];
}

// -- local intents (all reconciled against server events) ---------------------

export function withEcho(state: UiState, text: string): UiState {
  return { ...state, pendingEchoes: [...state.pendingEchoes, text] };
}

export function withConnection(state: UiState, connection: ConnectionStatus, banner: string | null): UiState {
  return { ...state, connection, banner };
}

export function withDraftField(state: UiState, field: ReportField, value: string): UiState {
  return { ...state, reportDraft: { ...state.reportDraft, [field]: value } };
}

export function withReportErrors(state: UiState, errors: Partial<Record<ReportField, string>>): UiState {
  return { ...state, reportErrors: errors };
}

// Wire types mirrored from the session service API.

export type EventKind =
  | "created"
  | "student_msg"
  | "decision"
  | "mentor_msg"
  | "nudge"
  | "report_submitted"
  | "completed";

export interface SessionEvent {
  seq: number;
  kind: EventKind;
  at: string;
  payload: Record<string, unknown>;
}

export interface TranscriptEntry {
  author: "student" | "mentor" | "system_nudge";
  text: string;
  at: string;
}

export interface DecisionRecord {
  stage_before: number;
  stage_after: number;
  advanced: boolean;
  active_states: Array<number | string>;
  focus_state: number | string;
  chosen_strategy: number;
  rationale: string;
  completion_eligible: boolean;
  degraded: boolean;
}

export interface SessionView {
  id: string;
  task_topic: string;
  created_at: string;
  stage: number;
  status: "active" | "completed" | "abandoned";
  completion_eligible: boolean;
  transcript: TranscriptEntry[];
  decisions: DecisionRecord[];
  report: Record<string, string> | null;
}

export const STAGE_NAMES = [
  "Problem Discovery",
  "Information Collection",
  "Problem Definition",
  "Solution Ideation",
  "Solution Evaluation",
  "Solution Implementation",
] as const;

export const FINAL_STAGE = 6;

export const REPORT_FIELDS = [
  "problem_background",
  "solution_concept",
  "implementation_plan",
  "anticipated_challenges",
] as const;

export type ReportField = (typeof REPORT_FIELDS)[number];

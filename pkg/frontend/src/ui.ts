// DOM rendering. The render function projects UiState into the page; all
// interaction handlers only issue API calls or local-intent updates, never
// direct state transitions (those arrive back as server events).

import {
  Message,
  UiState,
  inputEnabled,
  reportEnabled,
  stepperStates,
  visibleMessages,
} from "./store.js";
import { REPORT_FIELDS, ReportField, STAGE_NAMES } from "./types.js";

export interface UiHandlers {
  onSend: (text: string) => void;
  onDraftChange: (field: ReportField, value: string) => void;
  onSubmitReport: () => void;
}

const FIELD_LABELS: Record<ReportField, string> = {
  problem_background: "Problem background",
  solution_concept: "Solution concept",
  implementation_plan: "Implementation plan",
  anticipated_challenges: "Anticipated challenges",
};

export function render(root: HTMLElement, state: UiState, handlers: UiHandlers): void {
  root.replaceChildren(
    renderBanner(state),
    renderStepper(state),
    renderMessages(state),
    renderComposer(state, handlers),
    renderReport(state, handlers),
  );
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderBanner(state: UiState): HTMLElement {
  const banner = el("div", "banner");
  if (state.connection !== "open") {
    banner.classList.add("visible");
    banner.textContent = state.banner ?? "Connection lost — reconnecting…";
  } else if (state.status === "completed") {
    banner.classList.add("visible", "done");
    banner.textContent = "Session completed — great work!";
  }
  return banner;
}

function renderStepper(state: UiState): HTMLElement {
  const stepper = el("ol", "stepper");
  stepperStates(state).forEach((phase, index) => {
    const step = el("li", `step ${phase}`);
    step.appendChild(el("span", "step-dot", String(index + 1)));
    step.appendChild(el("span", "step-name", STAGE_NAMES[index]));
    stepper.appendChild(step);
  });
  return stepper;
}

function renderMessages(state: UiState): HTMLElement {
  const list = el("div", "messages");
  visibleMessages(state).forEach((message) => {
    list.appendChild(renderMessage(message));
  });
  return list;
}

function renderMessage(message: Message): HTMLElement {
  const classes = ["bubble", message.author];
  if (message.nudge) classes.push("nudge");
  if (message.seq === 0) classes.push("pending");
  const bubble = el("div", classes.join(" "));
  if (message.nudge) {
    bubble.appendChild(el("span", "nudge-tag", "nudge"));
  }
  bubble.appendChild(el("p", "text", message.text));
  return bubble;
}

function renderComposer(state: UiState, handlers: UiHandlers): HTMLElement {
  const form = el("form", "composer") as HTMLFormElement;
  const input = el("input", "composer-input") as HTMLInputElement;
  input.placeholder = "Write to your mentor…";
  input.disabled = !inputEnabled(state);
  const button = el("button", "composer-send", "Send") as HTMLButtonElement;
  button.type = "submit";
  button.disabled = !inputEnabled(state);
  form.append(input, button);
  form.onsubmit = (event) => {
    event.preventDefault();
    const text = input.value.trim();
    if (text && inputEnabled(state)) {
      handlers.onSend(text);
      input.value = "";
    }
  };
  return form;
}

function renderReport(state: UiState, handlers: UiHandlers): HTMLElement {
  const section = el("section", "report");
  const enabled = reportEnabled(state);
  if (!enabled && !state.reportSubmitted) {
    section.classList.add("locked");
    section.appendChild(
      el("p", "report-hint", "The learning report unlocks at the Solution Implementation stage."),
    );
    return section;
  }
  section.appendChild(el("h2", "report-title", "Learning report"));
  if (state.reportSubmitted) {
    section.appendChild(el("p", "report-hint done", "Report submitted."));
    return section;
  }
  REPORT_FIELDS.forEach((field) => {
    const wrap = el("label", "report-field");
    wrap.appendChild(el("span", "report-label", FIELD_LABELS[field]));
    const area = el("textarea", "report-input") as HTMLTextAreaElement;
    area.value = state.reportDraft[field];
    area.oninput = () => handlers.onDraftChange(field, area.value);
    wrap.appendChild(area);
    const error = state.reportErrors[field];
    if (error) {
      wrap.appendChild(el("span", "field-error", error));
    }
    section.appendChild(wrap);
  });
  const submit = el("button", "report-submit", "Submit report") as HTMLButtonElement;
  submit.onclick = () => handlers.onSubmitReport();
  section.appendChild(submit);
  return section;
}

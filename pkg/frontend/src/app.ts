// DOM view: renders the whole UI from the controller state on every change.
// Element ids double as hooks for the automated flow tests.

import { UiController } from "./controller.js";
import { ENTRY_KINDS, KIND_LABELS, UiSessionState, selectionValid } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text) node.textContent = text;
  return node;
}

function renderWelcome(root: HTMLElement, controller: UiController, state: UiSessionState): void {
  const form = el("form", { id: "welcome-form" });
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void controller.submitWelcome();
  });

  form.append(el("h1", {}, "Load patient data"));
  const patientRow = el("label", {}, "Patient ");
  const select = el("select", { id: "patient-select" });
  for (const pid of state.patients) {
    const option = el("option", { value: pid }, pid);
    if (pid === state.patientId) option.selected = true;
    select.append(option);
  }
  select.addEventListener("change", () => controller.setPatient(select.value));
  patientRow.append(select);
  form.append(patientRow);

  const kindsBox = el("fieldset", { id: "kinds" });
  kindsBox.append(el("legend", {}, "Data sources"));
  for (const kind of ENTRY_KINDS) {
    const label = el("label", { class: "kind" });
    const box = el("input", { type: "checkbox", id: `kind-${kind}` }) as HTMLInputElement;
    box.checked = state.kinds.has(kind);
    box.addEventListener("change", () => controller.toggleKind(kind, box.checked));
    label.append(box, document.createTextNode(" " + KIND_LABELS[kind]));
    kindsBox.append(label);
  }
  form.append(kindsBox);

  const rangeBox = el("fieldset", { id: "range" });
  rangeBox.append(el("legend", {}, "Time range"));
  const start = el("input", { type: "date", id: "start-date", value: state.start }) as HTMLInputElement;
  const end = el("input", { type: "date", id: "end-date", value: state.end }) as HTMLInputElement;
  start.addEventListener("change", () => controller.setRange(start.value, end.value));
  end.addEventListener("change", () => controller.setRange(start.value, end.value));
  rangeBox.append(el("label", {}, "From "), start, el("label", {}, " to "), end);
  form.append(rangeBox);

  const launch = el("button", { id: "launch-btn", type: "submit" }, "Launch") as HTMLButtonElement;
  launch.disabled = !selectionValid(state) || state.pending;
  form.append(launch);

  if (state.error) form.append(el("p", { id: "error-banner", class: "error" }, state.error));
  root.append(form);
}

function renderChat(root: HTMLElement, controller: UiController, state: UiSessionState): void {
  const view = el("section", { id: "chat-view" });
  const header = el("header", {});
  header.append(
    el("span", { id: "session-patient" }, state.patientId),
    el("span", { id: "session-id" }, state.sessionId ?? ""),
  );
  const newSession = el("button", { id: "new-session-btn", type: "button" }, "New session");
  newSession.addEventListener("click", () => controller.newSession());
  header.append(newSession);
  view.append(header);

  const transcript = el("ol", { id: "transcript" });
  for (const turn of state.turns) {
    const item = el("li", { class: "turn", "data-turn": String(turn.turnIndex) });
    item.append(el("p", { class: "query" }, turn.query));
    item.append(
      el(
        "p",
        { class: turn.status === "ok" ? "response" : "response failed" },
        turn.status === "ok" ? turn.response : "generation failed, try again",
      ),
    );

    const controls = el("div", { class: "feedback" });
    const up = el("button", { class: "feedback-up", type: "button" }, "👍") as HTMLButtonElement;
    const down = el("button", { class: "feedback-down", type: "button" }, "👎") as HTMLButtonElement;
    const locked = turn.feedback !== null;
    up.disabled = locked;
    down.disabled = locked;
    up.addEventListener("click", () => void controller.sendFeedback(turn.turnIndex, "up"));
    down.addEventListener("click", () => controller.openNote(turn.turnIndex));
    controls.append(up, down);
    if (locked) {
      controls.append(
        el("span", { class: "feedback-recorded" }, turn.feedback!.thumbs === "up" ? "👍" : "👎"),
      );
    }
    if (!locked && state.noteDraftFor === turn.turnIndex) {
      const note = el("input", {
        class: "note-field",
        placeholder: "What went wrong? (optional)",
      }) as HTMLInputElement;
      const submit = el("button", { class: "note-submit", type: "button" }, "Send") as HTMLButtonElement;
      submit.addEventListener(
        "click",
        () => void controller.sendFeedback(turn.turnIndex, "down", note.value || undefined),
      );
      controls.append(note, submit);
    }
    item.append(controls);
    transcript.append(item);
  }
  view.append(transcript);

  const composer = el("form", { id: "composer" });
  const input = el("input", { id: "message-input", placeholder: "Ask about this record" }) as HTMLInputElement;
  const send = el("button", { id: "send-btn", type: "submit" }, "Send") as HTMLButtonElement;
  input.disabled = state.pending;
  send.disabled = state.pending;
  composer.addEventListener("submit", (event) => {
    event.preventDefault();
    const query = input.value;
    input.value = "";
    void controller.sendMessage(query);
  });
  composer.append(input, send);
  view.append(composer);

  if (state.pending) view.append(el("p", { id: "pending" }, "Waiting for the model..."));
  if (state.error) view.append(el("p", { id: "error-banner", class: "error" }, state.error));
  root.append(view);
}

export function render(root: HTMLElement, controller: UiController): void {
  root.replaceChildren();
  if (controller.state.phase === "welcome") renderWelcome(root, controller, controller.state);
  else renderChat(root, controller, controller.state);
}

export function mount(root: HTMLElement, controller: UiController): void {
  controller.onChange = () => render(root, controller);
  render(root, controller);
}

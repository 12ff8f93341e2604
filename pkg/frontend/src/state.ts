// UI session state: a welcome phase for picking patient, data sources, and
// time range, then a chatting phase whose transcript mirrors the server log.
// Pure functions only; the controller owns the transitions.

import type { SessionLog, Turn } from "./api.js";

export const ENTRY_KINDS = [
  "note",
  "medication_order",
  "lab_result",
  "diagnostic_report",
  "procedure",
  "order",
  "external_hie",
  "referral_document",
] as const;

export const KIND_LABELS: Record<string, string> = {
  note: "Notes",
  medication_order: "Medication orders",
  lab_result: "Lab results",
  diagnostic_report: "Diagnostic reports",
  procedure: "Procedures",
  order: "Orders",
  external_hie: "External HIE data",
  referral_document: "Referral documents",
};

export interface UiTurn {
  turnIndex: number;
  query: string;
  response: string;
  status: string;
  feedback: { thumbs: "up" | "down"; note: string | null } | null;
}

export interface UiSessionState {
  phase: "welcome" | "chatting";
  patients: string[];
  patientId: string;
  kinds: Set<string>;
  start: string; // YYYY-MM-DD
  end: string;
  sessionId: string | null;
  turns: UiTurn[];
  pending: boolean;
  error: string | null;
  noteDraftFor: number | null; // turn index with an open thumbs-down note field
}

function isoDate(d: Date): string {
  return d.toISOString().slice(0, 10);
}

export function defaultRange(today: Date): { start: string; end: string } {
  const start = new Date(today);
  start.setUTCFullYear(start.getUTCFullYear() - 1);
  return { start: isoDate(start), end: isoDate(today) };
}

export function initialState(patients: string[], today: Date): UiSessionState {
  const range = defaultRange(today);
  return {
    phase: "welcome",
    patients,
    patientId: patients[0] ?? "",
    kinds: new Set(ENTRY_KINDS),
    start: range.start,
    end: range.end,
    sessionId: null,
    turns: [],
    pending: false,
    error: null,
    noteDraftFor: null,
  };
}

export function selectionValid(state: UiSessionState): boolean {
  return (
    state.patientId !== "" &&
    state.kinds.size >= 1 &&
    state.start !== "" &&
    state.end !== "" &&
    state.start <= state.end
  );
}

export function turnFromServer(turn: Turn): UiTurn {
  return {
    turnIndex: turn.turn_index,
    query: turn.query,
    response: turn.response,
    status: turn.status,
    feedback: turn.feedback ? { thumbs: turn.feedback.thumbs, note: turn.feedback.note } : null,
  };
}

// The rendered transcript is a pure function of the server log: re-fetching
// the log and mapping it through here must reproduce the local turns.
export function turnsFromLog(log: SessionLog): UiTurn[] {
  return [...log.turns]
    .sort((a, b) => a.turn_index - b.turn_index)
    .map(turnFromServer);
}

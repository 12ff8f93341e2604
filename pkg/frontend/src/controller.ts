// Owns the state transitions and the API calls behind them. One in-flight
// message per session; feedback posts exactly once per turn.

import { ApiError, ChatApi } from "./api.js";
import {
  UiSessionState,
  initialState,
  selectionValid,
  turnFromServer,
  turnsFromLog,
} from "./state.js";

export class UiController {
  state: UiSessionState;
  onChange: (state: UiSessionState) => void;

  constructor(
    private api: ChatApi,
    patients: string[],
    today: Date,
    onChange: (state: UiSessionState) => void = () => {},
    private userId: string = "",
  ) {
    this.state = initialState(patients, today);
    this.onChange = onChange;
  }

  private emit(): void {
    this.onChange(this.state);
  }

  setPatient(patientId: string): void {
    this.state.patientId = patientId;
    this.emit();
  }

  toggleKind(kind: string, on: boolean): void {
    if (on) this.state.kinds.add(kind);
    else this.state.kinds.delete(kind);
    this.emit();
  }

  setRange(start: string, end: string): void {
    this.state.start = start;
    this.state.end = end;
    this.emit();
  }

  async submitWelcome(): Promise<void> {
    if (!selectionValid(this.state) || this.state.pending) return;
    this.state.pending = true;
    this.state.error = null;
    this.emit();
    try {
      const sessionId = await this.api.createSession({
        patient_id: this.state.patientId,
        kinds: [...this.state.kinds].sort(),
        start: `${this.state.start}T00:00:00Z`,
        end: `${this.state.end}T23:59:59Z`,
        user_id: this.userId,
      });
      this.state.sessionId = sessionId;
      this.state.turns = [];
      this.state.phase = "chatting";
    } catch (err) {
      // stay on the welcome menu with the server's reason inline
      this.state.error = err instanceof ApiError ? err.message : String(err);
    } finally {
      this.state.pending = false;
      this.emit();
    }
  }

  async sendMessage(query: string): Promise<void> {
    if (this.state.phase !== "chatting" || this.state.pending || !query.trim()) return;
    const sessionId = this.state.sessionId!;
    this.state.pending = true;
    this.state.error = null;
    this.emit();
    try {
      const turn = await this.api.sendMessage(sessionId, query);
      this.state.turns.push(turnFromServer(turn));
    } catch (err) {
      this.state.error = err instanceof ApiError ? err.message : String(err);
    } finally {
      this.state.pending = false;
      this.emit();
    }
  }

  openNote(turnIndex: number): void {
    this.state.noteDraftFor = turnIndex;
    this.emit();
  }

  async sendFeedback(turnIndex: number, thumbs: "up" | "down", note?: string): Promise<void> {
    const turn = this.state.turns.find((t) => t.turnIndex === turnIndex);
    if (!turn || turn.feedback !== null || this.state.sessionId === null) return;
    try {
      await this.api.sendFeedback(this.state.sessionId, turnIndex, thumbs, note);
      turn.feedback = { thumbs, note: note ?? null };
      this.state.noteDraftFor = null;
    } catch (err) {
      this.state.error = err instanceof ApiError ? err.message : String(err);
    }
    this.emit();
  }

  // Back to the welcome menu with the prior selection prefilled; only local
  // state is discarded, the server session stays in its log store.
  newSession(): void {
    this.state.phase = "welcome";
    this.state.sessionId = null;
    this.state.turns = [];
    this.state.pending = false;
    this.state.error = null;
    this.state.noteDraftFor = null;
    this.emit();
  }

  // Re-derive the transcript from the server log; the result must equal the
  // locally rendered turns (the UI never mutates response text).
  async refreshFromServer(): Promise<void> {
    if (this.state.sessionId === null) return;
    const log = await this.api.fetchLog(this.state.sessionId);
    this.state.turns = turnsFromLog(log);
    this.emit();
  }
}

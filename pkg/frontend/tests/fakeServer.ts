// In-memory stand-in for the chat service, honoring the HTTP contract the
// UI depends on: session creation, messages, one-shot feedback, and the
// session log. Used by the automated flow tests in place of a browser
// pointed at a live server.

import type { Turn } from "../src/api.js";

interface FakeSession {
  session_id: string;
  patient_id: string;
  selection: { kinds: string[]; start: string; end: string };
  turns: Turn[];
}

export class FakeServer {
  sessions = new Map<string, FakeSession>();
  requests: { method: string; path: string }[] = [];
  private counter = 0;

  constructor(
    public patients: string[] = ["P0001", "P0002", "P0003"],
    public responder: (query: string, turnIndex: number) => string = (q, i) =>
      `Answer ${i}: reviewed the record for "${q}".`,
  ) {}

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    const url = new URL(input);
    const method = (init?.method ?? "GET").toUpperCase();
    const path = url.pathname;
    this.requests.push({ method, path });
    const body = init?.body ? JSON.parse(String(init.body)) : null;

    if (method === "GET" && path === "/patients") {
      return json(200, { patients: this.patients });
    }
    if (method === "POST" && path === "/sessions") {
      if (!this.patients.includes(body.patient_id)) {
        return json(404, { detail: `unknown patient: ${body.patient_id}` });
      }
      if (!Array.isArray(body.kinds) || body.kinds.length === 0) {
        return json(422, { detail: "selection needs at least one kind" });
      }
      this.counter += 1;
      const id = `s${String(this.counter).padStart(6, "0")}`;
      this.sessions.set(id, {
        session_id: id,
        patient_id: body.patient_id,
        selection: { kinds: body.kinds, start: body.start, end: body.end },
        turns: [],
      });
      return json(200, { session_id: id });
    }

    const messages = path.match(/^\/sessions\/([^/]+)\/messages$/);
    if (method === "POST" && messages) {
      const session = this.sessions.get(messages[1]);
      if (!session) return json(404, { detail: "unknown session" });
      if (!body.query) return json(422, { detail: "query must be non-empty" });
      const turn: Turn = {
        turn_index: session.turns.length,
        query: body.query,
        response: this.responder(body.query, session.turns.length),
        model: "fake-model",
        status: "ok",
        tokens: { sent: 100, received: 10 },
        feedback: null,
      };
      session.turns.push(turn);
      return json(200, turn);
    }

    const feedback = path.match(/^\/sessions\/([^/]+)\/turns\/(\d+)\/feedback$/);
    if (method === "POST" && feedback) {
      const session = this.sessions.get(feedback[1]);
      const turn = session?.turns[Number(feedback[2])];
      if (!session || !turn) return json(404, { detail: "unknown turn" });
      if (turn.feedback) return json(409, { detail: "feedback already recorded" });
      turn.feedback = { thumbs: body.thumbs, note: body.note ?? null };
      return json(200, { recorded: true });
    }

    const log = path.match(/^\/sessions\/([^/]+)\/log$/);
    if (method === "GET" && log) {
      const session = this.sessions.get(log[1]);
      if (!session) return json(404, { detail: "unknown session" });
      return json(200, session);
    }

    return json(404, { detail: `no route for ${method} ${path}` });
  };

  countRequests(method: string, pathPattern: RegExp): number {
    return this.requests.filter((r) => r.method === method && pathPattern.test(r.path)).length;
  }
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

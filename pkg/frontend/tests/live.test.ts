// Integration round trip against a live chat service. Runs only when
// CHARTBRIDGE_BASE_URL points at a running server, e.g.
//   chartbridge --config samples/config.json serve --port 8080
//   CHARTBRIDGE_BASE_URL=http://127.0.0.1:8080 npm test

import { describe, expect, it } from "vitest";

import { ChatApi } from "../src/api.js";
import { turnsFromLog } from "../src/state.js";

const BASE_URL = process.env.CHARTBRIDGE_BASE_URL;

describe.skipIf(!BASE_URL)("live server round trip", () => {
  it("creates a session, chats, leaves feedback, and re-derives the log", async () => {
    const api = new ChatApi(BASE_URL!);
    const patients = await api.listPatients();
    expect(patients.length).toBeGreaterThan(0);

    const sessionId = await api.createSession({
      patient_id: patients[0],
      kinds: ["note", "lab_result"],
      start: "2020-01-01T00:00:00Z",
      end: "2026-01-01T00:00:00Z",
      user_id: "ui-live-test",
    });

    const first = await api.sendMessage(sessionId, "Summarize this record.");
    expect(first.turn_index).toBe(0);
    const second = await api.sendMessage(sessionId, "Any abnormal labs?");
    expect(second.turn_index).toBe(1);

    await api.sendFeedback(sessionId, 0, "up");
    await expect(api.sendFeedback(sessionId, 0, "down")).rejects.toMatchObject({ status: 409 });

    const log = await api.fetchLog(sessionId);
    const turns = turnsFromLog(log);
    expect(turns.map((t) => t.turnIndex)).toEqual([0, 1]);
    expect(turns[0].response).toBe(first.response);
    expect(turns[0].feedback).toEqual({ thumbs: "up", note: null });
  });
});

// Typed client for the chat-service HTTP API. The UI talks to the server
// exclusively through this module.

export interface Selection {
  patient_id: string;
  kinds: string[];
  start: string;
  end: string;
  user_id?: string;
  department?: string;
}

export interface Feedback {
  thumbs: "up" | "down";
  note: string | null;
}

export interface Turn {
  turn_index: number;
  query: string;
  response: string;
  model: string;
  status: string;
  tokens: { sent: number; received: number };
  feedback: Feedback | null;
}

export interface SessionLog {
  session_id: string;
  patient_id: string;
  selection: { kinds: string[]; start: string; end: string };
  turns: Turn[];
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function detailOf(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (typeof body?.detail === "string") return body.detail;
  } catch {
    // fall through to the status line
  }
  return `request failed with status ${response.status}`;
}

export class ChatApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      throw new ApiError(response.status, await detailOf(response));
    }
    return (await response.json()) as T;
  }

  async listPatients(): Promise<string[]> {
    const body = await this.request<{ patients: string[] }>("/patients");
    return body.patients;
  }

  async createSession(selection: Selection): Promise<string> {
    const body = await this.request<{ session_id: string }>("/sessions", {
      method: "POST",
      body: JSON.stringify(selection),
    });
    return body.session_id;
  }

  sendMessage(sessionId: string, query: string): Promise<Turn> {
    return this.request<Turn>(`/sessions/${sessionId}/messages`, {
      method: "POST",
      body: JSON.stringify({ query }),
    });
  }

  async sendFeedback(
    sessionId: string,
    turnIndex: number,
    thumbs: "up" | "down",
    note?: string,
  ): Promise<void> {
    await this.request(`/sessions/${sessionId}/turns/${turnIndex}/feedback`, {
      method: "POST",
      body: JSON.stringify({ thumbs, note: note ?? null }),
    });
  }

  fetchLog(sessionId: string): Promise<SessionLog> {
    return this.request<SessionLog>(`/sessions/${sessionId}/log`);
  }
}

// Thin typed client for the chat service. All recommendation logic lives
// server-side; this module only moves JSON.

import type {
  CreateSessionResponse,
  HealthResponse,
  MessageResponse,
  TurnTrace,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = "error";
  let message = `HTTP ${response.status}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, message);
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/healthz");
  }

  async createSession(): Promise<string> {
    const body = await this.request<CreateSessionResponse>("POST", "/v1/sessions");
    return body.session_id;
  }

  sendMessage(sessionId: string, text: string): Promise<MessageResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/messages`, { text });
  }

  fetchTrace(sessionId: string, turnId: number): Promise<TurnTrace> {
    return this.request("GET", `/v1/sessions/${sessionId}/trace/${turnId}`);
  }
}

// Thin typed client for /api/v1. All simulation logic lives server-side;
// this module only moves JSON.

import type {
  AsyncReport,
  FeedbackReport,
  ImmediateReport,
  ScenarioListPayload,
  SessionPayload,
  StrategyPair,
  Utterance,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string = "/api/v1",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.base}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listScenarios(): Promise<ScenarioListPayload> {
    return this.request("/scenarios");
  }

  createSession(
    themeId: string,
    problemId: string,
    condition: "tutorup" | "baseline",
    testMode: boolean,
  ): Promise<SessionPayload> {
    return this.request("/sessions", {
      method: "POST",
      body: JSON.stringify({
        theme_id: themeId,
        problem_id: problemId,
        condition,
        test_mode: testMode,
      }),
    });
  }

  getSession(sessionId: string): Promise<SessionPayload> {
    return this.request(`/sessions/${sessionId}`);
  }

  postMessage(sessionId: string, text: string): Promise<{ utterances: Utterance[] }> {
    return this.request(`/sessions/${sessionId}/messages`, {
      method: "POST",
      body: JSON.stringify({ text }),
    });
  }

  requestFeedback(sessionId: string, kind: "immediate"): Promise<{ report: ImmediateReport }>;
  requestFeedback(sessionId: string, kind: "async"): Promise<{ report: AsyncReport }>;
  requestFeedback(
    sessionId: string,
    kind: "immediate" | "async",
  ): Promise<{ report: FeedbackReport }> {
    return this.request(`/sessions/${sessionId}/feedback/${kind}`, { method: "POST" });
  }

  reset(sessionId: string): Promise<{ transcript: Utterance[]; phase: string }> {
    return this.request(`/sessions/${sessionId}/reset`, { method: "POST" });
  }

  rollback(
    sessionId: string,
    index: number,
  ): Promise<{ transcript: Utterance[]; phase: string; recovered_text: string }> {
    return this.request(`/sessions/${sessionId}/rollback`, {
      method: "POST",
      body: JSON.stringify({ index }),
    });
  }

  baselineSubmit(
    sessionId: string,
    freeText: string,
  ): Promise<{ version: number; pairs: StrategyPair[] }> {
    return this.request(`/sessions/${sessionId}/baseline-response`, {
      method: "POST",
      body: JSON.stringify({ free_text: freeText }),
    });
  }
}

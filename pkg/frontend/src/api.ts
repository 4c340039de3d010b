/** Thin typed client for the session service. */

import type {
  CreatedSession,
  DatasetInfo,
  DesignScoresPayload,
  LabelAnswer,
  PseudoLabelsPayload,
  SessionState,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export class Api {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const parsed = (await resp.json()) as { error?: string };
        if (parsed.error) detail = parsed.error;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  registerDataset(body: unknown): Promise<DatasetInfo> {
    return this.request("POST", "/datasets", body);
  }

  createSession(datasetId: string, config: Record<string, unknown>): Promise<CreatedSession> {
    return this.request("POST", "/sessions", { dataset_id: datasetId, config });
  }

  getState(sessionId: string): Promise<SessionState> {
    return this.request("GET", `/sessions/${sessionId}/state`);
  }

  getPseudoLabels(sessionId: string): Promise<PseudoLabelsPayload> {
    return this.request("GET", `/sessions/${sessionId}/pseudo_labels`);
  }

  getDesignScores(sessionId: string): Promise<DesignScoresPayload> {
    return this.request("GET", `/sessions/${sessionId}/design_scores`);
  }

  submitLabels(sessionId: string, answers: LabelAnswer[]): Promise<{ accepted: number; state: string }> {
    return this.request("POST", `/sessions/${sessionId}/labels`, answers);
  }

  async exportCsv(sessionId: string): Promise<string> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/export`);
    if (!resp.ok) throw new ApiError(resp.status, resp.statusText);
    return await resp.text();
  }
}

/** DOM-free session driver: polling, label submission, export.
 *
 * The browser entry point wires this to canvases and buttons; tests drive it
 * directly against a live service.  The controller never computes labels or
 * scores itself; it only relays what the server returns.
 */

import { Api, ApiError } from "./api.js";
import type {
  DesignScoresPayload,
  LabelAnswer,
  PseudoLabelsPayload,
  SessionState,
} from "./types.js";

export interface Snapshot {
  state: SessionState | null;
  pseudoLabels: PseudoLabelsPayload | null;
  designScores: DesignScoresPayload | null;
  /** transport/poll failure; cleared by the next successful poll */
  error: string | null;
  /** rejected label submission; sticky until a submission succeeds */
  labelError: string | null;
}

export type Listener = (snapshot: Snapshot) => void;

export class SessionController {
  private snapshot: Snapshot = {
    state: null,
    pseudoLabels: null,
    designScores: null,
    error: null,
    labelError: null,
  };
  private listeners: Listener[] = [];
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private api: Api,
    public sessionId: string,
    private pollMs = 1000,
  ) {}

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  current(): Snapshot {
    return this.snapshot;
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.snapshot);
  }

  /** One полling round: state always, point payloads when it changed. */
  async refresh(): Promise<Snapshot> {
    try {
      const state = await this.api.getState(this.sessionId);
      const changed =
        this.snapshot.state === null ||
        state.iteration !== this.snapshot.state.iteration ||
        state.state !== this.snapshot.state.state;
      let pseudoLabels = this.snapshot.pseudoLabels;
      let designScores = this.snapshot.designScores;
      if (changed || pseudoLabels === null) {
        pseudoLabels = await this.api.getPseudoLabels(this.sessionId);
        designScores = await this.api.getDesignScores(this.sessionId);
      }
      this.snapshot = {
        state,
        pseudoLabels,
        designScores,
        error: null,
        labelError: this.snapshot.labelError,
      };
    } catch (err) {
      this.snapshot = {
        ...this.snapshot,
        error: err instanceof Error ? err.message : String(err),
      };
    }
    this.emit();
    return this.snapshot;
  }

  startPolling(): void {
    if (this.timer === null) {
      this.timer = setInterval(() => void this.refresh(), this.pollMs);
    }
  }

  stopPolling(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Submit one answer; a rejection is surfaced without disturbing the rest
   * of the pending batch. */
  async submitLabel(index: number, klass: number): Promise<void> {
    try {
      await this.api.submitLabels(this.sessionId, [{ index, class: klass }]);
      this.snapshot = { ...this.snapshot, labelError: null };
    } catch (err) {
      if (err instanceof ApiError) {
        this.snapshot = { ...this.snapshot, labelError: `label rejected: ${err.message}` };
      } else {
        throw err;
      }
    }
    await this.refresh();
  }

  async submitMany(answers: LabelAnswer[]): Promise<void> {
    await this.api.submitLabels(this.sessionId, answers);
    await this.refresh();
  }

  /** Wait until the loop finishes computing and hands back new queries. */
  async waitUntilInteractive(timeoutMs = 60_000, stepMs = 50): Promise<SessionState> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const snap = await this.refresh();
      const state = snap.state;
      if (state && state.state !== "computing") return state;
      if (Date.now() > deadline) throw new Error("session stayed computing too long");
      await new Promise((resolve) => setTimeout(resolve, stepMs));
    }
  }

  exportCsv(): Promise<string> {
    return this.api.exportCsv(this.sessionId);
  }
}

export async function createBlobSession(
  api: Api,
  generator: { n: number; classes: number; seed: number },
  config: Record<string, unknown>,
): Promise<SessionController> {
  const dataset = await api.registerDataset({ generator: { kind: "blobs", ...generator } });
  const created = await api.createSession(dataset.dataset_id, config);
  return new SessionController(api, created.session_id);
}

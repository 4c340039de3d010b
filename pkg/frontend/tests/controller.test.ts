import { describe, expect, it } from "vitest";

import { Api } from "../src/api.js";
import { SessionController } from "../src/controller.js";
import type { PseudoLabelsPayload, SessionState } from "../src/types.js";

function stateBody(overrides: Partial<SessionState> = {}): SessionState {
  return {
    session_id: "s1",
    state: "awaiting-labels",
    iteration: 0,
    labeled_count: 3,
    class_count: 3,
    pending_queries: [4, 5],
    answered_count: 0,
    history: [],
    ...overrides,
  };
}

function pointsBody(): PseudoLabelsPayload {
  return {
    pseudo_label: [0, 1, 2],
    certainty: [0.4, 0.5, 0.6],
    display_xy: [
      [0, 0],
      [1, 1],
      [2, 2],
    ],
    pending_queries: [4, 5],
    iteration: 0,
    stale: false,
  };
}

/** fetch stub keyed on "METHOD path", recording calls. */
function fakeFetch(routes: Record<string, () => { status?: number; body: unknown }>) {
  const calls: string[] = [];
  const fn = async (input: RequestInfo | URL, init?: RequestInit) => {
    const method = init?.method ?? "GET";
    const key = `${method} ${String(input)}`;
    calls.push(key);
    const route = routes[key];
    if (!route) return new Response(JSON.stringify({ error: "no route" }), { status: 404 });
    const { status = 200, body } = route();
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  };
  return { fn: fn as typeof fetch, calls };
}

describe("SessionController.refresh", () => {
  it("fetches state and point payloads, then serves them", async () => {
    const { fn } = fakeFetch({
      "GET /sessions/s1/state": () => ({ body: stateBody() }),
      "GET /sessions/s1/pseudo_labels": () => ({ body: pointsBody() }),
      "GET /sessions/s1/design_scores": () => ({
        body: { scores: null, excluded: [], iteration: 0, stale: false },
      }),
    });
    const controller = new SessionController(new Api("", fn), "s1");
    const snap = await controller.refresh();
    expect(snap.state?.state).toBe("awaiting-labels");
    expect(snap.pseudoLabels?.certainty).toHaveLength(3);
    expect(snap.error).toBeNull();
  });

  it("skips point payloads when nothing changed", async () => {
    const { fn, calls } = fakeFetch({
      "GET /sessions/s1/state": () => ({ body: stateBody() }),
      "GET /sessions/s1/pseudo_labels": () => ({ body: pointsBody() }),
      "GET /sessions/s1/design_scores": () => ({
        body: { scores: null, excluded: [], iteration: 0, stale: false },
      }),
    });
    const controller = new SessionController(new Api("", fn), "s1");
    await controller.refresh();
    await controller.refresh();
    expect(calls.filter((c) => c.includes("pseudo_labels"))).toHaveLength(1);
    expect(calls.filter((c) => c.includes("/state"))).toHaveLength(2);
  });

  it("keeps the previous snapshot and reports errors on failure", async () => {
    let healthy = true;
    const { fn } = fakeFetch({
      "GET /sessions/s1/state": () =>
        healthy ? { body: stateBody() } : { status: 500, body: { error: "boom" } },
      "GET /sessions/s1/pseudo_labels": () => ({ body: pointsBody() }),
      "GET /sessions/s1/design_scores": () => ({
        body: { scores: null, excluded: [], iteration: 0, stale: false },
      }),
    });
    const controller = new SessionController(new Api("", fn), "s1");
    await controller.refresh();
    healthy = false;
    const snap = await controller.refresh();
    expect(snap.error).toContain("boom");
    expect(snap.state?.iteration).toBe(0); // previous state retained
  });
});

describe("SessionController.submitLabel", () => {
  it("posts the answer and refreshes", async () => {
    let posted: unknown = null;
    const { fn } = fakeFetch({
      "POST /sessions/s1/labels": () => ({ body: { accepted: 1, state: "awaiting-labels" } }),
      "GET /sessions/s1/state": () => ({ body: stateBody({ answered_count: 1 }) }),
      "GET /sessions/s1/pseudo_labels": () => ({ body: pointsBody() }),
      "GET /sessions/s1/design_scores": () => ({
        body: { scores: null, excluded: [], iteration: 0, stale: false },
      }),
    });
    const recordingFetch: typeof fetch = async (input, init) => {
      if (init?.method === "POST") posted = JSON.parse(String(init.body));
      return fn(input, init);
    };
    const controller = new SessionController(new Api("", recordingFetch), "s1");
    await controller.submitLabel(4, 2);
    expect(posted).toEqual([{ index: 4, class: 2 }]);
    expect(controller.current().error).toBeNull();
  });

  it("surfaces a 409 inline without throwing", async () => {
    const { fn } = fakeFetch({
      "POST /sessions/s1/labels": () => ({ status: 409, body: { error: "index 9 is not pending" } }),
      "GET /sessions/s1/state": () => ({ body: stateBody() }),
      "GET /sessions/s1/pseudo_labels": () => ({ body: pointsBody() }),
      "GET /sessions/s1/design_scores": () => ({
        body: { scores: null, excluded: [], iteration: 0, stale: false },
      }),
    });
    const controller = new SessionController(new Api("", fn), "s1");
    await controller.submitLabel(9, 0);
    expect(controller.current().labelError).toContain("not pending");
  });

  it("surfaces a 422 for an out-of-range class", async () => {
    const { fn } = fakeFetch({
      "POST /sessions/s1/labels": () => ({ status: 422, body: { error: "class 7 outside [0, 3)" } }),
      "GET /sessions/s1/state": () => ({ body: stateBody() }),
      "GET /sessions/s1/pseudo_labels": () => ({ body: pointsBody() }),
      "GET /sessions/s1/design_scores": () => ({
        body: { scores: null, excluded: [], iteration: 0, stale: false },
      }),
    });
    const controller = new SessionController(new Api("", fn), "s1");
    await controller.submitLabel(4, 7);
    expect(controller.current().labelError).toContain("class 7");
  });
});

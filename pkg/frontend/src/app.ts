/** Browser entry: wires the session controller to the page.
 *
 * The session id lives in the URL hash, so a refresh restores the full view
 * from GET /state.  Clicking a ringed point opens the class picker; the
 * score-overlay toggle switches opacity from certainty to |selection score|.
 */

import { Api } from "./api.js";
import { SessionController, createBlobSession } from "./controller.js";
import { buildScatterView, classPalette, curveFromHistory, hitTest } from "./model.js";
import type { ScatterView } from "./model.js";
import { drawCurve } from "./curve.js";
import { drawScatter, makeProjector } from "./scatter.js";

const api = new Api("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const scatterCanvas = el<HTMLCanvasElement>("scatter");
const curveCanvas = el<HTMLCanvasElement>("curve");
const statusLine = el<HTMLDivElement>("status");
const errorLine = el<HTMLDivElement>("error");
const picker = el<HTMLDivElement>("picker");
const tableFallback = el<HTMLDivElement>("table-fallback");
const overlayToggle = el<HTMLInputElement>("overlay-toggle");
const exportButton = el<HTMLButtonElement>("export-btn");
const newSessionButton = el<HTMLButtonElement>("new-session-btn");

let controller: SessionController | null = null;
let view: ScatterView | null = null;
let pickedIndex: number | null = null;

function render(): void {
  if (!controller) return;
  const snap = controller.current();
  errorLine.textContent = snap.labelError ?? snap.error ?? "";
  const state = snap.state;
  if (!state) return;
  statusLine.textContent =
    `session ${controller.sessionId} | ${state.state} | iteration ${state.iteration}` +
    ` | ${state.labeled_count} labeled | ${state.pending_queries.length} pending`;

  const payload = snap.pseudoLabels;
  if (!payload) return;
  view = buildScatterView(
    payload,
    state.class_count,
    overlayToggle.checked ? snap.designScores : null,
  );
  if (view === null) {
    // no display coordinates: fall back to a pending-query table
    scatterCanvas.style.display = "none";
    tableFallback.style.display = "block";
    const rows = payload.pending_queries
      .map(
        (i) =>
          `<tr data-index="${i}"><td>#${i}</td><td>${payload.pseudo_label[i]}</td>` +
          `<td>${payload.certainty[i].toFixed(3)}</td></tr>`,
      )
      .join("");
    tableFallback.innerHTML =
      "<table><tr><th>pending</th><th>pseudo</th><th>certainty</th></tr>" + rows + "</table>";
    for (const tr of Array.from(tableFallback.querySelectorAll("tr[data-index]"))) {
      tr.addEventListener("click", () =>
        openPicker(Number((tr as HTMLElement).dataset.index), state.class_count),
      );
    }
  } else {
    scatterCanvas.style.display = "block";
    tableFallback.style.display = "none";
    const ctx = scatterCanvas.getContext("2d");
    if (ctx) drawScatter(ctx, view, scatterCanvas.width, scatterCanvas.height);
  }
  const curveCtx = curveCanvas.getContext("2d");
  if (curveCtx) drawCurve(curveCtx, curveFromHistory(state.history), curveCanvas.width, curveCanvas.height);
}

function openPicker(index: number, classCount: number): void {
  pickedIndex = index;
  const palette = classPalette(classCount);
  picker.innerHTML =
    `<span>point #${index}:</span> ` +
    palette
      .map(
        (color, c) =>
          `<button data-class="${c}" style="background:${color};color:#fff">${c}</button>`,
      )
      .join(" ");
  picker.style.display = "block";
  for (const btn of Array.from(picker.querySelectorAll("button[data-class]"))) {
    btn.addEventListener("click", () => {
      const klass = Number((btn as HTMLElement).dataset.class);
      picker.style.display = "none";
      if (controller && pickedIndex !== null) {
        void controller.submitLabel(pickedIndex, klass);
      }
      pickedIndex = null;
    });
  }
}

scatterCanvas.addEventListener("click", (event) => {
  if (!controller || !view) return;
  const snap = controller.current();
  if (!snap.state || !snap.pseudoLabels) return;
  const rect = scatterCanvas.getBoundingClientRect();
  const project = makeProjector(view, scatterCanvas.width, scatterCanvas.height);
  const hit = hitTest(view, event.clientX - rect.left, event.clientY - rect.top, project);
  if (hit !== null && snap.pseudoLabels.pending_queries.includes(hit)) {
    openPicker(hit, snap.state.class_count);
  }
});

overlayToggle.addEventListener("change", render);

exportButton.addEventListener("click", async () => {
  if (!controller) return;
  const csv = await controller.exportCsv();
  const blob = new Blob([csv], { type: "text/csv" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "pseudo_labels.csv";
  a.click();
  URL.revokeObjectURL(a.href);
});

newSessionButton.addEventListener("click", async () => {
  const fresh = await createBlobSession(
    api,
    { n: 1000, classes: 3, seed: Math.floor(Math.random() * 1e6) },
    { budget: 60, batch_size: 3, seed: 0 },
  );
  window.location.hash = fresh.sessionId;
  attach(fresh);
});

function attach(next: SessionController): void {
  controller?.stopPolling();
  controller = next;
  controller.onChange(render);
  controller.startPolling();
  void controller.refresh();
}

const existing = window.location.hash.replace(/^#/, "");
if (existing) {
  attach(new SessionController(api, existing));
}

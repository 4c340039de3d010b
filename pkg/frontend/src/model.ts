/** Pure view-state computation: palette, opacity, marks, curve points.
 *
 * Everything rendered comes from server payloads; the only client-side math
 * is the normalization of certainty/score values into opacity.
 */

import type { DesignScoresPayload, PseudoLabelsPayload, RunRecord } from "./types.js";

export const MIN_OPACITY = 0.15;
export const MAX_OPACITY = 1.0;

/** Evenly spaced hues; index = class. */
export function classPalette(classCount: number): string[] {
  const palette: string[] = [];
  for (let c = 0; c < classCount; c++) {
    const hue = Math.round((360 * c) / classCount);
    palette.push(`hsl(${hue}, 75%, 45%)`);
  }
  return palette;
}

/** Map certainty in [1/C, 1] linearly onto [MIN_OPACITY, MAX_OPACITY]. */
export function certaintyOpacity(certainty: number, classCount: number): number {
  const lo = 1 / classCount;
  const t = (certainty - lo) / (1 - lo);
  const clamped = Math.min(1, Math.max(0, t));
  return MIN_OPACITY + clamped * (MAX_OPACITY - MIN_OPACITY);
}

/** Normalize selection scores to [0, 1] for the overlay (max-normalized). */
export function scoreOpacity(scores: number[]): number[] {
  const max = scores.reduce((a, b) => Math.max(a, Math.abs(b)), 0);
  if (max <= 0) return scores.map(() => MIN_OPACITY);
  return scores.map((s) => MIN_OPACITY + (Math.abs(s) / max) * (MAX_OPACITY - MIN_OPACITY));
}

export interface Mark {
  x: number;
  y: number;
  color: string;
  opacity: number;
  ringed: boolean;
}

export interface ScatterView {
  marks: Mark[];
  /** bounding box of the display coordinates */
  bounds: { xMin: number; xMax: number; yMin: number; yMax: number };
}

export function buildScatterView(
  payload: PseudoLabelsPayload,
  classCount: number,
  overlay: DesignScoresPayload | null,
): ScatterView | null {
  if (payload.display_xy === null) return null;
  const palette = classPalette(classCount);
  const pending = new Set(payload.pending_queries);
  const overlayOpacity =
    overlay && overlay.scores ? scoreOpacity(overlay.scores) : null;
  const marks: Mark[] = payload.display_xy.map(([x, y], i) => ({
    x,
    y,
    color: palette[payload.pseudo_label[i]] ?? "#888",
    opacity: overlayOpacity
      ? overlayOpacity[i]
      : certaintyOpacity(payload.certainty[i], classCount),
    ringed: pending.has(i),
  }));
  const xs = marks.map((m) => m.x);
  const ys = marks.map((m) => m.y);
  return {
    marks,
    bounds: {
      xMin: Math.min(...xs),
      xMax: Math.max(...xs),
      yMin: Math.min(...ys),
      yMax: Math.max(...ys),
    },
  };
}

export interface CurvePoint {
  labeled: number;
  accuracy: number;
}

export function curveFromHistory(history: RunRecord[]): CurvePoint[] {
  return history
    .filter((r) => r.clustering_accuracy !== null)
    .map((r) => ({ labeled: r.labeled_count, accuracy: r.clustering_accuracy as number }));
}

/** Nearest mark within a pixel radius; used to hit-test clicks. */
export function hitTest(
  view: ScatterView,
  px: number,
  py: number,
  toPixel: (x: number, y: number) => [number, number],
  radius = 8,
): number | null {
  let best: number | null = null;
  let bestDist = radius * radius;
  view.marks.forEach((m, i) => {
    const [mx, my] = toPixel(m.x, m.y);
    const d = (mx - px) ** 2 + (my - py) ** 2;
    if (d <= bestDist) {
      best = i;
      bestDist = d;
    }
  });
  return best;
}

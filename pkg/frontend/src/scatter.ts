/** Canvas scatter renderer: one mark per point, rings on pending queries. */

import type { ScatterView } from "./model.js";

const PAD = 20;
const POINT_RADIUS = 3;
const RING_RADIUS = 7;

export function makeProjector(
  view: ScatterView,
  width: number,
  height: number,
): (x: number, y: number) => [number, number] {
  const { xMin, xMax, yMin, yMax } = view.bounds;
  const sx = (width - 2 * PAD) / Math.max(xMax - xMin, 1e-12);
  const sy = (height - 2 * PAD) / Math.max(yMax - yMin, 1e-12);
  const s = Math.min(sx, sy);
  return (x, y) => [PAD + (x - xMin) * s, height - PAD - (y - yMin) * s];
}

export function drawScatter(
  ctx: CanvasRenderingContext2D,
  view: ScatterView,
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  const project = makeProjector(view, width, height);
  for (const mark of view.marks) {
    const [px, py] = project(mark.x, mark.y);
    ctx.globalAlpha = mark.opacity;
    ctx.fillStyle = mark.color;
    ctx.beginPath();
    ctx.arc(px, py, POINT_RADIUS, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.globalAlpha = 1.0;
  for (const mark of view.marks) {
    if (!mark.ringed) continue;
    const [px, py] = project(mark.x, mark.y);
    ctx.strokeStyle = "#111";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(px, py, RING_RADIUS, 0, 2 * Math.PI);
    ctx.stroke();
  }
}

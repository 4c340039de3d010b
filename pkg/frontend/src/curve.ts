/** Accuracy-vs-labels line chart. */

import type { CurvePoint } from "./model.js";

const PAD = 28;

export function drawCurve(
  ctx: CanvasRenderingContext2D,
  points: CurvePoint[],
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#999";
  ctx.lineWidth = 1;
  ctx.strokeRect(PAD, PAD / 2, width - PAD - 4, height - PAD - PAD / 2);
  if (points.length === 0) return;

  const maxLabeled = Math.max(...points.map((p) => p.labeled), 1);
  const toX = (labeled: number) => PAD + (labeled / maxLabeled) * (width - PAD - 4);
  const toY = (acc: number) => height - PAD - acc * (height - PAD - PAD / 2);

  ctx.strokeStyle = "#0b6";
  ctx.lineWidth = 2;
  ctx.beginPath();
  points.forEach((p, i) => {
    const x = toX(p.labeled);
    const y = toY(p.accuracy);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();

  ctx.fillStyle = "#333";
  ctx.font = "11px sans-serif";
  ctx.fillText("labels", width / 2 - 15, height - 8);
  const last = points[points.length - 1];
  ctx.fillText(`${(last.accuracy * 100).toFixed(1)}%`, toX(last.labeled) - 34, toY(last.accuracy) - 6);
}

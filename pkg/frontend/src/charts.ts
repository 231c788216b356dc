// Minimal canvas line charts. The drawing surface is abstracted behind a
// small context interface so the renderers can be exercised headlessly.

import type { SeriesPoint } from "./store.js";

export interface DrawContext {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  closePath(): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  globalAlpha: number;
}

export interface ChartSeries {
  label: string;
  color: string;
  points: SeriesPoint[];
  /** optional symmetric band half-width per point (e.g. a confidence interval) */
  band?: SeriesPoint[];
}

const MARGIN = { left: 46, right: 8, top: 8, bottom: 18 };

export interface ChartScale {
  x(t_us: number): number;
  y(value: number): number;
  tMin: number;
  tMax: number;
  vMin: number;
  vMax: number;
}

export function computeScale(
  series: ChartSeries[],
  width: number,
  height: number,
): ChartScale | null {
  let tMin = Infinity;
  let tMax = -Infinity;
  let vMin = Infinity;
  let vMax = -Infinity;
  for (const s of series) {
    for (let i = 0; i < s.points.length; i++) {
      const p = s.points[i];
      const half = s.band?.[i]?.value ?? 0;
      tMin = Math.min(tMin, p.t_us);
      tMax = Math.max(tMax, p.t_us);
      vMin = Math.min(vMin, p.value - half);
      vMax = Math.max(vMax, p.value + half);
    }
  }
  if (!isFinite(tMin)) return null;
  if (tMax === tMin) tMax = tMin + 1;
  vMin = Math.min(vMin, 0);
  if (vMax === vMin) vMax = vMin + 1;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;
  return {
    x: (t) => MARGIN.left + ((t - tMin) / (tMax - tMin)) * plotW,
    y: (v) => MARGIN.top + (1 - (v - vMin) / (vMax - vMin)) * plotH,
    tMin,
    tMax,
    vMin,
    vMax,
  };
}

export function drawChart(
  ctx: DrawContext,
  series: ChartSeries[],
  width: number,
  height: number,
  unit = "",
): void {
  ctx.clearRect(0, 0, width, height);
  const scale = computeScale(series, width, height);
  ctx.font = "10px monospace";
  if (!scale) {
    ctx.fillStyle = "#667";
    ctx.fillText("waiting for data...", MARGIN.left, height / 2);
    return;
  }
  // axis labels: min/max of the value range
  ctx.fillStyle = "#99a";
  ctx.fillText(scale.vMax.toFixed(1) + unit, 2, MARGIN.top + 8);
  ctx.fillText(scale.vMin.toFixed(1) + unit, 2, height - MARGIN.bottom);
  for (const s of series) {
    if (s.band) {
      // shaded confidence band
      ctx.globalAlpha = 0.18;
      ctx.fillStyle = s.color;
      ctx.beginPath();
      for (let i = 0; i < s.points.length; i++) {
        const x = scale.x(s.points[i].t_us);
        const y = scale.y(s.points[i].value + (s.band[i]?.value ?? 0));
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      }
      for (let i = s.points.length - 1; i >= 0; i--) {
        const x = scale.x(s.points[i].t_us);
        ctx.lineTo(x, scale.y(s.points[i].value - (s.band[i]?.value ?? 0)));
      }
      ctx.closePath();
      ctx.fill();
      ctx.globalAlpha = 1.0;
    }
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    for (let i = 0; i < s.points.length; i++) {
      const x = scale.x(s.points[i].t_us);
      const y = scale.y(s.points[i].value);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}

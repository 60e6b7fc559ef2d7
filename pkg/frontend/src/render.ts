/**
 * Pure view-model mappings (testable headless) plus thin canvas painters.
 * All views share one tick axis: x spans [latestTick - windowTicks,
 * latestTick], scrolling left as the simulation advances.
 */

import { PanelState, SpikePoint } from "./panel.js";

export interface Viewport {
  width: number;
  height: number;
  windowTicks: number;
}

export interface Point {
  x: number;
  y: number;
}

function tickToX(tick: number, latest: number, view: Viewport): number {
  const t0 = latest - view.windowTicks;
  return ((tick - t0) / view.windowTicks) * view.width;
}

/** Raster: x = tick, y = neuron index; one point per received spike event. */
export function rasterPoints(panel: PanelState, neuronCount: number,
                             view: Viewport): Point[] {
  const latest = panel.latestTick;
  const out: Point[] = [];
  for (const { tick, neuron } of panel.raster) {
    if (tick < latest - view.windowTicks) continue;
    out.push({
      x: tickToX(tick, latest, view),
      y: neuronCount <= 1 ? view.height / 2
        : view.height - (neuron / (neuronCount - 1)) * view.height,
    });
  }
  return out;
}

/** Membrane trace polylines, one array per unbroken segment (gaps from
 * dropped frames stay visible as breaks). */
export function traceSegments(panel: PanelState, neuron: number,
                              vRange: [number, number], view: Viewport): Point[][] {
  const segments = panel.traces.get(neuron) ?? [];
  const latest = panel.latestTick;
  const [vLo, vHi] = vRange;
  const out: Point[][] = [];
  for (const seg of segments) {
    const mapped: Point[] = [];
    for (const { tick, v } of seg) {
      if (tick < latest - view.windowTicks) continue;
      mapped.push({
        x: tickToX(tick, latest, view),
        y: view.height - ((v - vLo) / (vHi - vLo)) * view.height,
      });
    }
    if (mapped.length > 0) out.push(mapped);
  }
  return out;
}

/** Rate meter readings: latest per-population Hz. */
export function rateMeter(panel: PanelState): [string, number][] {
  const out: [string, number][] = [];
  for (const [population, hist] of panel.rateHistory) {
    if (hist.length > 0) out.push([population, hist[hist.length - 1].hz]);
  }
  out.sort((a, b) => (a[0] < b[0] ? -1 : 1));
  return out;
}

// -- canvas painters (browser only) ------------------------------------------

export function paintRaster(ctx: CanvasRenderingContext2D, panel: PanelState,
                            neuronCount: number, view: Viewport): void {
  ctx.clearRect(0, 0, view.width, view.height);
  ctx.fillStyle = "#0b3d91";
  for (const p of rasterPoints(panel, neuronCount, view)) {
    ctx.fillRect(p.x, p.y - 1, 2, 2);
  }
}

export function paintTraces(ctx: CanvasRenderingContext2D, panel: PanelState,
                            neurons: number[], vRange: [number, number],
                            view: Viewport): void {
  ctx.clearRect(0, 0, view.width, view.height);
  const colors = ["#b5262f", "#1c7c54", "#5a4fcf", "#b8860b"];
  neurons.forEach((neuron, i) => {
    ctx.strokeStyle = colors[i % colors.length];
    ctx.lineWidth = 1.2;
    for (const seg of traceSegments(panel, neuron, vRange, view)) {
      if (seg.length < 2) continue;
      ctx.beginPath();
      ctx.moveTo(seg[0].x, seg[0].y);
      for (const p of seg.slice(1)) ctx.lineTo(p.x, p.y);
      ctx.stroke();
    }
  });
}

/**
 * DOM wiring for the steering panel. Everything stateful lives in PanelState
 * and SteerSession; this file only builds controls and repaints on a frame
 * timer.
 */

import { PanelController } from "./controller.js";
import { PanelState } from "./panel.js";
import { paintRaster, paintTraces, rateMeter, Viewport } from "./render.js";
import { SteerSession } from "./session.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
};

interface SliderSpec {
  name: string;
  min: number;
  max: number;
  step: number;
  initial: number;
}

const LIF_SLIDERS: SliderSpec[] = [
  { name: "v_thresh", min: -60, max: -40, step: 0.5, initial: -50 },
  { name: "v_rest", min: -75, max: -60, step: 0.5, initial: -65 },
  { name: "c_m", min: 0.2, max: 5, step: 0.1, initial: 1 },
  { name: "r_m", min: 1, max: 50, step: 0.5, initial: 10 },
  { name: "t_refrac", min: 0, max: 10, step: 0.5, initial: 2 },
  { name: "tau_syn", min: 1, max: 20, step: 0.5, initial: 5 },
];

let session: SteerSession | null = null;
let controller: PanelController | null = null;
const panel = new PanelState();

function toast(text: string): void {
  const box = $("toast");
  box.textContent = text;
  box.classList.add("visible");
  setTimeout(() => box.classList.remove("visible"), 4000);
}

function buildSliders(population: string): void {
  const host = $("sliders");
  host.innerHTML = "";
  for (const spec of LIF_SLIDERS) {
    const row = document.createElement("div");
    row.className = "control-row";
    const label = document.createElement("label");
    label.textContent = spec.name;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = String(spec.min);
    slider.max = String(spec.max);
    slider.step = String(spec.step);
    slider.value = String(spec.initial);
    const acked = document.createElement("span");
    acked.className = "acked";
    acked.dataset.pop = population;
    acked.dataset.name = spec.name;
    acked.textContent = "—";
    slider.addEventListener("input", () => {
      controller?.setParam(population, spec.name, Number(slider.value));
    });
    row.append(label, slider, acked);
    host.append(row);
  }

  const rateRow = document.createElement("div");
  rateRow.className = "control-row";
  const rateLabel = document.createElement("label");
  rateLabel.textContent = "input rate (events/s)";
  const rate = document.createElement("input");
  rate.type = "range";
  rate.min = "0";
  rate.max = "800";
  rate.step = "10";
  rate.value = "100";
  const rateAcked = document.createElement("span");
  rateAcked.className = "acked";
  rateAcked.id = "acked-rate";
  rateAcked.textContent = "—";
  rate.addEventListener("input", () => {
    controller?.setInput(population, {
      kind: "poisson-spikes",
      amplitude: Number(($("amplitude") as HTMLInputElement).value),
      rate: Number(rate.value),
    });
  });
  rateRow.append(rateLabel, rate, rateAcked);
  host.append(rateRow);
}

function refreshReadouts(population: string): void {
  $("status").textContent =
    `${panel.connection} | sim ${panel.serverState} @ tick ${panel.latestTick}`;
  for (const el of document.querySelectorAll<HTMLSpanElement>(".acked[data-name]")) {
    const value = panel.displayedParam(el.dataset.pop!, el.dataset.name!);
    const pending = panel.isPending(el.dataset.pop!, el.dataset.name!);
    el.textContent = (value === undefined ? "—" : value.toFixed(2)) +
      (pending ? " (pending)" : "");
  }
  const input = panel.displayedInput(population);
  const pendingInput = panel.isPending(population);
  $("acked-rate").textContent =
    (input === undefined ? "—" : `${input.rate.toFixed(0)}/s`) +
    (pendingInput ? " (pending)" : "");
  const meter = $("rates");
  meter.innerHTML = "";
  for (const [pop, hz] of rateMeter(panel)) {
    const row = document.createElement("div");
    row.textContent = `${pop}: ${hz.toFixed(1)} Hz`;
    meter.append(row);
  }
  if (panel.lastError !== null) {
    toast(panel.lastError);
    panel.lastError = null;
  }
}

function connect(): void {
  const population = ($("population") as HTMLInputElement).value;
  const url = ($("endpoint") as HTMLInputElement).value;
  const neuronCount = Number(($("neurons") as HTMLInputElement).value);
  session?.close();
  session = new SteerSession(url, {
    subscription: {
      channels: ["spikes", "membrane", "rates"],
      membrane_neurons: [0, 1],
      membrane_decimation: 1,
      rate_window_ms: 100,
    },
    onFrame: (frame) => panel.applyFrame(frame),
    onState: (state) => panel.setConnection(state),
    onProtocolError: (err) => console.warn("bad frame ignored:", err.message),
  });
  controller = new PanelController(session, panel);
  session.connect();
  buildSliders(population);

  const rasterCtx = ($("raster") as HTMLCanvasElement).getContext("2d")!;
  const traceCtx = ($("traces") as HTMLCanvasElement).getContext("2d")!;
  const view: Viewport = { width: 900, height: 260, windowTicks: 2000 };
  const repaint = () => {
    paintRaster(rasterCtx, panel, neuronCount, view);
    paintTraces(traceCtx, panel, [0, 1], [-90, 40], view);
    refreshReadouts(population);
    requestAnimationFrame(repaint);
  };
  requestAnimationFrame(repaint);

  $("pause").onclick = () => controller?.pause();
  $("resume").onclick = () => controller?.resume();
}

$("connect").onclick = connect;

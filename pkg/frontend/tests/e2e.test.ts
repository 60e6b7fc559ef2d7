/**
 * End-to-end acceptance: drive a real served simulation through the panel.
 * Spawns the Python server (the package must be installed), connects over
 * WebSocket, changes the input rate via the controller, and checks that the
 * ack carries an effective tick, the rate meter rises within one rate window,
 * and every spike frame the server sent appears as exactly one raster point.
 */

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import WebSocket from "ws";

import { PanelController } from "../src/controller.js";
import { PanelState } from "../src/panel.js";
import { rasterPoints, rateMeter } from "../src/render.js";
import { Frame, SpikesFrame } from "../src/protocol.js";
import { SocketLike, SteerSession } from "../src/session.js";

const CONFIG = `
engine: {dt: 1.0, seed: 21, max_ticks: 1000000000}
populations:
  - name: p
    model: lif
    size: 10
    params: {v_rest: -65.0, v_thresh: -50.0, v_reset: -65.0, c_m: 1.0, r_m: 10.0, t_refrac: 2.0}
inputs:
  p: {kind: poisson-spikes, amplitude: 1.5, rate: 100.0}
`;

function wsFactory(url: string): SocketLike {
  return new WebSocket(url) as unknown as SocketLike;
}

async function until(pred: () => boolean, what: string, ms = 30_000): Promise<void> {
  const deadline = Date.now() + ms;
  while (Date.now() < deadline) {
    if (pred()) return;
    await new Promise((r) => setTimeout(r, 10));
  }
  throw new Error(`timed out waiting for ${what}`);
}

let proc: ChildProcess;
let wsUrl = "";

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "panel-e2e-"));
  const cfgPath = join(dir, "net.yaml");
  writeFileSync(cfgPath, CONFIG);
  proc = spawn("spikesteer", [
    "serve", "--config", cfgPath,
    "--listen", "127.0.0.1:0", "--ws-listen", "127.0.0.1:0",
  ], { stdio: ["ignore", "pipe", "inherit"] });
  let banner = "";
  proc.stdout!.on("data", (chunk: Buffer) => { banner += chunk.toString(); });
  await until(() => banner.includes("listening"), "server banner");
  const match = banner.match(/(ws:\/\/[0-9.]+:\d+\/control)/);
  if (match === null) throw new Error(`no ws endpoint in: ${banner}`);
  wsUrl = match[1];
}, 60_000);

afterAll(() => {
  proc?.kill();
});

describe("steering panel against a served simulation", () => {
  it("steers the input rate, renders the rise, and loses no spikes", async () => {
    const panel = new PanelState({ rasterWindowTicks: 5000 });
    const received: SpikesFrame[] = [];
    const session = new SteerSession(wsUrl, {
      socketFactory: wsFactory,
      subscription: {
        channels: ["spikes", "membrane", "rates"],
        membrane_neurons: [0, 1],
        membrane_decimation: 1,
        rate_window_ms: 100,
      },
      onFrame: (frame: Frame) => {
        if (frame.type === "spikes") received.push(frame);
        panel.applyFrame(frame);
      },
      onState: (s) => panel.setConnection(s),
    });
    const controller = new PanelController(session, panel);
    session.connect();
    await until(() => session.state === "live", "live session");
    await until(() => panel.serverState === "paused", "connected status frame");

    // run the first 400 ticks at the base rate
    controller.resume(400);
    await until(() => panel.serverState === "paused" && panel.serverTick === 400,
                "auto-pause at tick 400");
    const preRate = panel.currentRate("p");
    expect(preRate).toBeGreaterThan(0);

    // change the input rate through the panel control
    controller.setInput("p", { kind: "poisson-spikes", amplitude: 1.5, rate: 400 });
    await until(() => panel.displayedInput("p") !== undefined, "set_input ack");
    expect(panel.displayedInput("p")!.rate).toBe(400);
    expect(panel.lastEffectiveTick).toBe(400); // the boundary it applied at
    expect(panel.isPending("p")).toBe(false);

    // within one rate window after the change the meter must rise
    controller.resume(900);
    await until(() => panel.serverState === "paused" && panel.serverTick === 900,
                "auto-pause at tick 900");
    const firstWindowAfter = panel.rateHistory.get("p")!
      .find((s) => s.tick >= 400 + 100 - 1);
    expect(firstWindowAfter).toBeDefined();
    expect(firstWindowAfter!.hz).toBeGreaterThan(preRate! * 1.5);
    const meter = rateMeter(panel);
    expect(meter[0][0]).toBe("p");
    expect(meter[0][1]).toBeGreaterThan(preRate!);

    // lossless rendering: every spike event the server sent is exactly one
    // raster point (window covers the whole run, so nothing was evicted)
    const sentEvents = received.flatMap((f) =>
      f.neurons.map((n) => `${f.tick}:${n}`));
    expect(panel.spikesIngested).toBe(sentEvents.length);
    const points = rasterPoints(panel, 10, fullRunView());
    expect(points).toHaveLength(sentEvents.length);
    const rasterKeys = panel.raster.map((p) => `${p.tick}:${p.neuron}`);
    expect(rasterKeys).toEqual(sentEvents);
    expect(sentEvents.length).toBeGreaterThan(100);

    session.send({ type: "stop" });
    await until(() => panel.serverState === "stopped", "final status frame");
    session.close();
  }, 90_000);
});

function fullRunView() {
  return { width: 900, height: 260, windowTicks: 5000 };
}

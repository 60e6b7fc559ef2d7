/**
 * Panel state: everything the UI renders, fed exclusively by telemetry
 * frames. Two invariants hold throughout:
 *
 * - displayed parameter/input values reflect server acks only; a sent but
 *   unacked command is shown as pending, never as the new value, and a
 *   rejection simply clears the pending marker (the control snaps back to
 *   the acked value) and surfaces the reason;
 * - the spike raster ingests every spike event exactly once and is bounded
 *   (drop-oldest beyond the tick window / point cap).
 */

import { ConnectionState } from "./session.js";
import { Frame, InputSpec } from "./protocol.js";

export interface SpikePoint {
  tick: number;
  neuron: number;
}

export interface TracePoint {
  tick: number;
  v: number;
}

export interface RateSample {
  tick: number;
  hz: number;
}

interface PendingParam {
  kind: "param";
  population: string;
  name: string;
  value: number;
}

interface PendingInput {
  kind: "input";
  population: string;
  input: InputSpec;
}

export type Pending = (PendingParam | PendingInput) & { id: number };

export interface PanelOptions {
  rasterWindowTicks?: number;  // raster keeps roughly the last N ticks
  rasterMaxPoints?: number;
  membraneDecimation?: number; // gap detection threshold for traces
  rateHistoryLength?: number;
}

export class PanelState {
  connection: ConnectionState = "idle";
  serverState = "unknown";
  serverTick = 0;
  lastError: string | null = null;

  /** last server-acked values, keyed population -> name -> value */
  readonly ackedParams = new Map<string, Map<string, number>>();
  readonly ackedInputs = new Map<string, InputSpec>();
  readonly pending = new Map<number, Pending>();
  lastEffectiveTick: number | null = null;

  readonly raster: SpikePoint[] = [];
  readonly traces = new Map<number, TracePoint[][]>(); // neuron -> segments
  readonly rateHistory = new Map<string, RateSample[]>();
  spikesIngested = 0;
  latestTick = 0;

  private readonly windowTicks: number;
  private readonly maxPoints: number;
  private readonly decimation: number;
  private readonly rateLength: number;

  constructor(opts: PanelOptions = {}) {
    this.windowTicks = opts.rasterWindowTicks ?? 2000;
    this.maxPoints = opts.rasterMaxPoints ?? 200_000;
    this.decimation = opts.membraneDecimation ?? 1;
    this.rateLength = opts.rateHistoryLength ?? 200;
  }

  setConnection(state: ConnectionState): void {
    this.connection = state;
  }

  /** Record a command the controller just sent (display stays unchanged). */
  recordSent(pending: Pending): void {
    this.pending.set(pending.id, pending);
  }

  isPending(population: string, name?: string): boolean {
    for (const p of this.pending.values()) {
      if (p.kind === "param" && p.population === population && p.name === name) return true;
      if (p.kind === "input" && name === undefined && p.population === population) return true;
    }
    return false;
  }

  displayedParam(population: string, name: string): number | undefined {
    return this.ackedParams.get(population)?.get(name);
  }

  displayedInput(population: string): InputSpec | undefined {
    return this.ackedInputs.get(population);
  }

  currentRate(population: string): number | undefined {
    const hist = this.rateHistory.get(population);
    return hist && hist.length > 0 ? hist[hist.length - 1].hz : undefined;
  }

  applyFrame(frame: Frame): void {
    switch (frame.type) {
      case "status":
        this.serverState = frame.state;
        this.serverTick = frame.tick;
        this.latestTick = Math.max(this.latestTick, frame.tick);
        break;
      case "ack": {
        const pending = this.pending.get(frame.id);
        if (pending !== undefined) {
          this.pending.delete(frame.id);
          this.lastEffectiveTick = frame.tick;
          if (pending.kind === "param") {
            let byName = this.ackedParams.get(pending.population);
            if (byName === undefined) {
              byName = new Map();
              this.ackedParams.set(pending.population, byName);
            }
            byName.set(pending.name, pending.value);
          } else {
            this.ackedInputs.set(pending.population, pending.input);
          }
        }
        break;
      }
      case "error":
        // a rejected command never changed the display; dropping the pending
        // marker reverts the control to the acked value
        if (frame.id !== undefined) this.pending.delete(frame.id);
        this.lastError = frame.reason;
        break;
      case "spikes": {
        this.latestTick = Math.max(this.latestTick, frame.tick);
        for (const neuron of frame.neurons) {
          this.raster.push({ tick: frame.tick, neuron });
          this.spikesIngested += 1;
        }
        const cutoff = this.latestTick - this.windowTicks;
        while (
          this.raster.length > 0 &&
          (this.raster[0].tick < cutoff || this.raster.length > this.maxPoints)
        ) {
          this.raster.shift();
        }
        break;
      }
      case "membrane": {
        this.latestTick = Math.max(this.latestTick, frame.tick);
        for (const [neuron, v] of frame.samples) {
          let segments = this.traces.get(neuron);
          if (segments === undefined) {
            segments = [[]];
            this.traces.set(neuron, segments);
          }
          const current = segments[segments.length - 1];
          const last = current[current.length - 1];
          if (last !== undefined && frame.tick - last.tick > this.decimation) {
            segments.push([{ tick: frame.tick, v }]); // dropped frames = gap
          } else {
            current.push({ tick: frame.tick, v });
          }
          const total = segments.reduce((n, s) => n + s.length, 0);
          if (total > this.windowTicks) {
            const head = segments[0];
            head.shift();
            if (head.length === 0 && segments.length > 1) segments.shift();
          }
        }
        break;
      }
      case "rates": {
        this.latestTick = Math.max(this.latestTick, frame.tick);
        for (const [population, hz] of frame.rates) {
          let hist = this.rateHistory.get(population);
          if (hist === undefined) {
            hist = [];
            this.rateHistory.set(population, hist);
          }
          hist.push({ tick: frame.tick, hz });
          if (hist.length > this.rateLength) hist.shift();
        }
        break;
      }
    }
  }
}

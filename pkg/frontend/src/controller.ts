/**
 * Binds a live session to the panel state: steering calls go out as commands
 * (coalesced per control so slider drags cannot flood the boundary queue),
 * and the pending bookkeeping that ack-gates the display happens here.
 */

import { Coalescer } from "./coalesce.js";
import { PanelState } from "./panel.js";
import { InputSpec, Target } from "./protocol.js";
import { SteerSession } from "./session.js";

export class PanelController {
  private readonly coalescers = new Map<string, Coalescer<() => void>>();

  constructor(
    readonly session: SteerSession,
    readonly panel: PanelState,
    private readonly coalesceMs = 100,
  ) {}

  private coalesced(key: string, send: () => void): void {
    let c = this.coalescers.get(key);
    if (c === undefined) {
      c = new Coalescer<() => void>((fn) => fn(), this.coalesceMs);
      this.coalescers.set(key, c);
    }
    c.push(send);
  }

  /** Slider/field change: one set_param, pending until the server answers. */
  setParam(population: string, name: string, value: number): void {
    this.coalesced(`param:${population}:${name}`, () => {
      const id = this.session.send({
        type: "set_param",
        target: population as Target,
        name,
        value,
      });
      this.panel.recordSent({ kind: "param", id, population, name, value });
    });
  }

  setInput(population: string, input: InputSpec): void {
    this.coalesced(`input:${population}`, () => {
      const id = this.session.send({
        type: "set_input",
        target: population as Target,
        input,
      });
      this.panel.recordSent({ kind: "input", id, population, input });
    });
  }

  pause(): void {
    this.session.send({ type: "pause" });
  }

  resume(untilTick?: number): void {
    this.session.send(
      untilTick === undefined
        ? { type: "resume" }
        : { type: "resume", until_tick: untilTick },
    );
  }
}

/**
 * WebSocket session: connects, subscribes, hands every inbound frame to the
 * panel, and reconnects with exponential backoff when the link drops. The
 * socket constructor is injectable so tests (and the node e2e run) can supply
 * their own implementation.
 */

import { Command, Frame, ProtocolError, Subscribe, decode, encode, isFrame } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionState = "idle" | "connecting" | "live" | "reconnecting" | "closed";

/** Omit that distributes over a union (plain Omit collapses it). */
export type OutboundCommand = Command extends infer C
  ? C extends Command ? Omit<C, "id"> : never
  : never;

export interface SessionOptions {
  socketFactory?: SocketFactory;
  subscription?: Omit<Subscribe, "type" | "id">;
  backoffBaseMs?: number;
  backoffMaxMs?: number;
  onFrame?: (frame: Frame) => void;
  onState?: (state: ConnectionState) => void;
  onProtocolError?: (err: ProtocolError) => void;
}

const DEFAULT_SUBSCRIPTION: Omit<Subscribe, "type" | "id"> = {
  channels: ["spikes", "membrane", "rates"],
  membrane_neurons: [],
  membrane_decimation: 1,
  rate_window_ms: 100,
};

export class SteerSession {
  readonly url: string;
  state: ConnectionState = "idle";

  private socket: SocketLike | null = null;
  private nextId = 1;
  private attempts = 0;
  private closedByUser = false;
  private retryHandle: ReturnType<typeof setTimeout> | null = null;
  private readonly opts: Required<Pick<SessionOptions, "backoffBaseMs" | "backoffMaxMs">> &
    SessionOptions;

  constructor(url: string, opts: SessionOptions = {}) {
    this.url = url;
    this.opts = { backoffBaseMs: 250, backoffMaxMs: 5000, ...opts };
  }

  connect(): void {
    this.closedByUser = false;
    this.open();
  }

  private open(): void {
    const factory = this.opts.socketFactory ??
      ((url: string) => new WebSocket(url) as unknown as SocketLike);
    this.setState(this.attempts === 0 ? "connecting" : "reconnecting");
    const sock = factory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.attempts = 0;
      this.setState("live");
      this.send({
        type: "subscribe",
        ...(this.opts.subscription ?? DEFAULT_SUBSCRIPTION),
      });
    };
    sock.onmessage = (ev) => {
      let frame;
      try {
        frame = decode(String(ev.data));
      } catch (err) {
        // malformed frame: log and keep the session alive
        this.opts.onProtocolError?.(err as ProtocolError);
        return;
      }
      if (isFrame(frame)) this.opts.onFrame?.(frame);
    };
    sock.onerror = () => {
      // close follows; handled there
    };
    sock.onclose = () => {
      this.socket = null;
      if (this.closedByUser) {
        this.setState("closed");
        return;
      }
      this.scheduleRetry();
    };
  }

  private scheduleRetry(): void {
    this.setState("reconnecting");
    const delay = Math.min(
      this.opts.backoffBaseMs * 2 ** this.attempts,
      this.opts.backoffMaxMs,
    );
    this.attempts += 1;
    this.retryHandle = setTimeout(() => this.open(), delay);
  }

  /** Queue a command; assigns and returns its connection-monotone id. */
  send(cmd: OutboundCommand): number {
    const id = this.nextId++;
    const full = { ...cmd, id } as Command;
    if (this.socket === null || this.state !== "live") {
      throw new Error("session is not live");
    }
    this.socket.send(encode(full));
    return id;
  }

  close(): void {
    this.closedByUser = true;
    if (this.retryHandle !== null) clearTimeout(this.retryHandle);
    if (this.socket !== null) this.socket.close();
    else this.setState("closed");
  }

  private setState(state: ConnectionState): void {
    if (state !== this.state) {
      this.state = state;
      this.opts.onState?.(state);
    }
  }
}

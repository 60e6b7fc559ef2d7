import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { decode, Frame } from "../src/protocol.js";
import { SocketLike, SteerSession } from "../src/session.js";

class FakeSocket implements SocketLike {
  static instances: FakeSocket[] = [];
  sent: string[] = [];
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  constructor(readonly url: string) {
    FakeSocket.instances.push(this);
  }

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.onclose?.();
  }

  serverSays(line: string): void {
    this.onmessage?.({ data: line });
  }
}

function makeSession(frames: Frame[] = [], states: string[] = []) {
  return new SteerSession("ws://x/control", {
    socketFactory: (url) => new FakeSocket(url),
    onFrame: (f) => frames.push(f),
    onState: (s) => states.push(s),
    backoffBaseMs: 100,
    backoffMaxMs: 1000,
  });
}

describe("session", () => {
  beforeEach(() => {
    vi.useFakeTimers();
    FakeSocket.instances = [];
  });
  afterEach(() => vi.useRealTimers());

  it("subscribes to all channels on open and goes live", () => {
    const states: string[] = [];
    const session = makeSession([], states);
    session.connect();
    const sock = FakeSocket.instances[0];
    sock.onopen!();
    expect(states).toEqual(["connecting", "live"]);
    const sub = decode(sock.sent[0]);
    expect(sub.type).toBe("subscribe");
    expect((sub as { channels: string[] }).channels)
      .toEqual(["spikes", "membrane", "rates"]);
  });

  it("assigns strictly increasing command ids", () => {
    const session = makeSession();
    session.connect();
    const sock = FakeSocket.instances[0];
    sock.onopen!();
    session.send({ type: "pause" });
    session.send({ type: "resume" });
    const ids = sock.sent.map((l) => (decode(l) as { id: number }).id);
    expect(ids).toEqual([1, 2, 3]); // subscribe took id 1
  });

  it("routes frames and survives malformed ones", () => {
    const frames: Frame[] = [];
    const session = makeSession(frames);
    session.connect();
    const sock = FakeSocket.instances[0];
    sock.onopen!();
    sock.serverSays('{"type":"status","tick":3,"state":"running"}');
    sock.serverSays("{broken");
    sock.serverSays('{"type":"spikes","tick":4,"neurons":[2]}');
    expect(frames.map((f) => f.type)).toEqual(["status", "spikes"]);
  });

  it("reconnects with exponential backoff after a drop", () => {
    const states: string[] = [];
    const session = makeSession([], states);
    session.connect();
    FakeSocket.instances[0].onopen!();
    FakeSocket.instances[0].onclose!(); // server died
    expect(states).toEqual(["connecting", "live", "reconnecting"]);

    vi.advanceTimersByTime(100); // first retry after base delay
    expect(FakeSocket.instances).toHaveLength(2);
    FakeSocket.instances[1].onclose!(); // still down
    vi.advanceTimersByTime(100);
    expect(FakeSocket.instances).toHaveLength(2); // backoff doubled, not yet due
    vi.advanceTimersByTime(100);
    expect(FakeSocket.instances).toHaveLength(3);

    FakeSocket.instances[2].onopen!(); // recovered
    expect(session.state).toBe("live");
  });

  it("a deliberate close does not reconnect", () => {
    const session = makeSession();
    session.connect();
    FakeSocket.instances[0].onopen!();
    session.close();
    vi.advanceTimersByTime(10_000);
    expect(FakeSocket.instances).toHaveLength(1);
    expect(session.state).toBe("closed");
  });

  it("refuses to send while not live", () => {
    const session = makeSession();
    session.connect();
    expect(() => session.send({ type: "pause" })).toThrow("not live");
  });
});

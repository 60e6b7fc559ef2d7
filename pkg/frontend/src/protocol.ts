/**
 * Wire protocol: one JSON object per line/text frame, discriminated by
 * "type". Mirrors the server's grammar; unknown fields are ignored on
 * decode, unknown types are an error.
 */

export type Target = string | [number, number];

export interface InputSpec {
  kind: "constant-current" | "poisson-spikes";
  amplitude: number;
  rate: number;
}

export interface SetParam {
  type: "set_param";
  id: number;
  target: Target;
  name: string;
  value: number;
  at_tick?: number;
}

export interface SetInput {
  type: "set_input";
  id: number;
  target: Target;
  input: InputSpec;
  at_tick?: number;
}

export interface Pause {
  type: "pause";
  id: number;
}

export interface Resume {
  type: "resume";
  id: number;
  until_tick?: number;
}

export interface Subscribe {
  type: "subscribe";
  id: number;
  channels: string[];
  membrane_neurons?: number[];
  membrane_decimation?: number;
  rate_window_ms?: number;
}

export interface SnapshotRequest {
  type: "snapshot";
  id: number;
  path?: string;
}

export interface Stop {
  type: "stop";
  id: number;
}

export type Command =
  | SetParam
  | SetInput
  | Pause
  | Resume
  | Subscribe
  | SnapshotRequest
  | Stop;

export interface SpikesFrame {
  type: "spikes";
  tick: number;
  neurons: number[];
}

export interface MembraneFrame {
  type: "membrane";
  tick: number;
  samples: [number, number][]; // [neuron, mV]
}

export interface RatesFrame {
  type: "rates";
  tick: number;
  window_ms: number;
  rates: [string, number][]; // [population, Hz]
}

export interface AckFrame {
  type: "ack";
  id: number;
  tick: number;
}

export interface ErrorFrame {
  type: "error";
  reason: string;
  id?: number;
  tick?: number;
  offset?: number;
}

export interface StatusFrame {
  type: "status";
  tick: number;
  state: string;
  detail?: string;
}

export type Frame =
  | SpikesFrame
  | MembraneFrame
  | RatesFrame
  | AckFrame
  | ErrorFrame
  | StatusFrame;

export type Message = Command | Frame;

const COMMAND_TYPES = new Set([
  "set_param", "set_input", "pause", "resume", "subscribe", "snapshot", "stop",
]);
const FRAME_TYPES = new Set([
  "spikes", "membrane", "rates", "ack", "error", "status",
]);

export class ProtocolError extends Error {}

/** Canonical single-line encoding: sorted keys, no whitespace, no nulls. */
export function encode(msg: Message): string {
  const clean: Record<string, unknown> = {};
  const raw = msg as unknown as Record<string, unknown>;
  for (const key of Object.keys(raw).sort()) {
    const value = raw[key];
    if (value !== undefined && value !== null) clean[key] = value;
  }
  return JSON.stringify(clean);
}

function need<T>(obj: Record<string, unknown>, field: string, check: (v: unknown) => v is T): T {
  const v = obj[field];
  if (v === undefined) throw new ProtocolError(`missing field '${field}'`);
  if (!check(v)) throw new ProtocolError(`field '${field}' has wrong type`);
  return v;
}

const isNumber = (v: unknown): v is number => typeof v === "number";
const isString = (v: unknown): v is string => typeof v === "string";
const isArray = (v: unknown): v is unknown[] => Array.isArray(v);
const isObject = (v: unknown): v is Record<string, unknown> =>
  typeof v === "object" && v !== null && !Array.isArray(v);

function decodeTarget(v: unknown): Target {
  if (isString(v)) return v;
  if (isArray(v) && v.length === 2 && v.every(isNumber)) return [v[0] as number, v[1] as number];
  throw new ProtocolError("target must be a population name or [lo, hi]");
}

export function decode(line: string): Message {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch (e) {
    throw new ProtocolError(`malformed json: ${(e as Error).message}`);
  }
  if (!isObject(obj)) throw new ProtocolError("message must be an object");
  const type = obj["type"];
  if (!isString(type)) throw new ProtocolError("message has no type field");

  switch (type) {
    case "set_param":
      return {
        type, id: need(obj, "id", isNumber), target: decodeTarget(obj["target"]),
        name: need(obj, "name", isString), value: need(obj, "value", isNumber),
        ...(isNumber(obj["at_tick"]) ? { at_tick: obj["at_tick"] as number } : {}),
      };
    case "set_input": {
      const raw = need(obj, "input", isObject);
      return {
        type, id: need(obj, "id", isNumber), target: decodeTarget(obj["target"]),
        input: {
          kind: need(raw, "kind", isString) as InputSpec["kind"],
          amplitude: isNumber(raw["amplitude"]) ? (raw["amplitude"] as number) : 0,
          rate: isNumber(raw["rate"]) ? (raw["rate"] as number) : 0,
        },
        ...(isNumber(obj["at_tick"]) ? { at_tick: obj["at_tick"] as number } : {}),
      };
    }
    case "pause":
    case "stop":
      return { type, id: need(obj, "id", isNumber) };
    case "resume":
      return {
        type, id: need(obj, "id", isNumber),
        ...(isNumber(obj["until_tick"]) ? { until_tick: obj["until_tick"] as number } : {}),
      };
    case "subscribe":
      return {
        type, id: need(obj, "id", isNumber),
        channels: need(obj, "channels", isArray).map(String),
        membrane_neurons: isArray(obj["membrane_neurons"])
          ? (obj["membrane_neurons"] as number[]) : [],
        membrane_decimation: isNumber(obj["membrane_decimation"])
          ? (obj["membrane_decimation"] as number) : 1,
        rate_window_ms: isNumber(obj["rate_window_ms"])
          ? (obj["rate_window_ms"] as number) : 100,
      };
    case "snapshot":
      return {
        type, id: need(obj, "id", isNumber),
        ...(isString(obj["path"]) ? { path: obj["path"] as string } : {}),
      };
    case "spikes":
      return {
        type, tick: need(obj, "tick", isNumber),
        neurons: need(obj, "neurons", isArray).map(Number),
      };
    case "membrane":
      return {
        type, tick: need(obj, "tick", isNumber),
        samples: need(obj, "samples", isArray).map((s) => {
          if (!isArray(s) || s.length !== 2) throw new ProtocolError("bad membrane sample");
          return [Number(s[0]), Number(s[1])] as [number, number];
        }),
      };
    case "rates":
      return {
        type, tick: need(obj, "tick", isNumber),
        window_ms: need(obj, "window_ms", isNumber),
        rates: need(obj, "rates", isArray).map((r) => {
          if (!isArray(r) || r.length !== 2) throw new ProtocolError("bad rate entry");
          return [String(r[0]), Number(r[1])] as [string, number];
        }),
      };
    case "ack":
      return { type, id: need(obj, "id", isNumber), tick: need(obj, "tick", isNumber) };
    case "error":
      return {
        type, reason: need(obj, "reason", isString),
        ...(isNumber(obj["id"]) ? { id: obj["id"] as number } : {}),
        ...(isNumber(obj["tick"]) ? { tick: obj["tick"] as number } : {}),
        ...(isNumber(obj["offset"]) ? { offset: obj["offset"] as number } : {}),
      };
    case "status":
      return {
        type, tick: need(obj, "tick", isNumber), state: need(obj, "state", isString),
        ...(isString(obj["detail"]) ? { detail: obj["detail"] as string } : {}),
      };
    default:
      throw new ProtocolError(`unknown message type '${type}'`);
  }
}

export function isFrame(msg: Message): msg is Frame {
  return FRAME_TYPES.has(msg.type);
}

export function isCommand(msg: Message): msg is Command {
  return COMMAND_TYPES.has(msg.type);
}

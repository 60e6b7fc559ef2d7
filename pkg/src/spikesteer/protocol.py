"""Steering/telemetry wire protocol.

Every message and telemetry frame is one UTF-8 line holding a JSON object with
a "type" field. The same grammar travels over raw TCP (newline-delimited) and
WebSocket text frames. Encoding is canonical (sorted keys, no whitespace,
None-valued optionals omitted), so decode(encode(m)) == m and re-encoding a
decoded message is byte-stable. Unknown fields are ignored on decode for
forward compatibility; an unknown type is an error.

Numbers are decimal JSON, ticks are integers, potentials are mV.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .models import InputSpec

CHANNELS = ("spikes", "membrane", "rates")


class ProtocolError(ValueError):
    pass


# -- commands (client -> server) --------------------------------------------

@dataclass(frozen=True)
class SetParam:
    id: int
    target: str | tuple[int, int]
    name: str
    value: float
    at_tick: int | None = None


@dataclass(frozen=True)
class SetInput:
    id: int
    target: str | tuple[int, int]
    input: InputSpec
    at_tick: int | None = None


@dataclass(frozen=True)
class Pause:
    id: int


@dataclass(frozen=True)
class Resume:
    id: int
    until_tick: int | None = None  # auto-pause at this tick boundary


@dataclass(frozen=True)
class Subscribe:
    id: int
    channels: tuple[str, ...] = ("spikes",)
    membrane_neurons: tuple[int, ...] = ()
    membrane_decimation: int = 1
    rate_window_ms: float = 100.0


@dataclass(frozen=True)
class SnapshotRequest:
    id: int
    path: str | None = None


@dataclass(frozen=True)
class Stop:
    id: int


# -- telemetry frames (server -> client) -------------------------------------

@dataclass(frozen=True)
class SpikesFrame:
    tick: int
    neurons: tuple[int, ...]


@dataclass(frozen=True)
class MembraneFrame:
    tick: int
    samples: tuple[tuple[int, float], ...]  # (neuron, mV)


@dataclass(frozen=True)
class RatesFrame:
    tick: int
    window_ms: float
    rates: tuple[tuple[str, float], ...]  # (population, Hz per neuron)


@dataclass(frozen=True)
class AckFrame:
    id: int
    tick: int  # tick at which the command took effect


@dataclass(frozen=True)
class ErrorFrame:
    reason: str
    id: int | None = None      # command id when rejecting a command
    tick: int | None = None
    offset: int | None = None  # byte offset of a malformed input line


@dataclass(frozen=True)
class StatusFrame:
    tick: int
    state: str  # connected | running | paused | stopped | diverged
    detail: str | None = None


COMMAND_TYPES = {
    "set_param": SetParam,
    "set_input": SetInput,
    "pause": Pause,
    "resume": Resume,
    "subscribe": Subscribe,
    "snapshot": SnapshotRequest,
    "stop": Stop,
}
FRAME_TYPES = {
    "spikes": SpikesFrame,
    "membrane": MembraneFrame,
    "rates": RatesFrame,
    "ack": AckFrame,
    "error": ErrorFrame,
    "status": StatusFrame,
}
_TYPE_BY_CLASS = {cls: name for name, cls in {**COMMAND_TYPES, **FRAME_TYPES}.items()}


def _target_to_obj(target):
    if isinstance(target, str):
        return target
    lo, hi = target
    return [int(lo), int(hi)]


def _target_from_obj(obj):
    if isinstance(obj, str):
        return obj
    if isinstance(obj, list) and len(obj) == 2 and all(isinstance(x, int) for x in obj):
        return (obj[0], obj[1])
    raise ProtocolError(f"target must be a population name or [lo, hi] range, got {obj!r}")


def _require(obj: dict, field: str, kinds, what: str):
    if field not in obj:
        raise ProtocolError(f"{what} is missing field {field!r}")
    val = obj[field]
    if kinds is not None and not isinstance(val, kinds):
        raise ProtocolError(f"{what} field {field!r} has wrong type: {val!r}")
    # JSON has no int/float distinction we care about for floats
    return val


def _to_obj(msg) -> dict:
    t = _TYPE_BY_CLASS.get(type(msg))
    if t is None:
        raise ProtocolError(f"cannot encode {type(msg).__name__}")
    obj: dict = {"type": t}
    if isinstance(msg, SetParam):
        obj.update(id=msg.id, target=_target_to_obj(msg.target), name=msg.name,
                   value=msg.value, at_tick=msg.at_tick)
    elif isinstance(msg, SetInput):
        obj.update(id=msg.id, target=_target_to_obj(msg.target), at_tick=msg.at_tick,
                   input={"kind": msg.input.kind, "amplitude": msg.input.amplitude,
                          "rate": msg.input.rate})
    elif isinstance(msg, (Pause, Stop)):
        obj.update(id=msg.id)
    elif isinstance(msg, Resume):
        obj.update(id=msg.id, until_tick=msg.until_tick)
    elif isinstance(msg, Subscribe):
        obj.update(id=msg.id, channels=list(msg.channels),
                   membrane_neurons=list(msg.membrane_neurons),
                   membrane_decimation=msg.membrane_decimation,
                   rate_window_ms=msg.rate_window_ms)
    elif isinstance(msg, SnapshotRequest):
        obj.update(id=msg.id, path=msg.path)
    elif isinstance(msg, SpikesFrame):
        obj.update(tick=msg.tick, neurons=list(msg.neurons))
    elif isinstance(msg, MembraneFrame):
        obj.update(tick=msg.tick, samples=[[n, v] for n, v in msg.samples])
    elif isinstance(msg, RatesFrame):
        obj.update(tick=msg.tick, window_ms=msg.window_ms,
                   rates=[[p, r] for p, r in msg.rates])
    elif isinstance(msg, AckFrame):
        obj.update(id=msg.id, tick=msg.tick)
    elif isinstance(msg, ErrorFrame):
        obj.update(reason=msg.reason, id=msg.id, tick=msg.tick, offset=msg.offset)
    elif isinstance(msg, StatusFrame):
        obj.update(tick=msg.tick, state=msg.state, detail=msg.detail)
    return {k: v for k, v in obj.items() if v is not None}


def _from_obj(obj: dict):
    if not isinstance(obj, dict):
        raise ProtocolError(f"message must be an object, got {type(obj).__name__}")
    t = obj.get("type")
    if not isinstance(t, str):
        raise ProtocolError("message has no type field")
    if t in COMMAND_TYPES:
        what = f"{t} message"
        if t == "set_param":
            return SetParam(
                id=_require(obj, "id", int, what),
                target=_target_from_obj(_require(obj, "target", (str, list), what)),
                name=_require(obj, "name", str, what),
                value=float(_require(obj, "value", (int, float), what)),
                at_tick=obj.get("at_tick"),
            )
        if t == "set_input":
            raw = _require(obj, "input", dict, what)
            spec = InputSpec(
                kind=_require(raw, "kind", str, "input spec"),
                amplitude=float(raw.get("amplitude", 0.0)),
                rate=float(raw.get("rate", 0.0)),
            )
            return SetInput(
                id=_require(obj, "id", int, what),
                target=_target_from_obj(_require(obj, "target", (str, list), what)),
                input=spec,
                at_tick=obj.get("at_tick"),
            )
        if t == "pause":
            return Pause(id=_require(obj, "id", int, what))
        if t == "resume":
            return Resume(id=_require(obj, "id", int, what), until_tick=obj.get("until_tick"))
        if t == "subscribe":
            channels = tuple(_require(obj, "channels", list, what))
            for ch in channels:
                if ch not in CHANNELS:
                    raise ProtocolError(f"unknown channel {ch!r}")
            return Subscribe(
                id=_require(obj, "id", int, what),
                channels=channels,
                membrane_neurons=tuple(int(x) for x in obj.get("membrane_neurons", [])),
                membrane_decimation=int(obj.get("membrane_decimation", 1)),
                rate_window_ms=float(obj.get("rate_window_ms", 100.0)),
            )
        if t == "snapshot":
            return SnapshotRequest(id=_require(obj, "id", int, what), path=obj.get("path"))
        if t == "stop":
            return Stop(id=_require(obj, "id", int, what))
    if t in FRAME_TYPES:
        what = f"{t} frame"
        if t == "spikes":
            return SpikesFrame(
                tick=_require(obj, "tick", int, what),
                neurons=tuple(int(x) for x in _require(obj, "neurons", list, what)),
            )
        if t == "membrane":
            return MembraneFrame(
                tick=_require(obj, "tick", int, what),
                samples=tuple((int(n), float(v)) for n, v in _require(obj, "samples", list, what)),
            )
        if t == "rates":
            return RatesFrame(
                tick=_require(obj, "tick", int, what),
                window_ms=float(_require(obj, "window_ms", (int, float), what)),
                rates=tuple((str(p), float(r)) for p, r in _require(obj, "rates", list, what)),
            )
        if t == "ack":
            return AckFrame(id=_require(obj, "id", int, what),
                            tick=_require(obj, "tick", int, what))
        if t == "error":
            return ErrorFrame(reason=_require(obj, "reason", str, what),
                              id=obj.get("id"), tick=obj.get("tick"), offset=obj.get("offset"))
        if t == "status":
            return StatusFrame(tick=_require(obj, "tick", int, what),
                               state=_require(obj, "state", str, what),
                               detail=obj.get("detail"))
    raise ProtocolError(f"unknown message type {t!r}")


def encode(msg) -> str:
    """One canonical JSON line (no trailing newline)."""
    return json.dumps(_to_obj(msg), sort_keys=True, separators=(",", ":"))


def decode(line: str | bytes):
    """Parse one line back into a message or frame object."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(f"invalid utf-8: {e}") from None
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"malformed json: {e.msg}") from None
    return _from_obj(obj)


def should_emit(tick: int, k: int) -> bool:
    """Membrane decimation rule: emit ticks 0, k, 2k, ..."""
    if k < 1:
        raise ValueError("decimation must be >= 1")
    return tick % k == 0


def emitted_count(total_ticks: int, k: int) -> int:
    """How many of ticks [0, total_ticks) the decimation rule emits."""
    if k < 1:
        raise ValueError("decimation must be >= 1")
    return len(range(0, total_ticks, k))

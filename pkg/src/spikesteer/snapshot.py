"""Versioned binary snapshot frames.

Layout (all little-endian): the 4-byte magic "SSNP" and a u32 format version,
followed by tagged sections, each `tag[4] + u64 payload length + payload`:

  META  fixed struct: tick, n_neurons, ring_slots, seed, paused flag, dt,
        spike_total, config hash (16 ascii bytes), per-population spike counts
  ARRS  named 1-D state vectors (dtype code + raw bytes each)
  RING  delay ring contents, ring_slots x n_neurons float64, C order
  PEND  steering commands still waiting for their effective tick, one
        protocol line per command
  RNGS  generator state (the counter-based streams are stateless beyond the
        base seed, which is recorded here)

Restoring into a world built from the same config and resuming reproduces the
original run's outputs exactly. The full layout is documented in
docs/snapshot_format.md.
"""

from __future__ import annotations

import struct

import numpy as np

from . import protocol

MAGIC = b"SSNP"
VERSION = 1

_DTYPES = {0: "<f8", 1: "u1", 2: "<i8"}
_DTYPE_CODES = {"float64": 0, "uint8": 1, "int64": 2}

# engine attributes serialized in ARRS, in this order
STATE_VECTORS = (
    "v", "u", "refrac", "syn",
    "v_rest", "v_thresh", "v_reset", "c_m", "r_m", "t_refrac",
    "a", "b", "c", "d", "v_peak", "tau_syn",
    "in_kind", "in_amp", "in_rate",
    "probe", "pop_spike_counts",
)


class SnapshotError(ValueError):
    pass


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def encode_snapshot(engine) -> bytes:
    meta = struct.pack(
        "<QQQQBdQ",
        engine.tick,
        engine.net.n_neurons,
        engine.ring.shape[0],
        engine.seed & (2**64 - 1),
        1 if engine.paused else 0,
        engine.dt,
        engine.spike_total,
    )
    from .network import config_hash
    meta += config_hash(engine.net.config).encode("ascii")
    counts = engine.pop_spike_counts.astype("<i8").tobytes()
    meta += struct.pack("<I", len(engine.net.pop_names)) + counts

    arrs = [struct.pack("<I", len(STATE_VECTORS))]
    for name in STATE_VECTORS:
        arr = np.ascontiguousarray(getattr(engine, name))
        code = _DTYPE_CODES[str(arr.dtype)]
        raw = arr.astype(_DTYPES[code]).tobytes()
        nb = name.encode("ascii")
        arrs.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BQ", code, len(raw)) + raw)

    pend = "\n".join(protocol.encode(c) for c in engine._held).encode("utf-8")
    rngs = struct.pack("<Q", engine.seed & (2**64 - 1))

    body = (
        _section(b"META", meta)
        + _section(b"ARRS", b"".join(arrs))
        + _section(b"RING", np.ascontiguousarray(engine.ring).astype("<f8").tobytes())
        + _section(b"PEND", pend)
        + _section(b"RNGS", rngs)
    )
    return MAGIC + struct.pack("<I", VERSION) + body


def _split_sections(frame: bytes) -> dict[bytes, bytes]:
    if len(frame) < 8 or frame[:4] != MAGIC:
        raise SnapshotError("corrupt frame: bad magic")
    version = struct.unpack_from("<I", frame, 4)[0]
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version} (expected {VERSION})")
    out: dict[bytes, bytes] = {}
    off = 8
    while off < len(frame):
        if off + 12 > len(frame):
            raise SnapshotError("corrupt frame: truncated section header")
        tag = frame[off:off + 4]
        (length,) = struct.unpack_from("<Q", frame, off + 4)
        off += 12
        if off + length > len(frame):
            raise SnapshotError(f"corrupt frame: truncated {tag!r} section")
        out[tag] = frame[off:off + length]
        off += length
    return out


def apply_snapshot(engine, frame: bytes) -> None:
    """Load a frame's state into a freshly built engine (same BuiltNetwork)."""
    sections = _split_sections(frame)
    for tag in (b"META", b"ARRS", b"RING"):
        if tag not in sections:
            raise SnapshotError(f"corrupt frame: missing {tag!r} section")

    meta = sections[b"META"]
    head_size = struct.calcsize("<QQQQBdQ")
    if len(meta) < head_size + 16 + 4:
        raise SnapshotError("corrupt frame: truncated META")
    tick, n, slots, seed, paused, dt, spike_total = struct.unpack_from("<QQQQBdQ", meta)
    cfg_hash = meta[head_size:head_size + 16].decode("ascii")
    (npops,) = struct.unpack_from("<I", meta, head_size + 16)
    counts = np.frombuffer(meta, dtype="<i8", count=npops, offset=head_size + 20)

    from .network import config_hash
    if n != engine.net.n_neurons:
        raise SnapshotError(
            f"snapshot holds {n} neurons but the network has {engine.net.n_neurons}")
    if cfg_hash != config_hash(engine.net.config):
        raise SnapshotError("snapshot was taken from a different config")
    if slots != engine.ring.shape[0]:
        raise SnapshotError("snapshot delay ring does not match the network")

    arrs_raw = sections[b"ARRS"]
    (count,) = struct.unpack_from("<I", arrs_raw, 0)
    off = 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", arrs_raw, off)
        off += 2
        name = arrs_raw[off:off + name_len].decode("ascii")
        off += name_len
        code, nbytes = struct.unpack_from("<BQ", arrs_raw, off)
        off += 9
        if off + nbytes > len(arrs_raw):
            raise SnapshotError(f"corrupt frame: truncated array {name!r}")
        arrays[name] = np.frombuffer(arrs_raw, dtype=_DTYPES[code],
                                     count=nbytes // np.dtype(_DTYPES[code]).itemsize,
                                     offset=off).copy()
        off += nbytes
    missing = [s for s in STATE_VECTORS if s not in arrays]
    if missing:
        raise SnapshotError(f"corrupt frame: missing state vectors {missing}")

    ring_raw = sections[b"RING"]
    if len(ring_raw) != 8 * slots * n:
        raise SnapshotError("corrupt frame: ring section has wrong size")

    for name in STATE_VECTORS:
        if name in ("probe", "pop_spike_counts"):
            continue
        target = getattr(engine, name)
        if arrays[name].shape[0] != target.shape[0]:
            raise SnapshotError(f"corrupt frame: array {name!r} has wrong length")
        target[:] = arrays[name].astype(target.dtype, copy=False)
    engine.probe = arrays["probe"].astype(np.int64)
    engine.pop_spike_counts[:] = counts
    engine.ring[:] = np.frombuffer(ring_raw, dtype="<f8").reshape(slots, n)

    engine.tick = int(tick)
    engine.seed = int(seed)
    engine.paused = bool(paused)
    engine.spike_total = int(spike_total)
    engine._held = []
    pend = sections.get(b"PEND", b"")
    if pend:
        for line in pend.decode("utf-8").split("\n"):
            engine._held.append(protocol.decode(line))
    # scheduled input changes before the snapshot tick already happened
    engine._schedule = {t: v for t, v in engine._build_schedule().items()
                       if t >= engine.tick}
    engine._recompute_syn_decay(0, engine.net.n_neurons)
    engine._recompute_p_spike(0, engine.net.n_neurons)

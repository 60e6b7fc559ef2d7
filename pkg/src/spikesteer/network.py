"""Declarative network description and its compilation to a flat topology.

A NetworkConfig lists populations and connection rules; build_network turns it
into contiguous neuron index ranges plus CSR-style outgoing edge arrays sorted
by (target, delay). Compilation is deterministic: probabilistic rules draw
from a generator seeded by (config seed, rule content), in a fixed iteration
order (src ascending, dst ascending), so the same config and seed always
produce byte-identical arrays, and permuting rule declaration order cannot
change the edge set.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .models import InputSpec, IzhParams, LifParams, SynapseParams

MODEL_LIF = "lif"
MODEL_IZHIKEVICH = "izhikevich"

RULE_ALL_TO_ALL = "all-to-all"
RULE_PROBABILITY = "probability"
RULE_EXPLICIT = "explicit"

# numeric tags used by the simulation kernels
TAG_LIF = 0
TAG_IZH = 1


class ValidationError(ValueError):
    """Raised when a config fails validation; carries the violation list."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True, slots=True)
class PopulationSpec:
    name: str
    model: str
    size: int
    params: LifParams | IzhParams
    input: InputSpec = field(default_factory=InputSpec)
    synapse: SynapseParams = field(default_factory=SynapseParams)
    # (at_tick, new InputSpec) pairs applied at tick boundaries; lets an
    # offline run reproduce a steered one exactly.
    input_schedule: tuple[tuple[int, InputSpec], ...] = ()


@dataclass(frozen=True, slots=True)
class ConnectionSpec:
    src: str
    dst: str
    rule: str = RULE_ALL_TO_ALL
    p: float | None = None                       # probability rule
    edges: tuple[tuple[int, int], ...] | None = None  # explicit rule, local indices
    weight: float | tuple[float, float] = 1.0    # fixed, or uniform (lo, hi)
    delay: int = 1                               # integer ticks


@dataclass(frozen=True, slots=True)
class NetworkConfig:
    populations: tuple[PopulationSpec, ...]
    connections: tuple[ConnectionSpec, ...] = ()
    dt: float = 1.0       # ms
    seed: int = 0


@dataclass(frozen=True)
class BuiltNetwork:
    """Compiled topology: flat index space + sorted CSR edge lists.

    Immutable after construction; shared read-only across workers.
    """

    config: NetworkConfig
    n_neurons: int
    pop_names: tuple[str, ...]
    pop_offsets: np.ndarray    # int64[P+1], population i owns [off[i], off[i+1])
    model_tag: np.ndarray      # uint8[N]
    indptr: np.ndarray         # int64[N+1]
    edge_target: np.ndarray    # int32[E]
    edge_weight: np.ndarray    # float64[E]
    edge_delay: np.ndarray     # int32[E]
    max_delay: int

    @property
    def n_edges(self) -> int:
        return int(self.edge_target.shape[0])

    def pop_slice(self, name: str) -> tuple[int, int]:
        i = self.pop_names.index(name)
        return int(self.pop_offsets[i]), int(self.pop_offsets[i + 1])

    def pop_of(self, neuron: int) -> str:
        i = int(np.searchsorted(self.pop_offsets, neuron, side="right")) - 1
        return self.pop_names[i]

    def topology_bytes(self) -> bytes:
        """Canonical byte serialization of the compiled arrays (for
        determinism checks and config hashing)."""
        parts = [
            self.pop_offsets.astype("<i8").tobytes(),
            self.model_tag.astype("u1").tobytes(),
            self.indptr.astype("<i8").tobytes(),
            self.edge_target.astype("<i4").tobytes(),
            self.edge_weight.astype("<f8").tobytes(),
            self.edge_delay.astype("<i4").tobytes(),
        ]
        return b"".join(parts)


def _expected_params_type(model: str):
    return LifParams if model == MODEL_LIF else IzhParams


def validate_config(config: NetworkConfig) -> list[str]:
    """Check every structural invariant; returns one message per violation
    (empty list means the config is buildable)."""
    out: list[str] = []
    if config.dt <= 0:
        out.append(f"dt must be > 0, got {config.dt}")
    if not config.populations:
        out.append("config needs at least one population")

    seen: set[str] = set()
    for pop in config.populations:
        where = f"population {pop.name!r}"
        if pop.name in seen:
            out.append(f"duplicate population name {pop.name!r}")
        seen.add(pop.name)
        if pop.size < 1:
            out.append(f"{where}: size must be >= 1, got {pop.size}")
        if pop.model not in (MODEL_LIF, MODEL_IZHIKEVICH):
            out.append(f"{where}: unknown model {pop.model!r}")
        else:
            expected = _expected_params_type(pop.model)
            if not isinstance(pop.params, expected):
                out.append(f"{where}: params must be {expected.__name__} for model {pop.model}")
            else:
                out.extend(f"{where}: {v}" for v in pop.params.validate())
        out.extend(f"{where}: {v}" for v in pop.input.validate())
        out.extend(f"{where}: {v}" for v in pop.synapse.validate())
        for at_tick, spec in pop.input_schedule:
            if at_tick < 0:
                out.append(f"{where}: schedule tick must be >= 0, got {at_tick}")
            out.extend(f"{where} schedule@{at_tick}: {v}" for v in spec.validate())

    for k, conn in enumerate(config.connections):
        where = f"connection {k} ({conn.src}->{conn.dst})"
        for end, name in (("src", conn.src), ("dst", conn.dst)):
            if name not in seen:
                out.append(f"{where}: unknown population {name!r} as {end}")
        if conn.delay < 1:
            out.append(f"{where}: delay must be >= 1 tick, got {conn.delay}")
        if conn.rule == RULE_PROBABILITY:
            if conn.p is None or not (0.0 <= conn.p <= 1.0):
                out.append(f"{where}: probability rule needs 0 <= p <= 1, got {conn.p}")
        elif conn.rule == RULE_EXPLICIT:
            if conn.edges is None:
                out.append(f"{where}: explicit rule needs an edge list")
        elif conn.rule != RULE_ALL_TO_ALL:
            out.append(f"{where}: unknown rule {conn.rule!r}")
        if isinstance(conn.weight, tuple):
            if len(conn.weight) != 2 or conn.weight[0] > conn.weight[1]:
                out.append(f"{where}: weight range must be (lo, hi) with lo <= hi")
        if conn.rule == RULE_EXPLICIT and conn.edges is not None:
            sizes = {p.name: p.size for p in config.populations}
            ns, nd = sizes.get(conn.src), sizes.get(conn.dst)
            for s, d in conn.edges:
                if ns is not None and not (0 <= s < ns):
                    out.append(f"{where}: edge src index {s} out of range [0,{ns})")
                if nd is not None and not (0 <= d < nd):
                    out.append(f"{where}: edge dst index {d} out of range [0,{nd})")
    return out


def _conn_stream_seed(seed: int, conn: ConnectionSpec) -> int:
    # Content-derived stream: permuting declaration order of rules must not
    # change which variates a rule sees.
    payload = json.dumps(
        {
            "src": conn.src,
            "dst": conn.dst,
            "rule": conn.rule,
            "p": conn.p,
            "edges": conn.edges,
            "weight": conn.weight,
            "delay": conn.delay,
        },
        sort_keys=True,
        default=list,
    )
    digest = hashlib.sha256(payload.encode()).digest()
    return (int.from_bytes(digest[:8], "little") ^ (seed & (2**64 - 1))) & (2**63 - 1)


def _generate_edges(conn: ConnectionSpec, offsets: dict[str, tuple[int, int]], seed: int):
    """Global (src, dst) index arrays plus per-edge weights for one rule."""
    rng = np.random.default_rng(_conn_stream_seed(seed, conn))
    s_lo, s_hi = offsets[conn.src]
    d_lo, d_hi = offsets[conn.dst]
    ns, nd = s_hi - s_lo, d_hi - d_lo

    if conn.rule == RULE_ALL_TO_ALL:
        src = np.repeat(np.arange(s_lo, s_hi, dtype=np.int64), nd)
        dst = np.tile(np.arange(d_lo, d_hi, dtype=np.int64), ns)
    elif conn.rule == RULE_PROBABILITY:
        # one draw per candidate pair, C-order == (src asc, dst asc);
        # chunked over source rows so huge pair counts stay in bounded memory
        # (row chunking consumes the identical draw sequence)
        rows_per_chunk = max(1, (1 << 22) // max(nd, 1))
        src_parts, dst_parts = [], []
        for row0 in range(0, ns, rows_per_chunk):
            rows = min(rows_per_chunk, ns - row0)
            keep = rng.random((rows, nd)) < conn.p
            si, di = np.nonzero(keep)
            src_parts.append(si.astype(np.int64) + (s_lo + row0))
            dst_parts.append(di.astype(np.int64) + d_lo)
        src = np.concatenate(src_parts) if src_parts else np.zeros(0, dtype=np.int64)
        dst = np.concatenate(dst_parts) if dst_parts else np.zeros(0, dtype=np.int64)
    else:  # explicit
        edges = conn.edges or ()
        src = np.fromiter((s_lo + s for s, _ in edges), dtype=np.int64, count=len(edges))
        dst = np.fromiter((d_lo + d for _, d in edges), dtype=np.int64, count=len(edges))

    if isinstance(conn.weight, tuple):
        lo, hi = conn.weight
        w = rng.uniform(lo, hi, size=src.shape[0])
    else:
        w = np.full(src.shape[0], float(conn.weight))
    return src, dst, w


def build_network(config: NetworkConfig) -> BuiltNetwork:
    """Compile a validated config; raises ValidationError otherwise."""
    violations = validate_config(config)
    if violations:
        raise ValidationError(violations)

    pop_names = tuple(p.name for p in config.populations)
    sizes = np.array([p.size for p in config.populations], dtype=np.int64)
    pop_offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=pop_offsets[1:])
    n = int(pop_offsets[-1])
    offsets = {name: (int(pop_offsets[i]), int(pop_offsets[i + 1]))
               for i, name in enumerate(pop_names)}

    model_tag = np.zeros(n, dtype=np.uint8)
    for i, pop in enumerate(config.populations):
        tag = TAG_LIF if pop.model == MODEL_LIF else TAG_IZH
        model_tag[pop_offsets[i]:pop_offsets[i + 1]] = tag

    srcs, dsts, ws, ds = [], [], [], []
    for conn in config.connections:
        src, dst, w = _generate_edges(conn, offsets, config.seed)
        srcs.append(src)
        dsts.append(dst)
        ws.append(w)
        ds.append(np.full(src.shape[0], conn.delay, dtype=np.int32))

    if srcs:
        src = np.concatenate(srcs)
        dst = np.concatenate(dsts)
        weight = np.concatenate(ws)
        delay = np.concatenate(ds)
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
        weight = np.zeros(0, dtype=np.float64)
        delay = np.zeros(0, dtype=np.int32)

    # CSR grouped by source, each edge list sorted by (target, delay)
    order = np.lexsort((delay, dst, src))
    src, dst, weight, delay = src[order], dst[order], weight[order], delay[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])

    built = BuiltNetwork(
        config=config,
        n_neurons=n,
        pop_names=pop_names,
        pop_offsets=pop_offsets,
        model_tag=model_tag,
        indptr=indptr,
        edge_target=dst.astype(np.int32),
        edge_weight=weight,
        edge_delay=delay,
        max_delay=int(delay.max()) if delay.size else 1,
    )
    for arr in (built.pop_offsets, built.model_tag, built.indptr,
                built.edge_target, built.edge_weight, built.edge_delay):
        arr.setflags(write=False)
    return built


def config_to_dict(config: NetworkConfig) -> dict:
    """Plain-dict form used for hashing and provenance embedding."""
    return asdict(config)


def config_hash(config: NetworkConfig) -> str:
    payload = json.dumps(config_to_dict(config), sort_keys=True, default=list)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]

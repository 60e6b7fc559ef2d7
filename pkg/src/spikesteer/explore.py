"""Offline design-space exploration.

A sweep takes a base network config and a list of axes (parameter path +
values), expands the Cartesian grid, simulates every cell, reduces each cell's
spikes to stability metrics, and classifies the cell against a balance
criterion. Cells get independent derived seeds and may run in parallel; rows
always come back in grid order.
"""

from __future__ import annotations

import dataclasses
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np

from .engine import DivergedError, Engine, EngineConfig, RecordingSink
from .network import (NetworkConfig, ValidationError, build_network,
                      config_hash, config_to_dict, validate_config)
from .rng import derive_seed

CLASS_BALANCED = "balanced"
CLASS_SILENT = "silent"
CLASS_SATURATED = "saturated"
CLASS_IRREGULAR = "irregular"
CLASS_DIVERGED = "diverged"


@dataclass(frozen=True)
class SweepSpec:
    base: NetworkConfig
    axes: tuple[tuple[str, tuple[float, ...]], ...]  # (parameter path, values)
    duration_ms: float = 1000.0
    warmup_ms: float = 100.0
    parallel: int = 1
    saturation_hz: float = 200.0  # per-neuron rate above which a neuron counts as saturated

    def validate(self) -> list[str]:
        out = []
        if not self.axes:
            out.append("sweep needs at least one axis")
        for path, values in self.axes:
            if not values:
                out.append(f"axis {path!r} has no values")
        if not (self.duration_ms > self.warmup_ms >= 0):
            out.append("require duration_ms > warmup_ms >= 0")
        if self.parallel < 1:
            out.append("parallel must be >= 1")
        out.extend(validate_config(self.base))
        return out


@dataclass(frozen=True)
class CellMetrics:
    rate_hz: float            # mean per-neuron rate, post-warmup
    isi_cv: float | None      # pooled ISI coefficient of variation; None when < 2 spikes
    frac_silent: float
    frac_saturated: float
    diverged: bool = False


@dataclass(frozen=True)
class BalanceCriterion:
    rate_lo_hz: float = 1.0
    rate_hi_hz: float = 100.0
    max_isi_cv: float = 1.5
    max_silent_frac: float = 0.2
    max_saturated_frac: float = 0.2

    def validate(self) -> list[str]:
        out = []
        if not self.rate_lo_hz < self.rate_hi_hz:
            out.append("require rate_lo_hz < rate_hi_hz")
        if min(self.max_isi_cv, self.max_silent_frac, self.max_saturated_frac) < 0:
            out.append("criterion thresholds must be >= 0")
        return out


@dataclass(frozen=True)
class SweepRow:
    index: int
    axis_values: tuple[float, ...]
    metrics: CellMetrics
    label: str
    seed: int


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    criterion: BalanceCriterion
    rows: tuple[SweepRow, ...]

    def balanced_count(self) -> int:
        return sum(1 for r in self.rows if r.label == CLASS_BALANCED)


def set_by_path(config: NetworkConfig, path: str, value) -> NetworkConfig:
    """Return a new config with one field replaced.

    Paths: "dt", "seed", "populations.<name>.params.<field>",
    "populations.<name>.input.<field>", "populations.<name>.synapse.tau_syn",
    "connections.<index>.<field>".
    """
    parts = path.split(".")
    if parts == ["dt"] or parts == ["seed"]:
        return dataclasses.replace(config, **{parts[0]: value})
    if len(parts) == 4 and parts[0] == "populations":
        _, name, section, fld = parts
        pops = list(config.populations)
        for i, pop in enumerate(pops):
            if pop.name != name:
                continue
            if section not in ("params", "input", "synapse"):
                break
            inner = getattr(pop, section)
            if not any(f.name == fld for f in dataclasses.fields(inner)):
                break
            pops[i] = dataclasses.replace(
                pop, **{section: dataclasses.replace(inner, **{fld: value})})
            return dataclasses.replace(config, populations=tuple(pops))
        raise ValueError(f"unknown parameter path {path!r}")
    if len(parts) == 3 and parts[0] == "connections":
        try:
            idx = int(parts[1])
            conns = list(config.connections)
            conn = conns[idx]
        except (ValueError, IndexError):
            raise ValueError(f"unknown parameter path {path!r}") from None
        if not any(f.name == parts[2] for f in dataclasses.fields(conn)):
            raise ValueError(f"unknown parameter path {path!r}")
        conns[idx] = dataclasses.replace(conn, **{parts[2]: value})
        return dataclasses.replace(config, connections=tuple(conns))
    raise ValueError(f"unknown parameter path {path!r}")


def expand_grid(spec: SweepSpec) -> list[NetworkConfig]:
    """Cartesian product of the axes applied to the base config, lexicographic
    in axis declaration order."""
    bad = spec.validate()
    if bad:
        raise ValidationError(bad)
    out = []
    for combo in product(*(values for _, values in spec.axes)):
        cfg = spec.base
        for (path, _), value in zip(spec.axes, combo):
            cfg = set_by_path(cfg, path, value)
        out.append(cfg)
    return out


def compute_metrics(spikes, net, duration_ms: float, warmup_ms: float,
                    saturation_hz: float = 200.0, diverged: bool = False) -> CellMetrics:
    """Reduce a run's spike records to stability metrics.

    spikes: iterable of (tick, neuron) pairs (or SpikeRecord). Rate counts
    post-warmup spikes per neuron per second; the ISI CV pools every
    post-warmup interspike interval across neurons.
    """
    if diverged:
        return CellMetrics(0.0, None, 1.0, 0.0, diverged=True)
    if not duration_ms > warmup_ms:
        raise ValueError("duration_ms must exceed warmup_ms")
    dt = net.config.dt
    n = net.n_neurons
    window_s = (duration_ms - warmup_ms) / 1000.0

    pairs = [(r.tick, r.neuron) if hasattr(r, "tick") else (r[0], r[1]) for r in spikes]
    times_by_neuron: dict[int, list[float]] = {}
    for tick, neuron in pairs:
        t_ms = tick * dt
        if t_ms >= warmup_ms:
            times_by_neuron.setdefault(neuron, []).append(t_ms)

    total = sum(len(v) for v in times_by_neuron.values())
    rate = total / n / window_s
    silent = (n - len(times_by_neuron)) / n
    saturated = sum(1 for v in times_by_neuron.values()
                    if len(v) / window_s > saturation_hz) / n

    isis: list[float] = []
    for ts in times_by_neuron.values():
        ts.sort()
        isis.extend(b - a for a, b in zip(ts, ts[1:]))
    if isis:
        arr = np.asarray(isis)
        mean = float(arr.mean())
        cv = float(arr.std() / mean) if mean > 0 else None
    else:
        cv = None
    return CellMetrics(rate, cv, silent, saturated)


def classify(metrics: CellMetrics, criterion: BalanceCriterion) -> str:
    """Label a cell. Precedence: diverged, then silent, then saturated, then
    irregular, else balanced."""
    if metrics.diverged:
        return CLASS_DIVERGED
    if metrics.rate_hz < criterion.rate_lo_hz or metrics.frac_silent > criterion.max_silent_frac:
        return CLASS_SILENT
    if metrics.rate_hz > criterion.rate_hi_hz or metrics.frac_saturated > criterion.max_saturated_frac:
        return CLASS_SATURATED
    if metrics.isi_cv is not None and metrics.isi_cv > criterion.max_isi_cv:
        return CLASS_IRREGULAR
    return CLASS_BALANCED


def _run_cell(index: int, cfg: NetworkConfig, spec: SweepSpec,
              criterion: BalanceCriterion, axis_values: tuple[float, ...]) -> SweepRow:
    seed = derive_seed(spec.base.seed, index)
    cfg = dataclasses.replace(cfg, seed=seed)
    ticks = int(round(spec.duration_ms / cfg.dt))
    net = build_network(cfg)
    engine = Engine(net, EngineConfig(workers=1, max_ticks=ticks))
    sink = RecordingSink()
    try:
        engine.run(ticks, sink=sink)
        metrics = compute_metrics(sink.spike_pairs(), net, spec.duration_ms,
                                  spec.warmup_ms, spec.saturation_hz)
    except DivergedError:
        metrics = CellMetrics(0.0, None, 1.0, 0.0, diverged=True)
    return SweepRow(index, axis_values, metrics, classify(metrics, criterion), seed)


def run_sweep(spec: SweepSpec, criterion: BalanceCriterion = BalanceCriterion()) -> SweepResult:
    """Simulate every grid cell and classify it.

    Cell seeds derive from (base seed, cell index), so the sweep is
    deterministic end to end; parallel execution never reorders rows.
    """
    bad = spec.validate() + criterion.validate()
    if bad:
        raise ValidationError(bad)
    configs = expand_grid(spec)
    combos = list(product(*(values for _, values in spec.axes)))
    jobs = list(zip(range(len(configs)), configs, combos))
    if spec.parallel > 1:
        with ThreadPoolExecutor(max_workers=spec.parallel) as pool:
            rows = list(pool.map(
                lambda j: _run_cell(j[0], j[1], spec, criterion, j[2]), jobs))
    else:
        rows = [_run_cell(i, cfg, spec, criterion, combo) for i, cfg, combo in jobs]
    return SweepResult(spec=spec, criterion=criterion, rows=tuple(rows))


def sweep_csv(result: SweepResult) -> str:
    """Deterministic CSV: one row per cell, axis columns first."""
    buf = io.StringIO()
    axis_names = [path for path, _ in result.spec.axes]
    buf.write(",".join(axis_names + ["rate_hz", "isi_cv", "frac_silent",
                                     "frac_saturated", "class"]) + "\n")
    for row in result.rows:
        m = row.metrics
        cells = [repr(v) for v in row.axis_values]
        if m.diverged:
            cells += ["", "", "", "", row.label]
        else:
            cells += [repr(m.rate_hz), "" if m.isi_cv is None else repr(m.isi_cv),
                      repr(m.frac_silent), repr(m.frac_saturated), row.label]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def sweep_summary(result: SweepResult) -> dict:
    """Structured summary with the spec and seeds embedded for provenance."""
    return {
        "base_config": config_to_dict(result.spec.base),
        "base_config_hash": config_hash(result.spec.base),
        "axes": [[path, list(values)] for path, values in result.spec.axes],
        "duration_ms": result.spec.duration_ms,
        "warmup_ms": result.spec.warmup_ms,
        "saturation_hz": result.spec.saturation_hz,
        "criterion": dataclasses.asdict(result.criterion),
        "balanced_cells": result.balanced_count(),
        "rows": [
            {
                "index": r.index,
                "axis_values": list(r.axis_values),
                "seed": r.seed,
                "rate_hz": r.metrics.rate_hz,
                "isi_cv": r.metrics.isi_cv,
                "frac_silent": r.metrics.frac_silent,
                "frac_saturated": r.metrics.frac_saturated,
                "class": r.label,
            }
            for r in result.rows
        ],
    }

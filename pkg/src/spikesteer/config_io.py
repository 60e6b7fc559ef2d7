"""Config file parsing.

One UTF-8 YAML document per run (JSON works too, YAML being a superset) with
sections: engine, populations, connections, inputs. The annotated example in
docs/example_config.yaml shows every field. Sweep specs are a second document
kind with base config, axes, duration, and criterion.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .engine import EngineConfig
from .explore import BalanceCriterion, SweepSpec
from .models import (CONSTANT_CURRENT, InputSpec, IzhParams, LifParams,
                     SynapseParams)
from .network import (MODEL_IZHIKEVICH, MODEL_LIF, ConnectionSpec,
                      NetworkConfig, PopulationSpec)


class ConfigFileError(ValueError):
    pass


def _need(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigFileError(f"{where}: missing required field {key!r}")
    return obj[key]


def _parse_input(obj: dict, where: str) -> InputSpec:
    if not isinstance(obj, dict):
        raise ConfigFileError(f"{where}: input must be a mapping")
    return InputSpec(
        kind=str(obj.get("kind", CONSTANT_CURRENT)),
        amplitude=float(obj.get("amplitude", 0.0)),
        rate=float(obj.get("rate", 0.0)),
    )


def _parse_schedule(entries, base: InputSpec, where: str):
    out = []
    for e in entries or []:
        if not isinstance(e, dict) or "at_tick" not in e:
            raise ConfigFileError(f"{where}: schedule entries need an at_tick")
        spec = InputSpec(
            kind=str(e.get("kind", base.kind)),
            amplitude=float(e.get("amplitude", base.amplitude)),
            rate=float(e.get("rate", base.rate)),
        )
        out.append((int(e["at_tick"]), spec))
    return tuple(out)


def _parse_population(obj: dict, inputs_section: dict) -> PopulationSpec:
    name = str(_need(obj, "name", "population"))
    where = f"population {name!r}"
    model = str(_need(obj, "model", where))
    raw_params = obj.get("params", {})
    if not isinstance(raw_params, dict):
        raise ConfigFileError(f"{where}: params must be a mapping")
    try:
        if model == MODEL_LIF:
            params = LifParams(**{k: float(v) for k, v in raw_params.items()})
        elif model == MODEL_IZHIKEVICH:
            params = IzhParams(**{k: float(v) for k, v in raw_params.items()})
        else:
            raise ConfigFileError(f"{where}: unknown model {model!r}")
    except TypeError as e:
        raise ConfigFileError(f"{where}: bad params ({e})") from None

    raw_input = inputs_section.get(name, obj.get("input", {}))
    base_input = _parse_input(raw_input, where)
    schedule = _parse_schedule(raw_input.get("schedule"), base_input, where) \
        if isinstance(raw_input, dict) else ()

    raw_syn = obj.get("synapse", {})
    synapse = SynapseParams(tau_syn=float(raw_syn.get("tau_syn", 5.0))) \
        if isinstance(raw_syn, dict) else SynapseParams()

    return PopulationSpec(
        name=name,
        model=model,
        size=int(_need(obj, "size", where)),
        params=params,
        input=base_input,
        synapse=synapse,
        input_schedule=schedule,
    )


def _parse_connection(obj: dict, index: int) -> ConnectionSpec:
    where = f"connection {index}"
    weight = obj.get("weight", 1.0)
    if isinstance(weight, (list, tuple)):
        if len(weight) != 2:
            raise ConfigFileError(f"{where}: weight range must be [lo, hi]")
        weight = (float(weight[0]), float(weight[1]))
    else:
        weight = float(weight)
    edges = obj.get("edges")
    if edges is not None:
        edges = tuple((int(s), int(d)) for s, d in edges)
    return ConnectionSpec(
        src=str(_need(obj, "src", where)),
        dst=str(_need(obj, "dst", where)),
        rule=str(obj.get("rule", "all-to-all")),
        p=float(obj["p"]) if "p" in obj else None,
        edges=edges,
        weight=weight,
        delay=int(obj.get("delay", 1)),
    )


def parse_config(doc: dict) -> tuple[NetworkConfig, EngineConfig]:
    if not isinstance(doc, dict):
        raise ConfigFileError("config document must be a mapping")
    engine = doc.get("engine", {})
    if not isinstance(engine, dict):
        raise ConfigFileError("engine section must be a mapping")
    inputs = doc.get("inputs", {})
    if not isinstance(inputs, dict):
        raise ConfigFileError("inputs section must be a mapping")

    raw_pops = _need(doc, "populations", "config")
    if not isinstance(raw_pops, list):
        raise ConfigFileError("populations must be a list")
    pops = tuple(_parse_population(p, inputs) for p in raw_pops)
    known = {p.name for p in pops}
    for name in inputs:
        if name not in known:
            raise ConfigFileError(f"inputs section names unknown population {name!r}")

    conns = tuple(_parse_connection(c, i)
                  for i, c in enumerate(doc.get("connections", []) or []))

    net = NetworkConfig(
        populations=pops,
        connections=conns,
        dt=float(engine.get("dt", 1.0)),
        seed=int(engine.get("seed", 0)),
    )
    probe = tuple(int(x) for x in engine.get("membrane_probe", []) or [])
    eng = EngineConfig(
        workers=int(engine.get("workers", 1)),
        max_ticks=int(engine.get("max_ticks", 1000)),
        telemetry_decimation=int(engine.get("decimation", 1)),
        membrane_probe=probe,
    )
    return net, eng


def load_config(path: str | Path) -> tuple[NetworkConfig, EngineConfig]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigFileError(f"cannot read config {path}: {e}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigFileError(f"cannot parse config {path}: {e}") from None
    return parse_config(doc)


def load_sweep(path: str | Path) -> SweepSpec:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigFileError(f"cannot read sweep spec {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigFileError(f"cannot parse sweep spec {path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigFileError("sweep document must be a mapping")

    if "base" in doc:
        base, _ = parse_config(doc["base"])
    elif "base_config" in doc:
        base, _ = load_config(Path(path).parent / doc["base_config"])
    else:
        raise ConfigFileError("sweep needs a base (inline) or base_config (path)")

    raw_axes = doc.get("axes", [])
    if not isinstance(raw_axes, list) or not raw_axes:
        raise ConfigFileError("sweep needs a non-empty axes list")
    axes = []
    for ax in raw_axes:
        if not isinstance(ax, dict) or "path" not in ax or "values" not in ax:
            raise ConfigFileError("each axis needs a path and a values list")
        values = ax["values"]
        if not isinstance(values, list) or not values:
            raise ConfigFileError(f"axis {ax['path']!r} needs a non-empty values list")
        axes.append((str(ax["path"]), tuple(values)))

    return SweepSpec(
        base=base,
        axes=tuple(axes),
        duration_ms=float(doc.get("duration_ms", 1000.0)),
        warmup_ms=float(doc.get("warmup_ms", 100.0)),
        parallel=int(doc.get("parallel", 1)),
        saturation_hz=float(doc.get("saturation_hz", 200.0)),
    )


def parse_criterion(doc: dict) -> BalanceCriterion:
    doc = doc or {}
    band = doc.get("rate_band")
    lo, hi = (band if band else (doc.get("rate_lo_hz", 1.0), doc.get("rate_hi_hz", 100.0)))
    return BalanceCriterion(
        rate_lo_hz=float(lo),
        rate_hi_hz=float(hi),
        max_isi_cv=float(doc.get("max_isi_cv", 1.5)),
        max_silent_frac=float(doc.get("max_silent_frac", 0.2)),
        max_saturated_frac=float(doc.get("max_saturated_frac", 0.2)),
    )


def load_criterion_from_sweep(path: str | Path) -> BalanceCriterion:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigFileError("sweep document must be a mapping")
    return parse_criterion(doc.get("criterion", {}))

"""Command-line entry point.

Subcommands: run (offline simulation to CSV), serve (steering/telemetry
server), sweep (design-space grid), replay (resume from a snapshot).

Exit codes: 0 success, 2 validation/config error, 3 numeric divergence,
4 environment error (e.g. port in use). Every flag with a SPIKESTEER_*
environment variable equivalent can be overridden that way; explicit flags
win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config_io import (ConfigFileError, load_config, load_criterion_from_sweep,
                        load_sweep)
from .engine import DivergedError, Engine
from .explore import run_sweep, sweep_csv, sweep_summary
from .network import ValidationError, build_network
from .protocol import MembraneFrame, SpikesFrame
from .server import ControlServer
from .snapshot import SnapshotError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3
EXIT_ENV = 4

_ENV_PREFIX = "SPIKESTEER_"


def _env(name: str, fallback=None):
    return os.environ.get(_ENV_PREFIX + name, fallback)


class CsvSink:
    """Streams spike (and optionally membrane) telemetry to CSV files."""

    def __init__(self, spikes_path: Path, membrane_path: Path | None = None):
        self._spikes = open(spikes_path, "w", encoding="utf-8", newline="\n")
        self._spikes.write("tick,neuron\n")
        self._membrane = None
        if membrane_path is not None:
            self._membrane = open(membrane_path, "w", encoding="utf-8", newline="\n")
            self._membrane.write("tick,neuron,v_mv\n")
        self.total_spikes = 0

    def __call__(self, frame) -> None:
        if isinstance(frame, SpikesFrame):
            for n in frame.neurons:
                self._spikes.write(f"{frame.tick},{n}\n")
            self.total_spikes += len(frame.neurons)
        elif isinstance(frame, MembraneFrame) and self._membrane is not None:
            for n, v in frame.samples:
                self._membrane.write(f"{frame.tick},{n},{v!r}\n")

    def close(self) -> None:
        self._spikes.close()
        if self._membrane is not None:
            self._membrane.close()


def _apply_overrides(net_cfg, eng_cfg, args):
    if getattr(args, "seed", None) is not None:
        net_cfg = dataclasses.replace(net_cfg, seed=args.seed)
    updates = {}
    if getattr(args, "workers", None) is not None:
        updates["workers"] = args.workers
    if getattr(args, "max_ticks", None) is not None:
        updates["max_ticks"] = args.max_ticks
    if getattr(args, "decimation", None) is not None:
        updates["telemetry_decimation"] = args.decimation
    if updates:
        eng_cfg = dataclasses.replace(eng_cfg, **updates)
    return net_cfg, eng_cfg


def _write_summary(path: Path, summary, net_cfg, eng_cfg, extra=None) -> None:
    doc = {
        "ticks": summary.ticks,
        "total_spikes": summary.total_spikes,
        "pop_rates_hz": summary.pop_rates,
        "wall_time_s": summary.wall_time_s,
        "seed": summary.seed,
        "config_hash": summary.config_hash,
        "dt_ms": net_cfg.dt,
        "workers": eng_cfg.workers,
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_run(args) -> int:
    try:
        net_cfg, eng_cfg = load_config(args.config)
        net_cfg, eng_cfg = _apply_overrides(net_cfg, eng_cfg, args)
        net = build_network(net_cfg)
    except (ConfigFileError, ValidationError, ValueError) as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    membrane = out / "membrane.csv" if args.record_membrane else None
    sink = CsvSink(out / "spikes.csv", membrane)
    engine = Engine(net, eng_cfg)
    try:
        summary = engine.run(sink=sink)
    except DivergedError as e:
        sink.close()
        print(f"simulation diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    finally:
        sink.close()
    _write_summary(out / "summary.json", summary, net_cfg, eng_cfg)
    print(f"ran {summary.ticks} ticks, {summary.total_spikes} spikes, "
          f"wall {summary.wall_time_s:.3f}s -> {out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        net_cfg, eng_cfg = load_config(args.config)
        net_cfg, eng_cfg = _apply_overrides(net_cfg, eng_cfg, args)
        net = build_network(net_cfg)
    except (ConfigFileError, ValidationError, ValueError) as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    host, port = _parse_endpoint(args.listen)
    ws_host, ws_port = _parse_endpoint(args.ws_listen) if args.ws_listen else (host, port + 1)
    engine = Engine(net, eng_cfg)
    engine.paused = True  # a served run starts paused; a client resumes it
    server = ControlServer(engine, host=host, port=port, ws_port=ws_port,
                           ws_path=args.ws_path)
    try:
        server.start()
    except OSError as e:
        print(f"cannot bind listener: {e}", file=sys.stderr)
        return EXIT_ENV
    eps = server.endpoints()
    print(f"listening tcp://{eps['tcp']} and {eps['ws']}", flush=True)
    try:
        server.wait()
    except DivergedError as e:
        print(f"simulation diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        spec = load_sweep(args.spec)
        criterion = load_criterion_from_sweep(args.spec)
        criterion = _criterion_overrides(criterion, args)
        if args.workers is not None:
            spec = dataclasses.replace(spec, parallel=args.workers)
        result = run_sweep(spec, criterion)
    except (ConfigFileError, ValidationError, ValueError) as e:
        print(f"invalid sweep spec: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(result), encoding="utf-8")
    (out / "sweep_summary.json").write_text(
        json.dumps(sweep_summary(result), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    print(f"{len(result.rows)} cells, {result.balanced_count()} balanced -> {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        net_cfg, eng_cfg = load_config(args.config)
        net_cfg, eng_cfg = _apply_overrides(net_cfg, eng_cfg, args)
        net = build_network(net_cfg)
        frame = Path(args.snapshot).read_bytes()
        engine = Engine.restore(net, frame, eng_cfg)
    except (ConfigFileError, ValidationError, SnapshotError, OSError, ValueError) as e:
        print(f"cannot replay: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sink = CsvSink(out / "spikes.csv", out / "membrane.csv" if args.record_membrane else None)
    try:
        summary = engine.run(args.ticks, sink=sink)
    except DivergedError as e:
        print(f"simulation diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    finally:
        sink.close()
    _write_summary(out / "summary.json", summary, net_cfg, eng_cfg,
                   extra={"replayed_from_tick": summary.final_tick - summary.ticks})
    print(f"replayed {summary.ticks} ticks -> {out}")
    return EXIT_OK


def _criterion_overrides(criterion, args):
    updates = {}
    if args.rate_band:
        lo, hi = args.rate_band.split(":")
        updates["rate_lo_hz"] = float(lo)
        updates["rate_hi_hz"] = float(hi)
    if args.max_cv is not None:
        updates["max_isi_cv"] = args.max_cv
    if args.max_silent is not None:
        updates["max_silent_frac"] = args.max_silent
    if args.max_saturated is not None:
        updates["max_saturated_frac"] = args.max_saturated
    return dataclasses.replace(criterion, **updates) if updates else criterion


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int,
                   default=int(_env("WORKERS")) if _env("WORKERS") else None)
    p.add_argument("--max-ticks", dest="max_ticks", type=int,
                   default=int(_env("MAX_TICKS")) if _env("MAX_TICKS") else None)
    p.add_argument("--seed", type=int,
                   default=int(_env("SEED")) if _env("SEED") else None)
    p.add_argument("--decimation", type=int,
                   default=int(_env("DECIMATION")) if _env("DECIMATION") else None)
    p.add_argument("--out", default=_env("OUT", "out"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikesteer",
        description="steerable spiking-network simulator: run, serve, sweep, replay")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a config offline and record CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--record-membrane", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="serve the steering protocol for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--listen", default=_env("LISTEN", "127.0.0.1:7677"))
    p.add_argument("--ws-listen", dest="ws_listen", default=_env("WS_LISTEN"))
    p.add_argument("--ws-path", dest="ws_path", default=_env("WS_PATH", "/control"))
    _add_common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("sweep", help="expand a parameter grid and classify cells")
    p.add_argument("--spec", required=True)
    p.add_argument("--rate-band", dest="rate_band", default=None,
                   help="LO:HI balanced rate band in Hz")
    p.add_argument("--max-cv", dest="max_cv", type=float, default=None)
    p.add_argument("--max-silent", dest="max_silent", type=float, default=None)
    p.add_argument("--max-saturated", dest="max_saturated", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="restore a snapshot and keep running")
    p.add_argument("--config", required=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--ticks", type=int, required=True)
    p.add_argument("--record-membrane", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

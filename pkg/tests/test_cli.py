import json
import socket
import threading
import time
from pathlib import Path

import pytest

from spikesteer.cli import main
from spikesteer.config_io import load_config, load_sweep
from spikesteer.engine import Engine, EngineConfig, RecordingSink
from spikesteer.network import build_network

DOCS = Path(__file__).parent.parent / "docs"

GOOD_CONFIG = """
engine: {dt: 1.0, seed: 11, max_ticks: 200}
populations:
  - name: p
    model: lif
    size: 5
    params: {v_rest: -65.0, v_thresh: -50.0, v_reset: -65.0, c_m: 1.0, r_m: 10.0, t_refrac: 1.0}
inputs:
  p: {kind: constant-current, amplitude: 3.0}
"""

BAD_CONFIG = GOOD_CONFIG.replace("c_m: 1.0", "c_m: -1.0")

DIVERGING_CONFIG = """
engine: {dt: 1.0, seed: 3, max_ticks: 400}
populations:
  - name: p
    model: lif
    size: 2
    params: {v_rest: -65.0, v_thresh: -50.0, v_reset: -65.0, c_m: 1.0, r_m: 10.0}
inputs:
  p: {kind: poisson-spikes, amplitude: 1.0e308, rate: 900.0}
"""

SWEEP_SPEC = """
base:
  engine: {dt: 0.5, seed: 5}
  populations:
    - name: n
      model: lif
      size: 1
      params: {v_rest: -65.0, v_thresh: -50.0, v_reset: -65.0, c_m: 1.0, r_m: 10.0, t_refrac: 0.0}
  inputs:
    n: {kind: constant-current, amplitude: 0.0}
axes:
  - {path: populations.n.input.amplitude, values: [0.5, 1.0, 2.0]}
  - {path: populations.n.params.v_thresh, values: [-55.0, -50.0, -45.0, -40.0]}
duration_ms: 300.0
warmup_ms: 50.0
criterion: {rate_band: [1.0, 500.0]}
"""


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "net.yaml"
    p.write_text(GOOD_CONFIG)
    return p


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestRun:
    def test_zero_ticks_empty_csv_with_header(self, config_path, tmp_path):
        out = tmp_path / "out"
        code = main(["run", "--config", str(config_path), "--max-ticks", "0",
                     "--out", str(out)])
        assert code == 0
        assert (out / "spikes.csv").read_text() == "tick,neuron\n"
        summary = json.loads((out / "summary.json").read_text())
        assert summary["ticks"] == 0
        assert summary["total_spikes"] == 0

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(BAD_CONFIG)
        code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "c_m" in capsys.readouterr().err

    def test_same_seed_byte_identical_spikes(self, config_path, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["run", "--config", str(config_path), "--out", str(out)]) == 0
            outs.append((out / "spikes.csv").read_bytes())
        assert outs[0] == outs[1]
        assert outs[0].count(b"\n") > 10

    def test_divergence_exits_3(self, tmp_path, capsys):
        cfg = tmp_path / "div.yaml"
        cfg.write_text(DIVERGING_CONFIG)
        code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 3
        assert "diverged" in capsys.readouterr().err

    def test_summary_embeds_provenance(self, config_path, tmp_path):
        out = tmp_path / "out"
        main(["run", "--config", str(config_path), "--out", str(out)])
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seed"] == 11
        assert summary["config_hash"]
        assert summary["pop_rates_hz"]["p"] > 0

    def test_env_var_overrides(self, config_path, tmp_path, monkeypatch):
        monkeypatch.setenv("SPIKESTEER_MAX_TICKS", "7")
        out = tmp_path / "out"
        assert main(["run", "--config", str(config_path), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["ticks"] == 7

    def test_membrane_recording(self, config_path, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", str(config_path), "--out", str(out),
                     "--record-membrane", "--max-ticks", "5"]) == 0
        # no probe configured: file exists with just the header
        assert (out / "membrane.csv").read_text().startswith("tick,neuron,v_mv")


class TestSweep:
    def test_grid_rows_and_exit(self, tmp_path, capsys):
        spec = tmp_path / "sweep.yaml"
        spec.write_text(SWEEP_SPEC)
        out = tmp_path / "out"
        code = main(["sweep", "--spec", str(spec), "--out", str(out)])
        assert code == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert len(lines) == 1 + 12  # header + 3*4 grid
        assert "balanced" in capsys.readouterr().out

    def test_rerun_identical_bytes(self, tmp_path):
        spec = tmp_path / "sweep.yaml"
        spec.write_text(SWEEP_SPEC)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["sweep", "--spec", str(spec), "--out", str(a)]) == 0
        assert main(["sweep", "--spec", str(spec), "--out", str(b)]) == 0
        assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()

    def test_empty_axes_exit_2(self, tmp_path, capsys):
        spec = tmp_path / "sweep.yaml"
        spec.write_text("base:\n  populations: []\naxes: []\n")
        assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 2

    def test_zero_balanced_is_success(self, tmp_path, capsys):
        spec = tmp_path / "sweep.yaml"
        spec.write_text(SWEEP_SPEC)
        out = tmp_path / "out"
        code = main(["sweep", "--spec", str(spec), "--out", str(out),
                     "--rate-band", "4990:5000"])
        assert code == 0
        assert "0 balanced" in capsys.readouterr().out


class TestReplay:
    def test_replay_matches_uninterrupted_run(self, config_path, tmp_path):
        net_cfg, eng_cfg = load_config(config_path)
        net = build_network(net_cfg)

        full = Engine(net, eng_cfg)
        sink_full = RecordingSink()
        full.run(150, sink=sink_full)
        tail_expected = [p for p in sink_full.spike_pairs() if p[0] >= 100]

        head = Engine(net, eng_cfg)
        head.run(100)
        snap_path = tmp_path / "world.snap"
        snap_path.write_bytes(head.snapshot())

        out = tmp_path / "replay"
        code = main(["replay", "--config", str(config_path), "--snapshot",
                     str(snap_path), "--ticks", "50", "--out", str(out)])
        assert code == 0
        lines = (out / "spikes.csv").read_text().splitlines()[1:]
        got = [tuple(map(int, l.split(","))) for l in lines]
        assert got == tail_expected

    def test_corrupt_snapshot_exits_2(self, config_path, tmp_path, capsys):
        snap = tmp_path / "bad.snap"
        snap.write_bytes(b"garbage")
        code = main(["replay", "--config", str(config_path), "--snapshot",
                     str(snap), "--ticks", "5", "--out", str(tmp_path / "o")])
        assert code == 2


class TestServe:
    def test_port_conflict_exits_4(self, config_path, capsys):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        blocker.listen()
        port = blocker.getsockname()[1]
        try:
            code = main(["serve", "--config", str(config_path),
                         "--listen", f"127.0.0.1:{port}"])
            assert code == 4
            assert "bind" in capsys.readouterr().err
        finally:
            blocker.close()

    def test_serve_resume_stop_clean_exit(self, config_path):
        from spikesteer.protocol import (AckFrame, Resume, StatusFrame, Stop,
                                         Subscribe, decode, encode)
        port = free_port()
        ws_port = free_port()
        result = {}

        def serve():
            result["code"] = main(["serve", "--config", str(config_path),
                                   "--listen", f"127.0.0.1:{port}",
                                   "--ws-listen", f"127.0.0.1:{ws_port}"])

        t = threading.Thread(target=serve, daemon=True)
        t.start()
        deadline = time.monotonic() + 10
        sock = None
        while time.monotonic() < deadline:
            try:
                sock = socket.create_connection(("127.0.0.1", port), timeout=1)
                break
            except OSError:
                time.sleep(0.05)
        assert sock is not None
        reader = sock.makefile("r", encoding="utf-8")

        def send(msg):
            sock.sendall((encode(msg) + "\n").encode())

        def expect(kind, pred=lambda f: True):
            sock.settimeout(10)
            while True:
                frame = decode(reader.readline().rstrip("\n"))
                if isinstance(frame, kind) and pred(frame):
                    return frame

        first = expect(StatusFrame)
        assert first.state == "paused"  # serve starts paused
        send(Subscribe(id=1, channels=("spikes",)))
        expect(AckFrame)
        send(Resume(id=2, until_tick=20))
        expect(StatusFrame, lambda f: f.state == "paused" and f.tick == 20)
        send(Stop(id=3))
        expect(StatusFrame, lambda f: f.state == "stopped")
        t.join(timeout=10)
        assert not t.is_alive()
        assert result["code"] == 0
        sock.close()


class TestShippedExamples:
    def test_example_config_loads_and_runs(self, tmp_path):
        net_cfg, eng_cfg = load_config(DOCS / "example_config.yaml")
        net = build_network(net_cfg)
        assert net.n_neurons == 100
        engine = Engine(net, EngineConfig(workers=1, max_ticks=50))
        summary = engine.run()
        assert summary.ticks == 50

    def test_example_sweep_loads(self):
        spec = load_sweep(DOCS / "example_sweep.yaml")
        assert len(spec.axes) == 1
        assert spec.base.populations[0].name == "n"

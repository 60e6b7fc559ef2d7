import struct

import numpy as np
import pytest

from conftest import mixed_random_config, single_lif_config
from oracles import ScalarSim
from spikesteer.engine import Engine, EngineConfig, RecordingSink
from spikesteer.network import build_network
from spikesteer.protocol import SetParam
from spikesteer.snapshot import MAGIC, SnapshotError, VERSION


def spikes_of(engine, ticks):
    sink = RecordingSink()
    engine.run(ticks, sink=sink)
    return sink.spike_pairs()


class TestRoundTrip:
    def test_fresh_world_roundtrip(self):
        net = build_network(single_lif_config(3.0, dt=1.0))
        eng = Engine(net)
        frame = eng.snapshot()
        restored = Engine.restore(net, frame)
        assert restored.tick == 0
        assert np.array_equal(restored.v, eng.v)
        assert spikes_of(restored, 30) == spikes_of(Engine(net), 30)

    def test_snapshot_mid_run_resumes_identically(self):
        cfg = mixed_random_config(seed=41)
        net = build_network(cfg)

        baseline = Engine(net)
        full = spikes_of(baseline, 150)

        eng = Engine(net)
        head = spikes_of(eng, 100)
        frame = eng.snapshot()

        restored = Engine.restore(net, frame)
        assert restored.tick == 100
        tail_restored = spikes_of(restored, 50)
        tail_original = spikes_of(eng, 50)
        assert tail_restored == tail_original
        assert head + tail_restored == full
        assert len(tail_restored) > 10

    def test_restore_under_different_worker_count(self):
        cfg = mixed_random_config(seed=43)
        net = build_network(cfg)
        eng = Engine(net, EngineConfig(workers=1))
        spikes_of(eng, 80)
        frame = eng.snapshot()
        r1 = Engine.restore(net, frame, EngineConfig(workers=1))
        r4 = Engine.restore(net, frame, EngineConfig(workers=4))
        assert spikes_of(r1, 60) == spikes_of(r4, 60)

    def test_steered_params_survive(self):
        net = build_network(single_lif_config(3.0, dt=1.0))
        eng = Engine(net)
        eng.apply_commands([SetParam(id=1, target="n", name="v_thresh", value=-55.0)])
        restored = Engine.restore(net, eng.snapshot())
        assert float(restored.v_thresh[0]) == -55.0

    def test_held_commands_survive(self):
        net = build_network(single_lif_config(3.0, dt=1.0))
        eng = Engine(net, EngineConfig(max_ticks=20))
        eng.apply_commands([SetParam(id=1, target="n", name="v_thresh",
                                     value=-40.0, at_tick=10)])
        restored = Engine.restore(net, eng.snapshot())
        restored.run(20)
        assert float(restored.v_thresh[0]) == -40.0

    def test_spike_counters_survive(self):
        net = build_network(single_lif_config(3.0, dt=0.5))
        eng = Engine(net)
        spikes_of(eng, 200)
        assert eng.spike_total > 0
        restored = Engine.restore(net, eng.snapshot())
        assert restored.spike_total == eng.spike_total
        assert np.array_equal(restored.pop_spike_counts, eng.pop_spike_counts)


class TestRejection:
    def frame(self):
        net = build_network(single_lif_config(3.0, dt=1.0))
        return net, Engine(net).snapshot()

    def test_truncated_frame(self):
        net, frame = self.frame()
        with pytest.raises(SnapshotError, match="corrupt frame"):
            Engine.restore(net, frame[: len(frame) // 2])

    def test_bad_magic(self):
        net, frame = self.frame()
        with pytest.raises(SnapshotError, match="magic"):
            Engine.restore(net, b"XXXX" + frame[4:])

    def test_version_mismatch(self):
        net, frame = self.frame()
        bumped = MAGIC + struct.pack("<I", VERSION + 1) + frame[8:]
        with pytest.raises(SnapshotError, match="version"):
            Engine.restore(net, bumped)

    def test_wrong_network(self):
        net, frame = self.frame()
        other = build_network(mixed_random_config(seed=1))
        with pytest.raises(SnapshotError):
            Engine.restore(other, frame)

    def test_different_config_same_shape_rejected(self):
        net, frame = self.frame()
        other = build_network(single_lif_config(2.0, dt=1.0))  # same sizes
        with pytest.raises(SnapshotError, match="different config"):
            Engine.restore(other, frame)

    def test_empty_bytes(self):
        net, _ = self.frame()
        with pytest.raises(SnapshotError):
            Engine.restore(net, b"")

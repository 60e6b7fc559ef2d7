import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spikesteer.engine import Engine, EngineConfig
from spikesteer.models import InputSpec, IzhParams, LifParams
from spikesteer.network import (ConnectionSpec, NetworkConfig, PopulationSpec,
                                build_network)


def single_lif_config(i_nA: float, dt: float, t_refrac: float = 0.0,
                      seed: int = 1) -> NetworkConfig:
    """One LIF neuron with a constant drive; the workhorse oracle setup."""
    return NetworkConfig(
        populations=(PopulationSpec(
            name="n", model="lif", size=1,
            params=LifParams(v_rest=-65.0, v_thresh=-50.0, v_reset=-65.0,
                             c_m=1.0, r_m=10.0, t_refrac=t_refrac),
            input=InputSpec(kind="constant-current", amplitude=i_nA)),),
        connections=(),
        dt=dt,
        seed=seed,
    )


def mixed_random_config(n_lif: int = 60, n_izh: int = 40, p: float = 0.05,
                        seed: int = 11, dt: float = 1.0) -> NetworkConfig:
    """Mixed LIF/Izhikevich populations with random coupling and Poisson drive."""
    return NetworkConfig(
        populations=(
            PopulationSpec(name="exc", model="lif", size=n_lif,
                           params=LifParams(t_refrac=2.0),
                           input=InputSpec(kind="poisson-spikes", amplitude=1.1,
                                           rate=250.0)),
            PopulationSpec(name="inh", model="izhikevich", size=n_izh,
                           params=IzhParams(),
                           input=InputSpec(kind="poisson-spikes", amplitude=1.4,
                                           rate=150.0)),
        ),
        connections=(
            ConnectionSpec(src="exc", dst="inh", rule="probability", p=p,
                           weight=0.4, delay=2),
            ConnectionSpec(src="inh", dst="exc", rule="probability", p=p,
                           weight=-0.3, delay=3),
            ConnectionSpec(src="exc", dst="exc", rule="probability", p=p / 2,
                           weight=0.2, delay=1),
        ),
        dt=dt,
        seed=seed,
    )


def run_recorded(cfg: NetworkConfig, ticks: int, workers: int = 1):
    """Build, run, and return (summary, spike pairs)."""
    from spikesteer.engine import RecordingSink
    net = build_network(cfg)
    engine = Engine(net, EngineConfig(workers=workers, max_ticks=ticks))
    sink = RecordingSink()
    summary = engine.run(sink=sink)
    return summary, sink.spike_pairs()


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once before any timed test runs."""
    cfg = single_lif_config(3.0, dt=1.0)
    run_recorded(cfg, 3)
    yield

"""spikesteer: a runtime-steerable spiking neural network simulator.

Fixed-dt LIF/Izhikevich populations stepped across parallel workers with
bit-reproducible spike exchange, a line-delimited steering/telemetry protocol
(TCP and WebSocket), snapshot/replay, and offline parameter-space sweeps that
classify balanced operating regions.
"""

from .engine import (Ack, CommandQueue, DivergedError, Engine, EngineConfig,
                     RecordingSink, RunSummary, SpikeRecord, partition)
from .explore import (BalanceCriterion, CellMetrics, SweepSpec, classify,
                      compute_metrics, expand_grid, run_sweep)
from .models import (InputSpec, IzhParams, IzhState, LifParams, LifState,
                     NumericError, SynapseParams, izh_step, lif_analytic_isi,
                     lif_step, poisson_step, syn_step)
from .network import (BuiltNetwork, ConnectionSpec, NetworkConfig,
                      PopulationSpec, ValidationError, build_network,
                      validate_config)
from .snapshot import SnapshotError

__version__ = "0.1.0"

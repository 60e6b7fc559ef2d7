"""Tick-synchronous simulation kernel.

Each tick has two phases. Phase A advances every neuron one step, partition by
partition (parallel across worker lanes); Phase B scatters the tick's spikes
into the delay ring. Phase B's accumulation order is fixed — source neuron
ascending, then edge order — and each ring cell is only ever touched by the
lane owning its target range, so floating-point results are bit-identical for
any worker count.

Steering commands are drained from a thread-safe queue and applied only at
tick boundaries, between Phase B of one tick and Phase A of the next. In the
threaded path that boundary work runs as the barrier action of the first of
the two per-tick barriers, while every lane is parked.

Divergence (any non-finite state after a tick) aborts the run with the
offending neurons rather than clamping; silently clamped dynamics would mask
exactly the unbalanced parameter regions the sweep tooling exists to find.
"""

from __future__ import annotations

import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .models import (CONSTANT_CURRENT, POISSON_SPIKES, InputSpec)
from .network import (TAG_IZH, TAG_LIF, BuiltNetwork, config_hash)
from .protocol import (AckFrame, ErrorFrame, MembraneFrame, Pause, Resume,
                       SetInput, SetParam, SnapshotRequest, SpikesFrame,
                       StatusFrame, Stop, should_emit)

# a steering command is any protocol command object; re-exported for callers
SimCommand = SetParam | SetInput | Pause | Resume | SnapshotRequest | Stop

_LIF_PARAMS = {"v_rest", "v_thresh", "v_reset", "c_m", "r_m", "t_refrac"}
_IZH_PARAMS = {"a", "b", "c", "d", "v_peak"}


class DivergedError(RuntimeError):
    """Simulation state left the numeric domain."""

    def __init__(self, tick: int, neurons: list[int], detail: str):
        super().__init__(f"diverged at tick {tick}: neurons {neurons} ({detail})")
        self.tick = tick
        self.neurons = neurons


class CommandRejected(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class SpikeRecord:
    tick: int
    neuron: int


@dataclass(frozen=True, slots=True)
class EngineConfig:
    workers: int = 1
    max_ticks: int = 1000
    telemetry_decimation: int = 1       # membrane sampling period, ticks
    membrane_probe: tuple[int, ...] = ()

    def validate(self) -> list[str]:
        out = []
        if self.workers < 1:
            out.append("workers must be >= 1")
        if self.max_ticks < 0:
            out.append("max_ticks must be >= 0")
        if self.telemetry_decimation < 1:
            out.append("telemetry_decimation must be >= 1")
        return out


@dataclass(frozen=True, slots=True)
class Ack:
    command_id: int
    ok: bool
    effective_tick: int
    reason: str | None = None


@dataclass(frozen=True)
class RunSummary:
    ticks: int
    total_spikes: int
    pop_rates: dict[str, float]  # Hz per neuron over this run
    wall_time_s: float
    seed: int
    config_hash: str
    final_tick: int


def partition(total_neurons: int, workers: int) -> list[tuple[int, int]]:
    """Contiguous, disjoint ranges covering [0, total); sizes differ by at
    most one, larger ranges first."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if total_neurons < 0:
        raise ValueError("total_neurons must be >= 0")
    q, r = divmod(total_neurons, workers)
    ranges = []
    lo = 0
    for w in range(workers):
        size = q + 1 if w < r else q
        ranges.append((lo, lo + size))
        lo += size
    return ranges


class CommandQueue:
    """Multi-producer, single-consumer queue drained at tick boundaries."""

    def __init__(self):
        self._items: deque = deque()
        self._cv = threading.Condition()
        self._nonempty = False  # racy fast-path flag; truth lives in _items

    def push(self, cmd) -> None:
        with self._cv:
            self._items.append(cmd)
            self._nonempty = True
            self._cv.notify_all()

    def drain(self) -> list:
        if not self._nonempty:
            return []
        with self._cv:
            items = list(self._items)
            self._items.clear()
            self._nonempty = False
        return items

    def wait(self, timeout: float) -> None:
        with self._cv:
            if not self._items:
                self._cv.wait(timeout)


class RecordingSink:
    """Telemetry sink that keeps every frame; test and CLI support."""

    def __init__(self):
        self.frames: list = []

    def __call__(self, frame) -> None:
        self.frames.append(frame)

    def spike_records(self) -> list[SpikeRecord]:
        out = []
        for f in self.frames:
            if isinstance(f, SpikesFrame):
                out.extend(SpikeRecord(f.tick, n) for n in f.neurons)
        return out

    def spike_pairs(self) -> list[tuple[int, int]]:
        return [(r.tick, r.neuron) for r in self.spike_records()]

    def total_spikes(self) -> int:
        return sum(len(f.neurons) for f in self.frames if isinstance(f, SpikesFrame))


@dataclass
class _RunState:
    stop_at: int
    in_flight: int | None = None
    done: bool = False
    error: BaseException | None = None


class Engine:
    """Simulation world plus its stepping machinery.

    State is struct-of-arrays over the flat neuron index space so that
    steering a population is a slice assignment and partitions are slices.
    """

    SNAPSHOT_VERSION = 1

    def __init__(self, net: BuiltNetwork, cfg: EngineConfig = EngineConfig()):
        bad = cfg.validate()
        if bad:
            raise ValueError("; ".join(bad))
        self.net = net
        self.cfg = cfg
        self.dt = net.config.dt
        self.seed = net.config.seed
        self.tick = 0
        self.paused = False
        self.spike_total = 0
        self.pop_spike_counts = np.zeros(len(net.pop_names), dtype=np.int64)

        n = net.n_neurons
        self.model_tag = net.model_tag
        self.v = np.zeros(n)
        self.u = np.zeros(n)
        self.refrac = np.zeros(n)
        self.syn = np.zeros(n)
        self.v_rest = np.full(n, -65.0)
        self.v_thresh = np.full(n, -50.0)
        self.v_reset = np.full(n, -65.0)
        self.c_m = np.ones(n)
        self.r_m = np.full(n, 10.0)
        self.t_refrac = np.zeros(n)
        self.a = np.full(n, 0.02)
        self.b = np.full(n, 0.2)
        self.c = np.full(n, -65.0)
        self.d = np.full(n, 8.0)
        self.v_peak = np.full(n, 30.0)
        self.tau_syn = np.full(n, 5.0)
        self.in_kind = np.zeros(n, dtype=np.uint8)
        self.in_amp = np.zeros(n)
        self.in_rate = np.zeros(n)

        for name, pop in zip(net.pop_names, net.config.populations):
            lo, hi = net.pop_slice(name)
            p = pop.params
            if pop.model == "lif":
                self.v_rest[lo:hi] = p.v_rest
                self.v_thresh[lo:hi] = p.v_thresh
                self.v_reset[lo:hi] = p.v_reset
                self.c_m[lo:hi] = p.c_m
                self.r_m[lo:hi] = p.r_m
                self.t_refrac[lo:hi] = p.t_refrac
                self.v[lo:hi] = p.v_rest
            else:
                self.a[lo:hi] = p.a
                self.b[lo:hi] = p.b
                self.c[lo:hi] = p.c
                self.d[lo:hi] = p.d
                self.v_peak[lo:hi] = p.v_peak
                self.v[lo:hi] = p.c
                self.u[lo:hi] = p.b * p.c
            self.tau_syn[lo:hi] = pop.synapse.tau_syn
            self._write_input(lo, hi, pop.input)

        self.ring = np.zeros((max(net.max_delay, 1), n))
        self.syn_decay = np.zeros(n)
        self.p_spike = np.zeros(n)
        self._recompute_syn_decay(0, n)
        self._recompute_p_spike(0, n)

        self.probe = np.asarray(sorted(cfg.membrane_probe), dtype=np.int64)
        self._pending_probe: np.ndarray | None = None
        self._schedule = self._build_schedule()
        self._held: list = []       # at_tick commands waiting for their boundary
        self._auto_pause_at: int | None = None
        self._stop = False
        self.last_snapshot: bytes | None = None

        # per-run scratch, sized for the single-partition case by default
        self._spike_out = np.zeros(max(n, 1), dtype=np.int32)
        self._running = False
        self._use_partitions(1)

    # -- caches ---------------------------------------------------------------

    def _recompute_syn_decay(self, lo: int, hi: int) -> None:
        # element-wise math.exp so a scalar oracle reproduces identical bits
        dt = self.dt
        tau = self.tau_syn
        dec = self.syn_decay
        for i in range(lo, hi):
            dec[i] = math.exp(-dt / tau[i])

    def _recompute_p_spike(self, lo: int, hi: int) -> None:
        dt = self.dt
        rate = self.in_rate
        p = self.p_spike
        for i in range(lo, hi):
            p[i] = -math.expm1(-rate[i] * dt / 1000.0)

    def _write_input(self, lo: int, hi: int, spec: InputSpec) -> None:
        self.in_kind[lo:hi] = kernels.KIND_POISSON if spec.kind == POISSON_SPIKES \
            else kernels.KIND_CONSTANT
        self.in_amp[lo:hi] = spec.amplitude
        self.in_rate[lo:hi] = spec.rate if spec.kind == POISSON_SPIKES else 0.0

    def _build_schedule(self) -> dict[int, list[tuple[str, InputSpec]]]:
        sched: dict[int, list[tuple[str, InputSpec]]] = {}
        for pop in self.net.config.populations:
            for at_tick, spec in pop.input_schedule:
                sched.setdefault(at_tick, []).append((pop.name, spec))
        return sched

    # -- steering -------------------------------------------------------------

    def _resolve_target(self, target) -> tuple[int, int]:
        if isinstance(target, str):
            if target not in self.net.pop_names:
                raise CommandRejected(f"unknown population {target!r}")
            return self.net.pop_slice(target)
        lo, hi = target
        if not (0 <= lo < hi <= self.net.n_neurons):
            raise CommandRejected(f"index range [{lo},{hi}) out of bounds")
        return int(lo), int(hi)

    def _set_param(self, target, name: str, value: float) -> None:
        lo, hi = self._resolve_target(target)
        if not (isinstance(value, (int, float)) and math.isfinite(value)):
            raise CommandRejected(f"{name} must be a finite number")
        value = float(value)
        if name in _LIF_PARAMS:
            if np.any(self.model_tag[lo:hi] != TAG_LIF):
                raise CommandRejected(f"{name} only applies to lif neurons")
        elif name in _IZH_PARAMS:
            if np.any(self.model_tag[lo:hi] != TAG_IZH):
                raise CommandRejected(f"{name} only applies to izhikevich neurons")
        elif name != "tau_syn":
            raise CommandRejected(f"unknown parameter {name!r}")

        if name in ("c_m", "r_m", "tau_syn", "a") and value <= 0:
            raise CommandRejected(f"{name} must be > 0")
        if name == "t_refrac" and value < 0:
            raise CommandRejected("t_refrac must be >= 0")
        if name == "v_thresh" and value <= float(np.max(self.v_rest[lo:hi])):
            raise CommandRejected("v_thresh must be > v_rest")
        if name == "v_rest":
            if value >= float(np.min(self.v_thresh[lo:hi])):
                raise CommandRejected("v_rest must be < v_thresh")
            if value < float(np.max(self.v_reset[lo:hi])):
                raise CommandRejected("v_rest must be >= v_reset")
        if name == "v_reset" and value > float(np.min(self.v_rest[lo:hi])):
            raise CommandRejected("v_reset must be <= v_rest")

        getattr(self, name)[lo:hi] = value
        if name == "tau_syn":
            self._recompute_syn_decay(lo, hi)

    def _set_input(self, target, spec: InputSpec) -> None:
        lo, hi = self._resolve_target(target)
        bad = spec.validate()
        if bad:
            raise CommandRejected("; ".join(bad))
        self._write_input(lo, hi, spec)
        self._recompute_p_spike(lo, hi)

    def apply_commands(self, commands: list) -> list[Ack]:
        """Apply steering commands at the current tick boundary, in order.

        Invalid commands are rejected with a reason and leave the world
        untouched. Commands carrying a future at_tick are held and applied at
        that boundary (their ack is produced then).
        """
        acks: list[Ack] = []
        for cmd in commands:
            at_tick = getattr(cmd, "at_tick", None)
            if at_tick is not None:
                if at_tick < self.tick:
                    acks.append(Ack(cmd.id, False, self.tick,
                                    f"at_tick {at_tick} already passed"))
                    continue
                if at_tick > self.tick:
                    self._held.append(cmd)
                    continue
            try:
                if isinstance(cmd, SetParam):
                    self._set_param(cmd.target, cmd.name, cmd.value)
                elif isinstance(cmd, SetInput):
                    self._set_input(cmd.target, cmd.input)
                elif isinstance(cmd, Pause):
                    self.paused = True
                elif isinstance(cmd, Resume):
                    if cmd.until_tick is not None and cmd.until_tick <= self.tick:
                        raise CommandRejected(
                            f"until_tick {cmd.until_tick} is not in the future")
                    self.paused = False
                    self._auto_pause_at = cmd.until_tick
                elif isinstance(cmd, Stop):
                    self._stop = True
                elif isinstance(cmd, SnapshotRequest):
                    frame = self.snapshot()
                    self.last_snapshot = frame
                    if cmd.path:
                        with open(cmd.path, "wb") as fh:
                            fh.write(frame)
                else:
                    raise CommandRejected(f"unsupported command {type(cmd).__name__}")
                acks.append(Ack(cmd.id, True, self.tick))
            except CommandRejected as e:
                acks.append(Ack(cmd.id, False, self.tick, str(e)))
        return acks

    def set_membrane_probe(self, neurons) -> None:
        """Thread-safe probe update; takes effect at the next tick boundary."""
        arr = np.asarray(sorted(set(int(x) for x in neurons)), dtype=np.int64)
        self._pending_probe = arr

    def request_stop(self) -> None:
        self._stop = True

    # -- stepping -------------------------------------------------------------

    def _take_held(self) -> list:
        if not self._held:
            return []
        due = [c for c in self._held if c.at_tick <= self.tick]
        if due:
            self._held = [c for c in self._held if c.at_tick > self.tick]
        return due

    def _apply_schedules(self) -> None:
        for pop_name, spec in self._schedule.pop(self.tick, []):
            lo, hi = self.net.pop_slice(pop_name)
            self._write_input(lo, hi, spec)
            self._recompute_p_spike(lo, hi)

    def _emit_acks(self, acks: list[Ack], sink) -> None:
        if sink is None:
            return
        for a in acks:
            if a.ok:
                sink(AckFrame(id=a.command_id, tick=a.effective_tick))
            else:
                sink(ErrorFrame(reason=a.reason, id=a.command_id, tick=a.effective_tick))

    def _boundary(self, st: _RunState, commands: CommandQueue | None, sink) -> None:
        """Everything that happens between two ticks, with all lanes quiescent."""
        if st.in_flight is not None:
            t = st.in_flight
            st.in_flight = None
            self._finish_tick(t, sink)
        if self._stop or self.tick >= st.stop_at:
            st.done = True
            return

        if self._auto_pause_at is not None and self.tick >= self._auto_pause_at:
            self._auto_pause_at = None
            self.paused = True
            if sink is not None:
                sink(StatusFrame(tick=self.tick, state="paused"))

        if self._pending_probe is not None:
            self.probe = self._pending_probe
            self._pending_probe = None

        self._apply_schedules()
        self._emit_acks(self.apply_commands(self._take_held()), sink)
        while True:
            cmds = commands.drain() if commands is not None else []
            if cmds:
                was_paused = self.paused
                self._emit_acks(self.apply_commands(cmds), sink)
                if sink is not None and self.paused != was_paused:
                    sink(StatusFrame(tick=self.tick,
                                     state="paused" if self.paused else "running"))
            if self._stop:
                st.done = True
                return
            if not self.paused:
                break
            if commands is None:
                raise RuntimeError("engine paused with no command source")
            commands.wait(0.05)
        st.in_flight = self.tick

    def _finish_tick(self, t: int, sink) -> None:
        bad = int(self._bad.max())
        if bad >= 0:
            mask = ~(np.isfinite(self.v) & np.isfinite(self.u) & np.isfinite(self.syn))
            idx = np.nonzero(mask)[0][:8]
            detail = ", ".join(f"neuron {i}: v={self.v[i]!r}" for i in idx)
            raise DivergedError(t, [int(i) for i in idx], detail)

        parts = self._part_bounds
        total = int(self._counts.sum())
        if total:
            if len(parts) == 1:
                spikes = self._spike_out[:self._counts[0]].copy()
            else:
                spikes = np.concatenate(
                    [self._spike_out[lo:lo + c]
                     for (lo, _), c in zip(parts, self._counts)])
            self.spike_total += total
            pops = np.searchsorted(self.net.pop_offsets, spikes, side="right") - 1
            self.pop_spike_counts += np.bincount(pops, minlength=len(self.net.pop_names))
        else:
            spikes = None

        if sink is not None:
            neurons = () if spikes is None else tuple(int(x) for x in spikes)
            sink(SpikesFrame(tick=t, neurons=neurons))
            if self.probe.size and should_emit(t, self.cfg.telemetry_decimation):
                samples = tuple((int(i), float(self.v[i])) for i in self.probe)
                sink(MembraneFrame(tick=t, samples=samples))
        self.tick = t + 1

    def _phase_a(self, lo: int, hi: int, t: int, part: int) -> None:
        cnt, bad = kernels.phase_a(
            lo, hi, t, self.dt, np.uint64(self.seed & (2**64 - 1)),
            self.model_tag, self.v, self.u, self.refrac, self.syn,
            self.ring, t % self.ring.shape[0],
            self.v_rest, self.v_thresh, self.v_reset, self.r_m, self.c_m,
            self.t_refrac, self.a, self.b, self.c, self.d, self.v_peak,
            self.syn_decay, self.in_kind, self.in_amp, self.p_spike,
            self._spike_out)
        self._counts[part] = cnt
        self._bad[part] = bad

    def _phase_b(self, t: int, tgt_lo: int, tgt_hi: int) -> None:
        if self._counts.sum() == 0 or self.net.n_edges == 0:
            return
        kernels.phase_b(
            t, self.ring, self._spike_out, self._part_los, self._counts,
            self.net.indptr, self.net.edge_target, self.net.edge_weight,
            self.net.edge_delay, tgt_lo, tgt_hi)

    def step_tick(self) -> list[SpikeRecord]:
        """Advance exactly one tick inline (single-partition semantics).

        Steering schedules still apply; the command queue does not (that is
        run()'s job). Not callable while paused or while run() is active.
        """
        if self.paused:
            raise RuntimeError("engine is paused")
        if self._running:
            raise RuntimeError("step_tick is not allowed during run()")
        self._use_partitions(1)
        self._apply_schedules()
        self._emit_acks(self.apply_commands(self._take_held()), None)
        t = self.tick
        self._phase_a(0, self.net.n_neurons, t, 0)
        self._phase_b(t, 0, self.net.n_neurons)
        sink = RecordingSink()
        self._finish_tick(t, sink)
        return sink.spike_records()

    def _use_partitions(self, workers: int) -> None:
        self._part_bounds = partition(self.net.n_neurons, workers)
        self._part_los = np.array([lo for lo, _ in self._part_bounds], dtype=np.int64)
        self._counts = np.zeros(workers, dtype=np.int64)
        self._bad = np.full(workers, -1, dtype=np.int64)

    def run(self, ticks: int | None = None, commands: CommandQueue | None = None,
            sink=None) -> RunSummary:
        """Run `ticks` more ticks (default cfg.max_ticks), draining steering
        commands at every boundary and emitting telemetry."""
        if self._running:
            raise RuntimeError("run() is not reentrant")
        if self.paused and commands is None:
            raise ValueError("engine is paused and no command source was given")
        n = self.cfg.max_ticks if ticks is None else ticks
        st = _RunState(stop_at=self.tick + n)
        start_tick = self.tick
        spikes_before = self.spike_total
        pop_before = self.pop_spike_counts.copy()
        self._stop = False
        self._running = True
        t0 = time.perf_counter()
        try:
            if sink is not None:
                sink(StatusFrame(tick=self.tick,
                                 state="paused" if self.paused else "running"))
            if self.cfg.workers == 1:
                self._run_inline(st, commands, sink)
            else:
                self._run_threaded(st, commands, sink)
        finally:
            self._running = False
        wall = time.perf_counter() - t0
        if st.error is not None:
            if sink is not None:
                state = "diverged" if isinstance(st.error, DivergedError) else "stopped"
                sink(StatusFrame(tick=self.tick, state=state, detail=str(st.error)))
            raise st.error
        if sink is not None:
            sink(StatusFrame(tick=self.tick, state="stopped"))

        ticks_run = self.tick - start_tick
        seconds = ticks_run * self.dt / 1000.0
        rates = {}
        for i, name in enumerate(self.net.pop_names):
            lo, hi = self.net.pop_slice(name)
            count = int(self.pop_spike_counts[i] - pop_before[i])
            rates[name] = count / (hi - lo) / seconds if seconds > 0 else 0.0
        return RunSummary(
            ticks=ticks_run,
            total_spikes=self.spike_total - spikes_before,
            pop_rates=rates,
            wall_time_s=wall,
            seed=self.seed,
            config_hash=config_hash(self.net.config),
            final_tick=self.tick,
        )

    def _run_inline(self, st: _RunState, commands, sink) -> None:
        self._use_partitions(1)
        n = self.net.n_neurons
        try:
            while True:
                self._boundary(st, commands, sink)
                if st.done:
                    return
                t = st.in_flight
                self._phase_a(0, n, t, 0)
                self._phase_b(t, 0, n)
        except BaseException as e:
            st.error = e
            st.done = True

    def _run_threaded(self, st: _RunState, commands, sink) -> None:
        workers = self.cfg.workers
        self._use_partitions(workers)
        bounds = self._part_bounds

        def boundary_action():
            try:
                self._boundary(st, commands, sink)
            except BaseException as e:
                st.error = e
                st.done = True

        b1 = threading.Barrier(workers + 1, action=boundary_action)
        b2 = threading.Barrier(workers + 1)

        def lane(p: int, lo: int, hi: int) -> None:
            try:
                while True:
                    b1.wait()
                    if st.done:
                        return
                    t = st.in_flight
                    self._phase_a(lo, hi, t, p)
                    b2.wait()
                    self._phase_b(t, lo, hi)
            except threading.BrokenBarrierError:
                return
            except BaseException as e:
                st.error = e
                st.done = True
                b1.abort()
                b2.abort()

        threads = [threading.Thread(target=lane, args=(p, lo, hi), daemon=True)
                   for p, (lo, hi) in enumerate(bounds)]
        for th in threads:
            th.start()
        try:
            while True:
                b1.wait()
                if st.done:
                    break
                b2.wait()
        except threading.BrokenBarrierError:
            pass
        for th in threads:
            th.join()

    # -- snapshots -------------------------------------------------------------

    def snapshot(self) -> bytes:
        """Serialize the full world state at the current tick boundary."""
        from . import snapshot as snap
        return snap.encode_snapshot(self)

    @classmethod
    def restore(cls, net: BuiltNetwork, frame: bytes,
                cfg: EngineConfig = EngineConfig()) -> "Engine":
        """Rebuild a world from a snapshot frame; the topology is not stored
        in the frame, so the same BuiltNetwork must be supplied."""
        from . import snapshot as snap
        eng = cls(net, cfg)
        snap.apply_snapshot(eng, frame)
        return eng

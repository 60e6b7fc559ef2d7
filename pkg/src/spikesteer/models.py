"""Neuron, synapse, and stimulus dynamics as pure scalar step functions.

Everything here is stateless: callers pass explicit state records and get new
ones back. The vectorized kernels in the engine implement the same arithmetic
in the same operation order, so a scalar loop over these functions is a valid
reference for the parallel engine (spike ticks match exactly).

Units: mV, ms, nA, MOhm, nF. With these, r_m * c_m is directly a time
constant in ms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

CONSTANT_CURRENT = "constant-current"
POISSON_SPIKES = "poisson-spikes"

NEVER_FIRES = math.inf


class NumericError(ValueError):
    """A state or input value left the numeric domain (NaN/inf): the
    simulation producing it has diverged."""


@dataclass(frozen=True, slots=True)
class LifParams:
    """Leaky integrate-and-fire parameters.

    tau_m is derived (r_m * c_m) rather than stored so that steering either
    factor mid-run changes the time constant consistently.
    """

    v_rest: float = -65.0   # mV
    v_thresh: float = -50.0  # mV
    v_reset: float = -65.0  # mV
    c_m: float = 1.0        # nF
    r_m: float = 10.0       # MOhm
    t_refrac: float = 0.0   # ms

    @property
    def tau_m(self) -> float:
        return self.r_m * self.c_m

    def validate(self) -> list[str]:
        out = []
        if not all(math.isfinite(x) for x in
                   (self.v_rest, self.v_thresh, self.v_reset, self.c_m, self.r_m, self.t_refrac)):
            out.append("lif params must be finite")
        if self.c_m <= 0:
            out.append("c_m must be > 0")
        if self.r_m <= 0:
            out.append("r_m must be > 0")
        if self.t_refrac < 0:
            out.append("t_refrac must be >= 0")
        if not (self.v_reset <= self.v_rest < self.v_thresh):
            out.append("require v_reset <= v_rest < v_thresh")
        return out


@dataclass(frozen=True, slots=True)
class LifState:
    v: float                     # mV
    refrac_remaining: float = 0.0  # ms


@dataclass(frozen=True, slots=True)
class IzhParams:
    """Two-variable quadratic neuron model coefficients (regular-spiking
    defaults)."""

    a: float = 0.02
    b: float = 0.2
    c: float = -65.0
    d: float = 8.0
    v_peak: float = 30.0  # mV

    def validate(self) -> list[str]:
        out = []
        if not all(math.isfinite(x) for x in (self.a, self.b, self.c, self.d, self.v_peak)):
            out.append("izhikevich params must be finite")
        if self.a <= 0:
            out.append("a must be > 0")
        return out


@dataclass(frozen=True, slots=True)
class IzhState:
    v: float  # mV
    u: float  # recovery variable


@dataclass(frozen=True, slots=True)
class SynapseParams:
    tau_syn: float = 5.0  # ms

    def validate(self) -> list[str]:
        if not (math.isfinite(self.tau_syn) and self.tau_syn > 0):
            return ["tau_syn must be > 0"]
        return []


@dataclass(frozen=True, slots=True)
class InputSpec:
    """Steerable external stimulus for a neuron.

    constant-current: amplitude is a direct current (nA) added to the
    membrane input every tick.
    poisson-spikes: events arrive at `rate` per second; each event adds
    `amplitude` (nA) to the neuron's synaptic current, like an incoming
    spike of that weight.
    """

    kind: str = CONSTANT_CURRENT
    amplitude: float = 0.0
    rate: float = 0.0  # events/s, poisson only

    def validate(self) -> list[str]:
        out = []
        if self.kind not in (CONSTANT_CURRENT, POISSON_SPIKES):
            out.append(f"unknown input kind {self.kind!r}")
        if not (math.isfinite(self.amplitude) and math.isfinite(self.rate)):
            out.append("input amplitude and rate must be finite")
        elif self.rate < 0:
            out.append("input rate must be >= 0")
        return out


def _check_finite(*values: float) -> None:
    for x in values:
        if not math.isfinite(x):
            raise NumericError(f"non-finite value {x!r} (diverged simulation)")


def lif_step(state: LifState, params: LifParams, i_in: float, dt: float) -> tuple[LifState, bool]:
    """Advance one LIF neuron by one forward-Euler step of size dt.

    Refractory neurons stay clamped at v_reset and ignore input. A state at
    or above threshold fires by definition (this only arises from initial
    conditions; post-spike resets keep v below threshold). Otherwise the
    membrane is integrated and a spike is detected at >= v_thresh after the
    update, with no sub-step interpolation.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    _check_finite(state.v, state.refrac_remaining, i_in)

    if state.refrac_remaining > 0.0:
        remaining = state.refrac_remaining - dt
        if remaining < 0.0:
            remaining = 0.0
        return LifState(v=params.v_reset, refrac_remaining=remaining), False

    v = state.v
    if v >= params.v_thresh:
        return LifState(v=params.v_reset, refrac_remaining=params.t_refrac), True

    tau_m = params.r_m * params.c_m
    v = v + (dt / tau_m) * (-(v - params.v_rest) + params.r_m * i_in)
    _check_finite(v)
    if v >= params.v_thresh:
        return LifState(v=params.v_reset, refrac_remaining=params.t_refrac), True
    return LifState(v=v, refrac_remaining=0.0), False


def izh_step(state: IzhState, params: IzhParams, i_in: float, dt: float) -> tuple[IzhState, bool]:
    """Advance one quadratic two-variable neuron by one Euler step.

    v' = 0.04 v^2 + 5 v + 140 - u + I, u' = a (b v - u), with u updated from
    the pre-update v. At v >= v_peak the cutoff applies: v <- c, u <- u + d.
    A state already at or past v_peak on entry resets without integrating, so
    the cutoff never integrates the unbounded quadratic.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    _check_finite(state.v, state.u, i_in)

    v, u = state.v, state.u
    if v >= params.v_peak:
        return IzhState(v=params.c, u=u + params.d), True

    # 0.04*(v*v), not (0.04*v)*v: keeps the canonical rest state an exact
    # fixed point in float64
    v_new = v + dt * (0.04 * (v * v) + 5.0 * v + 140.0 - u + i_in)
    u_new = u + dt * (params.a * (params.b * v - u))
    _check_finite(v_new, u_new)
    if v_new >= params.v_peak:
        return IzhState(v=params.c, u=u_new + params.d), True
    return IzhState(v=v_new, u=u_new), False


def syn_step(s: float, params: SynapseParams, dt: float, arriving_weight_sum: float) -> float:
    """Exponential-decay synaptic current: decay s over dt, then add the
    weights of spikes arriving this step."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    _check_finite(s, arriving_weight_sum)
    return s * math.exp(-dt / params.tau_syn) + arriving_weight_sum


def poisson_step(spec: InputSpec, dt: float, rng) -> bool:
    """Draw one Bernoulli event from a Poisson source over a window dt.

    Spike probability is p = 1 - exp(-rate * dt / 1000) (rate in events/s,
    dt in ms). Draws exactly one uniform variate from rng per call, so a
    fixed seed gives a fixed spike sequence.
    """
    if spec.kind != POISSON_SPIKES:
        raise ValueError("poisson_step requires a poisson-spikes input spec")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    p = -math.expm1(-spec.rate * dt / 1000.0)
    return rng.random() < p


def lif_analytic_isi(params: LifParams, i_const: float) -> float:
    """Closed-form interspike interval of a LIF neuron under constant current.

    Solves the linear membrane ODE from v_reset to v_thresh:

        T = t_refrac + tau_m * ln( (D - (v_reset - v_rest)) /
                                   (D - (v_thresh - v_rest)) ),  D = r_m * I.

    Returns NEVER_FIRES (inf) when the drive cannot reach threshold
    (D <= v_thresh - v_rest). Used as the oracle for the Euler engine.
    """
    drive = params.r_m * i_const
    gap_thresh = params.v_thresh - params.v_rest
    gap_reset = params.v_reset - params.v_rest
    if drive <= gap_thresh:
        return NEVER_FIRES
    return params.t_refrac + params.tau_m * math.log((drive - gap_reset) / (drive - gap_thresh))

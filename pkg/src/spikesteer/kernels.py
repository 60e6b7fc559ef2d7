"""Compiled per-tick kernels.

phase_a advances every neuron in one contiguous partition; phase_b scatters
this tick's spikes into the delay ring for one contiguous target range. Both
release the GIL so worker threads scale across cores. All floating-point
arithmetic here mirrors models.py operation-for-operation, which is what makes
a scalar loop over the models functions an exact oracle for the engine.

The uniform generator mirrors rng.uniform bit-for-bit; keep them in sync.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 2.0 ** -53

KIND_CONSTANT = 0
KIND_POISSON = 1


@njit(cache=True, nogil=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True, inline="always")
def _uniform(seed, neuron, tick):
    base = _mix64(seed ^ _mix64((np.uint64(neuron) + _ONE) * _GOLD))
    h = _mix64(base + np.uint64(tick) * _GOLD)
    return np.float64(h >> _S11) * _INV53


@njit(cache=True, nogil=True)
def phase_a(lo, hi, tick, dt, seed,
            model_tag, v, u, refrac, syn,
            ring, slot,
            v_rest, v_thresh, v_reset, r_m, c_m, t_refrac,
            a, b, c, d, v_peak,
            syn_decay, in_kind, in_amp, p_spike,
            spike_out):
    """Advance neurons [lo, hi) by one tick.

    Consumes (and zeroes) this tick's delay-ring slot, applies external input,
    decays synapses, and steps each neuron. Spiking neuron indices are written
    to spike_out[lo:lo+count] in ascending order. Returns (count, first bad
    index or -1 if every updated value stayed finite).
    """
    count = 0
    first_bad = -1
    for i in range(lo, hi):
        arriving = ring[slot, i]
        ring[slot, i] = 0.0
        if in_kind[i] == KIND_POISSON:
            if _uniform(seed, i, tick) < p_spike[i]:
                arriving += in_amp[i]
        s = syn[i] * syn_decay[i] + arriving
        syn[i] = s
        i_in = s
        if in_kind[i] == KIND_CONSTANT:
            i_in = s + in_amp[i]

        spiked = False
        if model_tag[i] == 0:  # LIF
            if refrac[i] > 0.0:
                v[i] = v_reset[i]
                rem = refrac[i] - dt
                refrac[i] = rem if rem > 0.0 else 0.0
            elif v[i] >= v_thresh[i]:
                spiked = True
                v[i] = v_reset[i]
                refrac[i] = t_refrac[i]
            else:
                tau = r_m[i] * c_m[i]
                vn = v[i] + (dt / tau) * (-(v[i] - v_rest[i]) + r_m[i] * i_in)
                if vn >= v_thresh[i]:
                    spiked = True
                    v[i] = v_reset[i]
                    refrac[i] = t_refrac[i]
                else:
                    v[i] = vn
        else:  # Izhikevich
            vv = v[i]
            if vv >= v_peak[i]:
                spiked = True
                v[i] = c[i]
                u[i] = u[i] + d[i]
            else:
                vn = vv + dt * (0.04 * (vv * vv) + 5.0 * vv + 140.0 - u[i] + i_in)
                un = u[i] + dt * (a[i] * (b[i] * vv - u[i]))
                if vn >= v_peak[i]:
                    spiked = True
                    v[i] = c[i]
                    u[i] = un + d[i]
                else:
                    v[i] = vn
                    u[i] = un

        if spiked:
            spike_out[lo + count] = i
            count += 1
        if first_bad < 0 and not (
            np.isfinite(v[i]) and np.isfinite(u[i]) and np.isfinite(syn[i])
        ):
            first_bad = i
    return count, first_bad


@njit(cache=True, nogil=True)
def phase_b(tick, ring, spike_out, part_los, part_counts,
            indptr, edge_target, edge_weight, edge_delay,
            tgt_lo, tgt_hi):
    """Accumulate this tick's spikes into future delay-ring slots, restricted
    to targets in [tgt_lo, tgt_hi).

    Iteration order is source neuron ascending (partitions are contiguous and
    ascending), then CSR edge order. Each target cell is owned by exactly one
    caller, so running one call per disjoint target range in parallel performs
    the same additions in the same order as a single serial pass.
    """
    n_slots = ring.shape[0]
    for p in range(part_los.shape[0]):
        base = part_los[p]
        for k in range(part_counts[p]):
            src = spike_out[base + k]
            for e in range(indptr[src], indptr[src + 1]):
                t = edge_target[e]
                if tgt_lo <= t < tgt_hi:
                    ring[(tick + edge_delay[e]) % n_slots, t] += edge_weight[e]


@njit(cache=True, nogil=True)
def poisson_counter_draws(seed, neuron, ticks, p):
    """Spike count over `ticks` draws of one neuron's counter stream (test
    support for the per-neuron generator's statistics)."""
    n = 0
    for t in range(ticks):
        if _uniform(seed, neuron, t) < p:
            n += 1
    return n

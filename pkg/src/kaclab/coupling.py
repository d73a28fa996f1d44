"""Single-particle limit processes coupled to the n-particle system.

The limit process is a jump process whose time-t marginal is the kinetic
solution f_t.  An array of such processes is driven by the *same* Poisson
randomness as the particle system: whenever particles (i, j) collide, process
i jumps against an f_t-distributed partner produced by the comonotone
transport map below, evaluated at the collision's continuous label.  That
map turns the label into a rank, so the pair (partner velocity, mapped value)
is an optimal coupling of the leave-one-out empirical measure and f_t.

The independent-copy construction replicates each process with an auxiliary
Poisson source so that processes in a block of size k become mutually
independent; the expected squared gap then scales like k/n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinetic import KineticSolution
from .measures import QuantileFn
from .model import KAC, THERMOSTAT, TWO_PI, ModelParams, RandomStream, next_event
from .wasserstein import w2_empirical_quantile


def transport_map(z: np.ndarray, i: int, xi: float, quantile: QuantileFn) -> float:
    """Comonotone transport of the label ``xi`` to an f_t quantile.

    ``xi`` lives in [0, n) with integer part selecting a partner distinct
    from ``i`` (0-based).  The partner's rank among the n-1 values ``z[j != i]``
    (ties broken by index) plus the fractional part of ``xi`` give a uniform
    rank u, and the result is quantile(u).  Averaged over uniform ``xi``, the
    squared gap to the partner equals the squared W2 distance between the
    leave-one-out empirical measure and f_t.
    """
    n = len(z)
    p = int(xi)
    if p == i:
        raise ValueError(f"label {xi} falls in the forbidden block of particle {i}")
    if not 0 <= p < n:
        raise ValueError(f"label {xi} out of range for n={n}")
    zp = z[p]
    rank = int(np.count_nonzero(z < zp)) + int(np.count_nonzero(z[:p] == zp))
    if z[i] < zp or (z[i] == zp and i < p):
        rank -= 1
    u = (rank + (xi - p)) / (n - 1)
    return float(quantile(u))


@dataclass
class CoupledTrajectory:
    """Particle array V, coupled limit-process array Z, and diagnostics.

    ``h`` is the coordinate-averaged squared gap (1/n) sum (V_i - Z_i)^2,
    ``a`` the leave-one-out empirical-vs-f_t squared W2 of the Z array, and
    ``chaos_w2sq`` the squared W2 between the V empirical measure and f_t.
    """

    v: np.ndarray
    z: np.ndarray
    time: float
    times: np.ndarray
    h: np.ndarray
    a: np.ndarray
    chaos_w2sq: np.ndarray


def simulate_coupled(
    v0: np.ndarray,
    z0: np.ndarray,
    params: ModelParams,
    solution: KineticSolution,
    t_end: float,
    stream: RandomStream,
    sample_times=None,
) -> CoupledTrajectory:
    """Evolve particles and coupled limit processes on shared randomness.

    Every event is applied to both arrays: a collision of (i, j) rotates
    (V_i, V_j) together, while Z_i and Z_j each jump against the transported
    quantile of the *other* side's label (the second member sees the angle
    with flipped sine sign).  Reservoir events share (theta, w) exactly.
    """
    if t_end > solution.horizon + 1e-9:
        raise ValueError("t_end beyond solution horizon")
    v = np.array(v0, dtype=float)
    z = np.array(z0, dtype=float)
    if v.shape != z.shape:
        raise ValueError("V and Z must have equal length")
    n = len(v)
    samples = np.asarray([] if sample_times is None else sample_times, dtype=float)
    log_t, log_h, log_a, log_c = [], [], [], []
    si = 0
    clock = 0.0

    def record(ts):
        qf = solution.quantile_fn(ts)
        d = v - z
        log_t.append(ts)
        log_h.append(float(d @ d) / n)
        log_a.append(w2_empirical_quantile(z[1:], qf))
        log_c.append(w2_empirical_quantile(v, qf))

    while True:
        ev = next_event(params, n, clock, stream)
        stop = ev.time > t_end
        horizon = t_end if stop else ev.time
        while si < len(samples) and samples[si] <= horizon:
            record(samples[si])
            si += 1
        if stop:
            break
        c = math.cos(ev.theta)
        s = math.sin(ev.theta)
        if ev.kind == KAC:
            i, j = ev.pair()
            qf = solution.quantile_fn(ev.time if ev.time <= t_end else t_end)
            fi = transport_map(z, i, ev.zeta, qf)
            fj = transport_map(z, j, ev.xi, qf)
            vi, vj = v[i], v[j]
            v[i] = vi * c - vj * s
            v[j] = vi * s + vj * c
            z[i] = z[i] * c - fi * s
            z[j] = z[j] * c + fj * s
        else:
            i = ev.index
            v[i] = v[i] * c - ev.w * s
            z[i] = z[i] * c - ev.w * s
        clock = ev.time
    return CoupledTrajectory(
        v, z, t_end, np.asarray(log_t), np.asarray(log_h), np.asarray(log_a),
        np.asarray(log_c),
    )


@dataclass
class DecoupledTrajectory:
    """Coupled limit processes Z and their independent copies Z-tilde.

    Copies are organized in ``n_blocks`` disjoint blocks of size k; within a
    block the copies are mutually independent.  ``h_dec`` is the mean squared
    gap over all copied coordinates.
    """

    z: np.ndarray
    z_tilde: np.ndarray
    k: int
    n_blocks: int
    times: np.ndarray
    h_dec: np.ndarray


def simulate_independent_copies(
    z0: np.ndarray,
    k: int,
    params: ModelParams,
    solution: KineticSolution,
    t_end: float,
    stream: RandomStream,
    tilde_stream: RandomStream,
    n_blocks: int = 1,
    sample_times=None,
) -> DecoupledTrajectory:
    """Drive Z and per-block independent copies from split Poisson sources.

    A copy consumes exactly the events of its original except second-member
    collision jumps whose partner label falls inside the copy's own block;
    those are replaced by draws from the independent source ``tilde_stream``.
    With k = 1 no event is ever replaced and the copies coincide with the
    originals.
    """
    n = len(z0)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n_blocks * k > n:
        raise ValueError("blocks exceed the particle count")
    if t_end > solution.horizon + 1e-9:
        raise ValueError("t_end beyond solution horizon")
    z = np.array(z0, dtype=float)
    nbk = n_blocks * k
    zt = z[:nbk].copy()
    rate_tilde = n_blocks * params.lam * k * (k - 1) / (n - 1)
    samples = np.asarray([] if sample_times is None else sample_times, dtype=float)
    log_t, log_h = [], []
    si = 0
    clock = 0.0
    t_tilde = (
        tilde_stream.rng.standard_exponential() / rate_tilde
        if rate_tilde > 0
        else math.inf
    )
    pending = next_event(params, n, clock, stream)

    def record(ts):
        d = z[:nbk] - zt
        log_t.append(ts)
        log_h.append(float(d @ d) / nbk)

    while True:
        t_next = min(pending.time, t_tilde)
        stop = t_next > t_end
        horizon = t_end if stop else t_next
        while si < len(samples) and samples[si] <= horizon:
            record(samples[si])
            si += 1
        if stop:
            break
        if t_tilde < pending.time:
            # replacement jump from the independent source
            rng = tilde_stream.rng
            b = int(rng.random() * n_blocks)
            jt = b * k + int(rng.random() * k)
            xraw = b * k + rng.random() * (k - 1)
            xi = xraw if xraw < jt else xraw + 1.0
            theta = rng.random() * TWO_PI
            qf = solution.quantile_fn(t_tilde)
            f = transport_map(z, jt, xi, qf)
            zt[jt] = zt[jt] * math.cos(theta) + f * math.sin(theta)
            t_tilde += rng.standard_exponential() / rate_tilde
            clock = t_next
            continue
        ev = pending
        c = math.cos(ev.theta)
        s = math.sin(ev.theta)
        if ev.kind == KAC:
            i, j = ev.pair()
            qf = solution.quantile_fn(ev.time)
            fi = transport_map(z, i, ev.zeta, qf)
            fj = transport_map(z, j, ev.xi, qf)
            z[i] = z[i] * c - fi * s
            z[j] = z[j] * c + fj * s
            if i < nbk:
                zt[i] = zt[i] * c - fi * s
            if j < nbk:
                block = j // k
                if not (block * k <= ev.xi < (block + 1) * k):
                    zt[j] = zt[j] * c + fj * s
        else:
            i = ev.index
            z[i] = z[i] * c - ev.w * s
            if i < nbk:
                zt[i] = zt[i] * c - ev.w * s
        clock = ev.time
        pending = next_event(params, n, clock, stream)
    return DecoupledTrajectory(
        z, zt, k, n_blocks, np.asarray(log_t), np.asarray(log_h)
    )


def simulate_boltzmann(
    z0: float,
    params: ModelParams,
    solution: KineticSolution,
    t_end: float,
    stream: RandomStream,
    sample_times=None,
) -> np.ndarray:
    """Standalone single-particle limit process; marginal law at t is f_t.

    Collision-type jumps fire at rate 2*lam with an f_t-quantile partner;
    reservoir jumps fire at rate mu.  Returns the state at each requested
    sample time (or just the final state when none are requested).
    """
    if t_end > solution.horizon + 1e-9:
        raise ValueError("t_end beyond solution horizon")
    rng = stream.rng
    lam, mu = params.lam, params.mu
    rate = 2.0 * lam + mu
    p_kac = 2.0 * lam / rate
    sqrt_t = math.sqrt(params.temperature)
    samples = np.asarray([] if sample_times is None else sample_times, dtype=float)
    out = np.empty(len(samples))
    si = 0
    z = float(z0)
    clock = 0.0
    while True:
        t_next = clock + rng.standard_exponential() / rate
        stop = t_next > t_end
        horizon = t_end if stop else t_next
        while si < len(samples) and samples[si] <= horizon:
            out[si] = z
            si += 1
        if stop:
            break
        theta = rng.random() * TWO_PI
        if rng.random() < p_kac:
            partner = float(solution.quantile_fn(t_next)(rng.random()))
        else:
            partner = rng.standard_normal() * sqrt_t
        z = z * math.cos(theta) - partner * math.sin(theta)
        clock = t_next
    return out if len(samples) else np.array([z])

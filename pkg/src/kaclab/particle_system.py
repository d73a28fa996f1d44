"""Event-driven simulation of the thermostated n-particle system.

A trajectory is piecewise constant between jumps, so observables are sampled
with "state as of the last event" semantics and no time-grid bias.  The
synchronous two-copy coupling drives both copies with the identical event
sequence (including the reservoir draws w), which makes the squared-gap
average contract exactly like exp(-mu*t/2) in expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measures import Measure1D
from .model import (
    KAC,
    THERMOSTAT,
    TWO_PI,
    EventRecord,
    ModelParams,
    RandomStream,
    next_event,
)


@dataclass
class VelocityEnsemble:
    """State of the n-particle system at one instant."""

    time: float
    velocities: np.ndarray

    def __post_init__(self):
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.velocities.ndim != 1 or len(self.velocities) < 2:
            raise ValueError("need a 1-d array of at least 2 velocities")
        if not np.all(np.isfinite(self.velocities)):
            raise ValueError("velocities must be finite")

    @property
    def n(self) -> int:
        return len(self.velocities)

    def copy(self) -> "VelocityEnsemble":
        return VelocityEnsemble(self.time, self.velocities.copy())


@dataclass
class PairTrajectory:
    """Two synchronously coupled copies plus the squared-gap log h(t)."""

    ensemble_a: VelocityEnsemble
    ensemble_b: VelocityEnsemble
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    h: np.ndarray = field(default_factory=lambda: np.empty(0))


def apply_event(ensemble: VelocityEnsemble, event: EventRecord) -> VelocityEnsemble:
    """Apply one jump and advance the clock; other coordinates unchanged."""
    if event.time < ensemble.time:
        raise ValueError(f"non-monotone time: event {event.time} < {ensemble.time}")
    out = ensemble.copy()
    _apply_inplace(out.velocities, event)
    out.time = event.time
    return out


def _apply_inplace(v: np.ndarray, event: EventRecord) -> None:
    c = math.cos(event.theta)
    s = math.sin(event.theta)
    if event.kind == KAC:
        i, j = event.pair()
        if not (0 <= i < len(v) and 0 <= j < len(v)) or i == j:
            raise IndexError(f"bad collision pair ({i}, {j}) for n={len(v)}")
        vi, vj = v[i], v[j]
        v[i] = vi * c - vj * s
        v[j] = vi * s + vj * c
    elif event.kind == THERMOSTAT:
        i = event.index
        if not 0 <= i < len(v):
            raise IndexError(f"thermostat index {i} out of range for n={len(v)}")
        v[i] = v[i] * c - event.w * s
    else:
        raise ValueError(f"unknown event kind {event.kind!r}")


def simulate(
    initial: VelocityEnsemble,
    params: ModelParams,
    t_end: float,
    stream: RandomStream,
    sample_times=None,
    observer=None,
) -> VelocityEnsemble:
    """Run the jump chain until the next event would exceed ``t_end``.

    ``observer(t, velocities)`` is called once per requested sample time with
    the state as of the last event before that time (velocities are a view;
    copy if kept).
    """
    if t_end < initial.time:
        raise ValueError("t_end before initial time")
    state = initial.copy()
    v = state.velocities
    n = state.n
    samples = [] if sample_times is None else list(sample_times)
    si = 0
    clock = state.time
    while True:
        ev = next_event(params, n, clock, stream)
        stop = ev.time > t_end
        horizon = t_end if stop else ev.time
        while si < len(samples) and samples[si] <= horizon:
            if observer is not None:
                observer(samples[si], v)
            si += 1
        if stop:
            break
        _apply_inplace(v, ev)
        clock = ev.time
    state.time = t_end
    return state


def simulate_synchronous_pair(
    a0: VelocityEnsemble,
    b0: VelocityEnsemble,
    params: ModelParams,
    t_end: float,
    stream: RandomStream,
    sample_times=None,
) -> PairTrajectory:
    """Drive two copies with the identical event sequence.

    Both copies see the same times, kinds, pair labels, angles, and reservoir
    velocities; sharing w makes the reservoir contribution to the squared gap
    contract by exactly cos(theta)**2 per event.
    """
    if a0.n != b0.n:
        raise ValueError("ensembles must have equal particle count")
    if a0.time != b0.time:
        raise ValueError("ensembles must share the same time")
    va = a0.velocities.copy()
    vb = b0.velocities.copy()
    n = a0.n
    samples = np.asarray([] if sample_times is None else sample_times, dtype=float)
    log_t, log_h = [], []
    si = 0
    clock = a0.time

    def h_now():
        d = va - vb
        return float(d @ d) / n

    while True:
        ev = next_event(params, n, clock, stream)
        stop = ev.time > t_end
        horizon = t_end if stop else ev.time
        while si < len(samples) and samples[si] <= horizon:
            log_t.append(samples[si])
            log_h.append(h_now())
            si += 1
        if stop:
            break
        _apply_inplace(va, ev)
        _apply_inplace(vb, ev)
        clock = ev.time
    return PairTrajectory(
        VelocityEnsemble(t_end, va),
        VelocityEnsemble(t_end, vb),
        np.asarray(log_t),
        np.asarray(log_h),
    )


def empirical_measure(ensemble: VelocityEnsemble) -> Measure1D:
    """Equal-weight atoms at the current velocities; total mass 1."""
    return Measure1D.from_samples(ensemble.velocities)


def moment(ensemble: VelocityEnsemble, r: float) -> float:
    """(1/n) * sum |v_i|**r."""
    if r < 0:
        raise ValueError("moment order must be nonnegative")
    return float(np.mean(np.abs(ensemble.velocities) ** r))


# -- initial-condition menu -----------------------------------------------

def initial_gaussian(n, variance, rng, t0=0.0):
    return VelocityEnsemble(t0, rng.standard_normal(n) * math.sqrt(variance))


def initial_two_point(n, level, rng, t0=0.0):
    signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return VelocityEnsemble(t0, level * signs)


def initial_uniform(n, low, high, rng, t0=0.0):
    return VelocityEnsemble(t0, rng.uniform(low, high, n))


def initial_from_file(path, t0=0.0):
    """Ensemble snapshot: CSV with header ``v``, one velocity per row."""
    raw = np.genfromtxt(path, delimiter=",", names=True)
    if raw.dtype.names is None or "v" not in raw.dtype.names:
        raise ValueError(f"{path}: expected a CSV with header 'v'")
    return VelocityEnsemble(t0, np.atleast_1d(raw["v"]).astype(float))


def save_ensemble(path, ensemble: VelocityEnsemble) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("v\n")
        for v in ensemble.velocities:
            fh.write(f"{v:.12g}\n")

"""Model parameters, collision rules, and the random event layer.

Two kinds of jumps drive every simulation in this package:

* pair collisions: two distinct particles (i, j) rotate their velocities by a
  uniform random angle, which preserves v_i**2 + v_j**2 exactly;
* reservoir interactions: a single particle is rotated against a Gaussian
  velocity w drawn from an infinite reservoir at temperature T.

Pair collisions fire at total rate ``lam * n`` and reservoir interactions at
``mu * n``.  Pair events carry *continuous* labels (xi, zeta) in [0, n)^2
whose integer parts select the colliding particles; the fractional parts are
retained because the transport map in :mod:`kaclab.coupling` consumes them.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

KAC = "kac"
THERMOSTAT = "thermostat"


@dataclass(frozen=True)
class ModelParams:
    """Collision rate ``lam``, reservoir rate ``mu``, reservoir temperature."""

    lam: float
    mu: float
    temperature: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def total_rate_per_particle(self) -> float:
        return self.lam + self.mu


@dataclass(frozen=True)
class EventRecord:
    """One jump of the event-driven dynamics.

    For ``kind == KAC`` the continuous labels ``xi``/``zeta`` encode the
    (ordered) colliding pair through their integer parts; ``int(xi) != int(zeta)``
    always holds.  For ``kind == THERMOSTAT``, ``index`` is the 0-based particle
    index and ``w`` the reservoir velocity.
    """

    time: float
    kind: str
    theta: float
    xi: float = math.nan
    zeta: float = math.nan
    index: int = -1
    w: float = math.nan

    def pair(self) -> tuple[int, int]:
        """0-based (i, j) for a pair-collision event."""
        return int(self.xi), int(self.zeta)


def derive_stream_id(seed: int, experiment: str, replica: int) -> int:
    """Stable stream id so adding replicas never perturbs existing ones."""
    digest = hashlib.blake2b(
        f"{seed}:{experiment}:{replica}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass
class RandomStream:
    """Reproducible random source scoped to one replica or particle.

    Identical ``(seed, stream_id)`` pairs yield bit-identical draw sequences;
    distinct ids give independent streams.  A stream must not be shared
    between concurrent consumers.
    """

    seed: int
    stream_id: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.rng = np.random.default_rng(ss)

    @classmethod
    def for_replica(cls, seed: int, experiment: str, replica: int) -> "RandomStream":
        return cls(seed, derive_stream_id(seed, experiment, replica))


def kac_rotate(v: float, v_star: float, theta: float) -> tuple[float, float]:
    """Pair-collision rotation; preserves v**2 + v_star**2 up to rounding."""
    c = math.cos(theta)
    s = math.sin(theta)
    return v * c - v_star * s, v * s + v_star * c


def thermostat_rotate(v: float, w: float, theta: float) -> float:
    """Reservoir interaction: rotate v against the reservoir velocity w."""
    return v * math.cos(theta) - w * math.sin(theta)


def next_event(
    params: ModelParams, n: int, clock: float, stream: RandomStream
) -> EventRecord:
    """Draw the next jump after time ``clock`` for an ``n``-particle system.

    Waiting times are exponential with total rate ``(lam + mu) * n``; the
    event is a pair collision with probability ``lam / (lam + mu)``.  Pair
    labels are uniform on [0, n)^2 conditioned on distinct integer parts
    (the second label is drawn on n-1 cells and shifted past the first, which
    avoids rejection).  Reservoir velocities are exact N(0, T) draws.
    """
    if n < 2:
        raise ValueError(f"need at least 2 particles, got n={n}")
    rng = stream.rng
    rate = params.total_rate_per_particle * n
    time = clock + rng.standard_exponential() / rate
    theta = rng.random() * TWO_PI
    if rng.random() < params.lam / (params.lam + params.mu):
        xi = rng.random() * n
        zraw = rng.random() * (n - 1)
        zeta = zraw if zraw < int(xi) else zraw + 1.0
        return EventRecord(time=time, kind=KAC, theta=theta, xi=xi, zeta=zeta)
    index = int(rng.random() * n)
    w = rng.standard_normal() * math.sqrt(params.temperature)
    return EventRecord(time=time, kind=THERMOSTAT, theta=theta, index=index, w=w)

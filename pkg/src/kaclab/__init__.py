"""Thermostated Kac particle system and its kinetic limit.

Jump-process simulation of the n-particle dynamics, a spectral solver for the
limiting kinetic equation, coupling constructions linking the two, and
Wasserstein-2 diagnostics for contraction, decoupling, and chaos rates.
"""

from .measures import Measure1D, QuantileFn
from .model import EventRecord, ModelParams, RandomStream
from .particle_system import VelocityEnsemble, simulate, simulate_synchronous_pair
from .kinetic import (
    KineticSolution,
    SolverAbort,
    b_operator,
    moment_bound,
    second_moment_exact,
    solve,
    wild_iterate,
)
from .coupling import (
    simulate_boltzmann,
    simulate_coupled,
    simulate_independent_copies,
    transport_map,
)
from .wasserstein import (
    W2Report,
    chaos_metric,
    decomposition_check,
    epsilon_k,
    w2_empirical_empirical,
    w2_empirical_quantile,
)

__version__ = "0.1.0"

__all__ = [
    "EventRecord",
    "KineticSolution",
    "Measure1D",
    "ModelParams",
    "QuantileFn",
    "RandomStream",
    "SolverAbort",
    "VelocityEnsemble",
    "W2Report",
    "b_operator",
    "chaos_metric",
    "decomposition_check",
    "epsilon_k",
    "moment_bound",
    "second_moment_exact",
    "simulate",
    "simulate_boltzmann",
    "simulate_coupled",
    "simulate_independent_copies",
    "simulate_synchronous_pair",
    "solve",
    "transport_map",
    "w2_empirical_empirical",
    "w2_empirical_quantile",
    "wild_iterate",
]

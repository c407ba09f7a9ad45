"""Brownian motion on the Heisenberg group and a non-Markovian coupling of two copies."""

from .coupling import (
    CoupledTrajectory,
    CouplingConfig,
    CouplingOutcome,
    PreconditionError,
    couple,
    exit_time,
    simulate_coupling,
    synchronous_couple,
)
from .heis_core import (
    IDENTITY,
    CCSolverConfig,
    GroupPoint,
    PlanarRotation,
    cc_distance,
    dilate,
    inverse,
    multiply,
    mu,
    nu,
    reduce_to_common_b1,
    rho,
)
from .rng import SeedSpec, Stream

__version__ = "0.1.0"

__all__ = [
    "CoupledTrajectory",
    "CouplingConfig",
    "CouplingOutcome",
    "PreconditionError",
    "couple",
    "exit_time",
    "simulate_coupling",
    "synchronous_couple",
    "IDENTITY",
    "CCSolverConfig",
    "GroupPoint",
    "PlanarRotation",
    "cc_distance",
    "dilate",
    "inverse",
    "multiply",
    "mu",
    "nu",
    "reduce_to_common_b1",
    "rho",
    "SeedSpec",
    "Stream",
]

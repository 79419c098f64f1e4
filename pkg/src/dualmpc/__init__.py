"""Dual-level MPC for constrained two-timescale linear systems."""

from .model import (
    ConstraintSet,
    DiscreteLtiModel,
    ModelError,
    Partition,
    SampledModel,
    Targets,
    TildeSystem,
    VelocityModel,
    build_tilde_system,
    build_velocity_form,
    from_continuous,
    reconstruct_from_velocity,
    resample,
    steady_state_targets,
)
from .numerics import NumericsError, StabilityReport
from .qp import QpProblem, QpSolution

__all__ = [
    "ConstraintSet",
    "DiscreteLtiModel",
    "ModelError",
    "NumericsError",
    "Partition",
    "QpProblem",
    "QpSolution",
    "SampledModel",
    "StabilityReport",
    "Targets",
    "TildeSystem",
    "VelocityModel",
    "build_tilde_system",
    "build_velocity_form",
    "from_continuous",
    "reconstruct_from_velocity",
    "resample",
    "steady_state_targets",
]

__version__ = "0.1.0"

"""Distributed hypergradient descent for single-leader, multi-follower games."""

from .errors import (
    AgentError,
    BigHypeError,
    ConfigInvalid,
    ContractionViolation,
    ConvergenceWarning,
    DegeneratePoint,
    DimensionMismatch,
    Infeasible,
    MaxIterExceeded,
    NonFiniteValue,
    NotStronglyMonotone,
    RankDeficientConstraint,
    ScheduleContractViolation,
    SingularSystem,
)
from .game import GameSpec, PolyhedronSpec, QuadCostSpec, QuadraticLeaderCost, validate
from .outer import RunOptions, RunTrace, Schedule, Schedules, default_schedules, hypergradient, outer_step, run
from .polyproj import Projector, project
from .sets import Ball, Box, Product, Simplex

__version__ = "0.1.0"

__all__ = [
    "AgentError",
    "Ball",
    "BigHypeError",
    "Box",
    "ConfigInvalid",
    "ContractionViolation",
    "ConvergenceWarning",
    "DegeneratePoint",
    "DimensionMismatch",
    "GameSpec",
    "Infeasible",
    "MaxIterExceeded",
    "NonFiniteValue",
    "NotStronglyMonotone",
    "PolyhedronSpec",
    "Product",
    "Projector",
    "QuadCostSpec",
    "QuadraticLeaderCost",
    "RankDeficientConstraint",
    "RunOptions",
    "RunTrace",
    "Schedule",
    "ScheduleContractViolation",
    "Schedules",
    "Simplex",
    "SingularSystem",
    "default_schedules",
    "hypergradient",
    "outer_step",
    "project",
    "run",
    "validate",
]

"""Performability analysis of multi-server retrial queues with Markovian
arrivals, phase-type services and retrials, guard-channel admission and
channel failures/repairs."""

from .generator import (
    BlockTridiagonalGenerator,
    ParametricChain,
    RateScales,
    build_diag,
    build_generator,
    build_lower,
    build_upper,
    enumerate_level,
)
from .measures import MeasureReport, compute_measures
from .optimizer import CostObjective, CostSpec, SaConfig, SaResult, simulated_annealing
from .scenario import Scenario, build_case, load_builtin, load_scenario, sweep_scales
from .simulator import SimEstimates, sample_interarrivals, simulate
from .solver import (
    RateMatrixFamily,
    StationaryDistribution,
    boundary_and_normalize,
    choose_truncation,
    dense_oracle_solve,
    rate_matrices,
    solve_truncated,
)
from .stochastic import (
    MapProcess,
    ModelParams,
    PhDistribution,
    ValidationError,
    arrival_correlation_variation,
    arrival_intensities,
    ph_fundamental_rate,
    scale_ph,
    validate_map,
    validate_ph,
)

__version__ = "0.1.0"

__all__ = [
    "BlockTridiagonalGenerator",
    "CostObjective",
    "CostSpec",
    "MapProcess",
    "MeasureReport",
    "ModelParams",
    "ParametricChain",
    "PhDistribution",
    "RateMatrixFamily",
    "RateScales",
    "SaConfig",
    "SaResult",
    "Scenario",
    "SimEstimates",
    "StationaryDistribution",
    "ValidationError",
    "arrival_correlation_variation",
    "arrival_intensities",
    "boundary_and_normalize",
    "build_case",
    "build_diag",
    "build_generator",
    "build_lower",
    "build_upper",
    "choose_truncation",
    "compute_measures",
    "dense_oracle_solve",
    "enumerate_level",
    "load_builtin",
    "load_scenario",
    "ph_fundamental_rate",
    "rate_matrices",
    "sample_interarrivals",
    "scale_ph",
    "simulate",
    "simulated_annealing",
    "solve_truncated",
    "sweep_scales",
    "validate_map",
    "validate_ph",
]

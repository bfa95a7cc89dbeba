"""State-space enumeration and level-dependent QBD generator assembly."""

from __future__ import annotations

from ..kron import DEFAULT_DIMENSION_CAP
from ..stochastic import ModelParams
from .assemble import (
    AUTO_TRACKED_LIMIT,
    BlockTridiagonalGenerator,
    ParametricChain,
    RateScales,
    assemble_generator,
    build_generator,
    make_builder,
)
from .blocks import BlockPattern, unit_scales
from .layout import AggregatedLayout, Cell, LevelLayout, TrackedLayout, composition_space
from .policy import AdmissionPolicy, admissible_cells


def enumerate_level(model: ModelParams, level: int, backend: str = "tracked",
                    cap: int = DEFAULT_DIMENSION_CAP) -> LevelLayout:
    """Layout of all admissible (kappa, j, i) cells of one orbit level."""
    return make_builder(model, backend, cap=cap).layout(level)


def _single_block(model, level, which, strict, backend, cap, fold_upper=False):
    builder = make_builder(model, backend, strict, cap)
    scales = unit_scales(model.failure_rate, model.repair_rate)
    if which == "diag":
        return builder.diag_pattern(level, fold_upper=fold_upper).assemble(scales)
    if which == "upper":
        return builder.upper_pattern(level).assemble(scales)
    return builder.lower_pattern(level).assemble(scales)


def build_diag(model: ModelParams, level: int, strict: bool = False,
               backend: str = "tracked", cap: int = DEFAULT_DIMENSION_CAP,
               fold_upper: bool = False):
    """Q_{l,l}: within-level transitions (arrivals, services, failures, repairs)."""
    return _single_block(model, level, "diag", strict, backend, cap, fold_upper)


def build_upper(model: ModelParams, level: int, strict: bool = False,
                backend: str = "tracked", cap: int = DEFAULT_DIMENSION_CAP):
    """Q_{l,l+1}: a blocked new call joins the orbit."""
    return _single_block(model, level, "upper", strict, backend, cap)


def build_lower(model: ModelParams, level: int, strict: bool = False,
                backend: str = "tracked", cap: int = DEFAULT_DIMENSION_CAP):
    """Q_{l+1,l}: a retrial call abandons or connects successfully."""
    return _single_block(model, level, "lower", strict, backend, cap)


__all__ = [
    "AUTO_TRACKED_LIMIT",
    "AdmissionPolicy",
    "AggregatedLayout",
    "BlockPattern",
    "BlockTridiagonalGenerator",
    "Cell",
    "LevelLayout",
    "ParametricChain",
    "RateScales",
    "TrackedLayout",
    "admissible_cells",
    "assemble_generator",
    "build_diag",
    "build_generator",
    "build_lower",
    "build_upper",
    "composition_space",
    "enumerate_level",
    "make_builder",
    "unit_scales",
]

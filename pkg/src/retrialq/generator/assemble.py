"""Block-tridiagonal generator assembly and parametric re-assembly.

``build_generator`` produces the truncated level-dependent QBD generator for
a model: upper[l] = Q_{l,l+1}, diag[l] = Q_{l,l}, lower[l] = Q_{l+1,l}.  At
the truncation level M the would-be upper block is folded into the diagonal
(blocked new calls at full orbit are lost), which keeps every global row sum
at zero.

``ParametricChain`` caches the tagged block patterns of a base model and
re-assembles generators and effective models for scaled rates, so parameter
sweeps and the cost optimizer do not pay the pattern construction again.
"""

from __future__ import annotations

import sys
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..kron import DEFAULT_DIMENSION_CAP
from ..stochastic import (
    MapProcess,
    ModelParams,
    PhDistribution,
    validate_map,
)
from .aggregated import AggregatedBuilder
from .blocks import unit_scales
from .layout import LevelLayout
from .policy import AdmissionPolicy
from .tracked import TrackedBuilder

ROW_SUM_TOL = 1e-9

# Auto backend: track every call while the deepest level stays small, switch
# to the lumped representation otherwise.
AUTO_TRACKED_LIMIT = 20_000


@dataclass
class BlockTridiagonalGenerator:
    M: int
    layouts: list[LevelLayout]
    upper: list[sp.csr_matrix]  # Q_{l, l+1}, l = 0..M-1
    diag: list[sp.csr_matrix]  # Q_{l, l},   l = 0..M
    lower: list[sp.csr_matrix]  # Q_{l+1, l}, l = 0..M-1
    policy: AdmissionPolicy
    backend: str
    model: ModelParams

    @property
    def level_dims(self) -> list[int]:
        return [lay.dim for lay in self.layouts]

    @property
    def total_dim(self) -> int:
        return sum(self.level_dims)

    def row_sum_defect(self) -> float:
        """max |row sum| over the whole truncated generator."""
        worst = 0.0
        for l in range(self.M + 1):
            s = np.asarray(self.diag[l].sum(axis=1)).ravel()
            if l > 0:
                s += np.asarray(self.lower[l - 1].sum(axis=1)).ravel()
            if l < self.M:
                s += np.asarray(self.upper[l].sum(axis=1)).ravel()
            worst = max(worst, float(np.max(np.abs(s))) if s.size else 0.0)
        return worst

    def to_dense(self) -> np.ndarray:
        """Full truncated generator as one dense matrix (small models only)."""
        offsets = np.cumsum([0] + self.level_dims)
        n = offsets[-1]
        q = np.zeros((n, n))
        for l in range(self.M + 1):
            a, b = offsets[l], offsets[l + 1]
            q[a:b, a:b] = self.diag[l].toarray()
            if l < self.M:
                c, d = offsets[l + 1], offsets[l + 2]
                q[a:b, c:d] = self.upper[l].toarray()
                q[c:d, a:b] = self.lower[l].toarray()
        return q

    def dump_blocks(self, stream=None):
        """Debug dump: one line per entry 'level kind row col value'."""
        stream = stream or sys.stdout
        for l in range(self.M + 1):
            for kind, mat in (("diag", self.diag[l]),
                              ("upper", self.upper[l] if l < self.M else None),
                              ("lower", self.lower[l] if l < self.M else None)):
                if mat is None:
                    continue
                coo = mat.tocoo()
                order = np.lexsort((coo.col, coo.row))
                for k in order:
                    stream.write(f"{l} {kind} {coo.row[k]} {coo.col[k]} {coo.data[k]:.12g}\n")


def make_builder(model: ModelParams, backend: str = "tracked", strict: bool = False,
                 cap: int = DEFAULT_DIMENSION_CAP):
    if backend == "auto":
        backend = "tracked" if _tracked_affordable(model, cap) else "aggregated"
    if backend == "tracked":
        return TrackedBuilder(model, strict=strict, cap=cap)
    if backend == "aggregated":
        return AggregatedBuilder(model, strict=strict, cap=cap)
    raise ValueError(f"unknown backend {backend!r}")


def _tracked_affordable(model: ModelParams, cap: int) -> bool:
    # Crude projection: tracked level dims grow by W2 per level; require a
    # few levels of headroom under the auto limit.
    base = TrackedBuilder(model).layout(0).dim
    return base * model.retrial_dim**6 <= AUTO_TRACKED_LIMIT


def builder_backend_name(builder) -> str:
    return "tracked" if isinstance(builder, TrackedBuilder) else "aggregated"


def build_generator(model: ModelParams, M: int, backend: str = "tracked",
                    strict: bool = False, cap: int = DEFAULT_DIMENSION_CAP,
                    builder=None, check: bool = True) -> BlockTridiagonalGenerator:
    """Assemble all blocks for levels 0..M with lost-call folding at M."""
    if M < 1:
        raise ValueError("truncation level M must be >= 1")
    if builder is None:
        builder = make_builder(model, backend, strict, cap)
    scales = unit_scales(model.failure_rate, model.repair_rate)
    return assemble_generator(model, builder, M, scales, check=check)


def assemble_generator(model, builder, M, scales, check: bool = True) -> BlockTridiagonalGenerator:
    layouts = [builder.layout(l) for l in range(M + 1)]
    diag = [builder.diag_pattern(l, fold_upper=(l == M)).assemble(scales) for l in range(M + 1)]
    upper = [builder.upper_pattern(l).assemble(scales) for l in range(M)]
    lower = [builder.lower_pattern(l).assemble(scales) for l in range(M)]
    gen = BlockTridiagonalGenerator(
        M=M, layouts=layouts, upper=upper, diag=diag, lower=lower,
        policy=builder.policy, backend=builder_backend_name(builder), model=model,
    )
    if check:
        defect = gen.row_sum_defect()
        if defect > ROW_SUM_TOL:
            if builder.policy.strict:
                warnings.warn(
                    f"strict block conventions leak probability mass: max |row sum| = {defect:.3e}",
                    stacklevel=2,
                )
            else:
                raise AssertionError(f"generator rows must sum to zero, defect {defect:.3e}")
    return gen


# ---------------------------------------------------------------------------
# Parametric re-assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateScales:
    """Multiplicative factors applied to the base model's rate families."""

    arr_h: float = 1.0
    arr_n: float = 1.0
    svc_n: float = 1.0
    svc_h: float = 1.0
    retrial: float = 1.0
    failure_rate: float | None = None  # absolute; None keeps the base value
    repair_rate: float | None = None

    def tag_scales(self, base: ModelParams) -> dict[str, float]:
        return {
            "base": 1.0,
            "arrH": self.arr_h,
            "arrN": self.arr_n,
            "svcN": self.svc_n,
            "svcH": self.svc_h,
            "retrial": self.retrial,
            "fail": base.failure_rate if self.failure_rate is None else self.failure_rate,
            "repair": base.repair_rate if self.repair_rate is None else self.repair_rate,
        }


class ParametricChain:
    """Re-assembles the generator of a base model under rate scalings."""

    def __init__(self, model: ModelParams, backend: str = "auto", strict: bool = False,
                 cap: int = DEFAULT_DIMENSION_CAP):
        self.base = model
        self.builder = make_builder(model, backend, strict, cap)
        self.backend = builder_backend_name(self.builder)

    def generator(self, M: int, scales: RateScales = RateScales(),
                  check: bool = True) -> BlockTridiagonalGenerator:
        model = self.effective_model(scales)
        return assemble_generator(model, self.builder, M, scales.tag_scales(self.base),
                                  check=check)

    def effective_model(self, scales: RateScales) -> ModelParams:
        """The ModelParams whose plain build matches the scaled assembly."""
        b = self.base
        if scales == RateScales():
            return b
        arr = b.arrivals
        c_h = arr.c_h * scales.arr_h
        c_n = arr.c_n * scales.arr_n
        # Keep C = C0 + C_H + C_N row sums unchanged: the freed (or added)
        # arrival mass is taken from the no-arrival diagonal.
        c0 = arr.c0 + np.diag(
            (1.0 - scales.arr_h) * arr.c_h.sum(axis=1)
            + (1.0 - scales.arr_n) * arr.c_n.sum(axis=1)
        )
        arrivals = validate_map(c0, c_h, c_n, row_sum_tol=max(1e-3, 10 * arr.row_sum_residual))
        return ModelParams(
            arrivals=arrivals,
            service_new=_scale_ph_by(b.service_new, scales.svc_n),
            service_handoff=_scale_ph_by(b.service_handoff, scales.svc_h),
            retrial=_scale_ph_by(b.retrial, scales.retrial),
            servers=b.servers,
            guard=b.guard,
            failure_rate=b.failure_rate if scales.failure_rate is None else scales.failure_rate,
            repair_rate=b.repair_rate if scales.repair_rate is None else scales.repair_rate,
        )


def _scale_ph_by(d: PhDistribution, factor: float) -> PhDistribution:
    if factor == 1.0:
        return d
    if factor <= 0:
        raise ValueError("rate scale factors must be positive")
    return PhDistribution(
        init=d.init,
        subgen=d.subgen * factor,
        exit1=d.exit1 * factor,
        exit2=None if d.exit2 is None else d.exit2 * factor,
    )

"""Arrival, service, retrial, failure and repair primitives.

Defines the three stochastic building blocks of the model -- a two-class
Markovian arrival process (MAP), phase-type (PH) service distributions and a
PH retrial distribution with two absorption channels -- together with the
model parameter bundle (channels, guard channels, failure/repair intensities)
and the standard moment formulas derived from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

# User-supplied matrices are often rounded in print; internally constructed
# ones must be exact.
DEFAULT_ROW_SUM_TOL = 1e-3
INTERNAL_ROW_SUM_TOL = 1e-10
PH_CLOSURE_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when a stochastic primitive violates its structural invariants."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


def _as_matrix(name: str, x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(name, f"expected a square matrix, got shape {a.shape}")
    return a


def _as_vector(name: str, x) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1)
    return a


@dataclass(frozen=True)
class MapProcess:
    """Validated two-class MAP (C0, C_H, C_N) with its stationary phase vector.

    ``c0`` carries transitions without arrivals, ``c_h``/``c_n`` transitions
    accompanied by a handoff/new arrival.  Published matrices are often
    rounded, so the no-arrival diagonal absorbs any row-sum residual of
    C = c0 + c_h + c_n at validation time; the applied correction size is
    reported as ``row_sum_residual``.  ``pi`` solves pi*C = 0, pi*e = 1 for
    the repaired (exact) generator.
    """

    c0: np.ndarray
    c_h: np.ndarray
    c_n: np.ndarray
    pi: np.ndarray
    row_sum_residual: float

    @property
    def dimension(self) -> int:
        return self.c0.shape[0]

    @property
    def generator(self) -> np.ndarray:
        return self.c0 + self.c_h + self.c_n


def validate_map(c0, c_h, c_n, row_sum_tol: float = DEFAULT_ROW_SUM_TOL) -> MapProcess:
    """Validate (C0, C_H, C_N) and compute the stationary phase vector.

    Raises ValidationError on dimension mismatch, negative arrival entries,
    a C0 diagonal that is not strictly negative, row sums exceeding
    ``row_sum_tol`` or a reducible C.
    """
    c0 = _as_matrix("C0", c0)
    c_h = _as_matrix("C_H", c_h)
    c_n = _as_matrix("C_N", c_n)
    L = c0.shape[0]
    if c_h.shape != (L, L) or c_n.shape != (L, L):
        raise ValidationError("C_H/C_N", f"dimension mismatch with C0 ({L}x{L})")
    if np.any(c_h < 0):
        raise ValidationError("C_H", "negative arrival block entry")
    if np.any(c_n < 0):
        raise ValidationError("C_N", "negative arrival block entry")
    off = c0 - np.diag(np.diag(c0))
    if np.any(off < 0):
        raise ValidationError("C0", "negative off-diagonal entry")
    if np.any(np.diag(c0) >= 0):
        raise ValidationError("C0", "diagonal must be strictly negative")
    c = c0 + c_h + c_n
    residual = float(np.max(np.abs(c.sum(axis=1))))
    if residual > row_sum_tol:
        raise ValidationError(
            "C0+C_H+C_N", f"row-sum residual {residual:.3e} exceeds tolerance {row_sum_tol:.1e}"
        )
    # Repair: rounded inputs are accepted, but the chain we build from them
    # must be an exact generator.
    c0 = c0 - np.diag(c.sum(axis=1))
    c = c0 + c_h + c_n
    # Irreducibility via strong connectivity of the nonzero off-diagonal pattern.
    pattern = (np.abs(c) > 0) & ~np.eye(L, dtype=bool)
    n_comp, _ = connected_components(csr_matrix(pattern), directed=True, connection="strong")
    if L > 1 and n_comp != 1:
        raise ValidationError("C0+C_H+C_N", "generator is reducible; stationary vector not unique")
    pi = _stationary_vector(c)
    return MapProcess(c0=c0, c_h=c_h, c_n=c_n, pi=pi, row_sum_residual=residual)


def _stationary_vector(c: np.ndarray) -> np.ndarray:
    """Least-squares solve of pi*C = 0, pi*e = 1 (tolerates rounded inputs)."""
    L = c.shape[0]
    a = np.vstack([c.T, np.ones((1, L))])
    b = np.zeros(L + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    if np.any(pi < -1e-10):
        raise ValidationError("pi", "stationary vector has negative entries")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def arrival_intensities(m: MapProcess) -> tuple[float, float, float]:
    """Return (lambda_H, lambda_N, lambda): pi C_H e, pi C_N e and their sum."""
    lam_h = float(m.pi @ m.c_h.sum(axis=1))
    lam_n = float(m.pi @ m.c_n.sum(axis=1))
    return lam_h, lam_n, lam_h + lam_n


def arrival_correlation_variation(m: MapProcess) -> tuple[float, float, float]:
    """Lag-1 correlation and variation coefficient of inter-arrival times.

    Uses the standard MAP moment formulas with D0 = C0 and D1 = C_H + C_N.
    Returns (corr_lag1, c_v, c_v_squared); both the coefficient of variation
    and its square are reported because published values do not always state
    which convention is used.
    """
    d0 = m.c0
    d1 = m.c_h + m.c_n
    L = d0.shape[0]
    neg_d0_inv = np.linalg.inv(-d0)
    p = neg_d0_inv @ d1  # embedded (post-arrival) phase transition matrix
    phi = _stationary_vector_discrete(p)
    e = np.ones(L)
    m1 = float(phi @ neg_d0_inv @ e)
    m2 = 2.0 * float(phi @ neg_d0_inv @ neg_d0_inv @ e)
    var = m2 - m1 * m1
    cv2 = var / (m1 * m1)
    joint = float(phi @ neg_d0_inv @ p @ neg_d0_inv @ e)
    corr = (joint - m1 * m1) / var if var > 0 else 0.0
    return corr, float(np.sqrt(cv2)), cv2


def _stationary_vector_discrete(p: np.ndarray) -> np.ndarray:
    n = p.shape[0]
    a = np.vstack([(p - np.eye(n)).T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    phi, *_ = np.linalg.lstsq(a, b, rcond=None)
    phi = np.clip(phi, 0.0, None)
    return phi / phi.sum()


@dataclass(frozen=True)
class PhDistribution:
    """PH distribution (init, subgen) with one or two exit vectors.

    Service distributions carry a single exit vector exit1 = -subgen @ e.
    The retrial distribution carries two: exit1 absorbs a call that leaves
    without service, exit2 absorbs a retrial attempt, and
    subgen @ e + exit1 + exit2 = 0 holds elementwise.
    """

    init: np.ndarray
    subgen: np.ndarray
    exit1: np.ndarray
    exit2: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        return self.subgen.shape[0]

    @property
    def exits(self) -> list[np.ndarray]:
        return [self.exit1] if self.exit2 is None else [self.exit1, self.exit2]


def validate_ph(
    init,
    subgen,
    exit1=None,
    exit2=None,
    name: str = "PH",
    closure_tol: float = PH_CLOSURE_TOL,
) -> PhDistribution:
    """Validate a PH representation; derives the exit vector when omitted."""
    init = _as_vector(f"{name}.init", init)
    subgen = _as_matrix(f"{name}.subgen", subgen)
    W = subgen.shape[0]
    if init.shape[0] != W:
        raise ValidationError(f"{name}.init", f"length {init.shape[0]} != dimension {W}")
    if np.any(init < 0) or abs(init.sum() - 1.0) > 1e-10:
        raise ValidationError(f"{name}.init", "entries must be >= 0 and sum to 1")
    if np.any(np.diag(subgen) >= 0):
        raise ValidationError(f"{name}.subgen", "diagonal must be strictly negative")
    if np.any(subgen - np.diag(np.diag(subgen)) < 0):
        raise ValidationError(f"{name}.subgen", "negative off-diagonal entry")
    if exit1 is None:
        exit1 = -subgen.sum(axis=1)
    exit1 = _as_vector(f"{name}.exit1", exit1)
    if exit2 is not None:
        exit2 = _as_vector(f"{name}.exit2", exit2)
    total = subgen.sum(axis=1) + exit1 + (exit2 if exit2 is not None else 0.0)
    if np.max(np.abs(total)) > closure_tol:
        raise ValidationError(
            f"{name}", f"subgen rows plus exit vectors must sum to 0 (residual {np.max(np.abs(total)):.3e})"
        )
    for label, vec in (("exit1", exit1), ("exit2", exit2)):
        if vec is not None and np.any(vec < -closure_tol):
            raise ValidationError(f"{name}.{label}", "exit vector entries must be >= 0")
    exit1 = np.clip(exit1, 0.0, None)
    if exit2 is not None:
        exit2 = np.clip(exit2, 0.0, None)
    return PhDistribution(init=init, subgen=subgen, exit1=exit1, exit2=exit2)


def ph_fundamental_rate(d: PhDistribution) -> float:
    """Fundamental rate 1 / (init @ (-subgen)^-1 @ e)."""
    mean = float(d.init @ np.linalg.solve(-d.subgen, np.ones(d.dimension)))
    return 1.0 / mean


def scale_ph(d: PhDistribution, target_rate: float) -> PhDistribution:
    """Rescale time so the fundamental rate equals ``target_rate``.

    Multiplies the sub-generator and every exit vector by the same factor;
    the normalized phase structure (and absorption split) is preserved.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be > 0, got {target_rate}")
    factor = target_rate / ph_fundamental_rate(d)
    return PhDistribution(
        init=d.init,
        subgen=d.subgen * factor,
        exit1=d.exit1 * factor,
        exit2=None if d.exit2 is None else d.exit2 * factor,
    )


def exponential_ph(rate: float) -> PhDistribution:
    """One-phase PH: exponential with the given rate."""
    return validate_ph([1.0], [[-rate]], name="exponential")


def exponential_retrial_ph(rate: float, leave_fraction: float) -> PhDistribution:
    """One-phase retrial PH with the absorption split (leave, attempt)."""
    if not 0.0 <= leave_fraction <= 1.0:
        raise ValueError("leave_fraction must lie in [0, 1]")
    return validate_ph(
        [1.0],
        [[-rate]],
        exit1=[rate * leave_fraction],
        exit2=[rate * (1.0 - leave_fraction)],
        name="exponential-retrial",
    )


def poisson_map(lam_h: float, lam_n: float) -> MapProcess:
    """One-phase MAP: independent Poisson streams of the two call types."""
    return validate_map(
        [[-(lam_h + lam_n)]], [[lam_h]], [[lam_n]], row_sum_tol=INTERNAL_ROW_SUM_TOL
    )


def retrial_absorption_split(d: PhDistribution) -> tuple[float, float]:
    """Probabilities that absorption happens via exit1 vs exit2."""
    if d.exit2 is None:
        return 1.0, 0.0
    weights = d.init @ np.linalg.inv(-d.subgen)
    p1 = float(weights @ d.exit1)
    p2 = float(weights @ d.exit2)
    total = p1 + p2
    return p1 / total, p2 / total


@dataclass(frozen=True)
class ModelParams:
    """Complete model instance.

    servers: total channels S; guard: channels reserved for handoff calls
    (new calls are admitted only while fewer than S - guard are busy);
    failure_rate: per busy channel; repair_rate: per failed channel.
    """

    arrivals: MapProcess
    service_new: PhDistribution
    service_handoff: PhDistribution
    retrial: PhDistribution
    servers: int
    guard: int
    failure_rate: float
    repair_rate: float

    def __post_init__(self):
        if self.servers < 1:
            raise ValidationError("servers", "must be a positive count")
        if not 0 <= self.guard < self.servers:
            raise ValidationError("guard", f"must satisfy 0 <= G < S, got G={self.guard}, S={self.servers}")
        if self.service_new.dimension != self.service_handoff.dimension:
            raise ValidationError(
                "service", "new and handoff service PH distributions must share a dimension"
            )
        if self.retrial.exit2 is None:
            raise ValidationError("retrial", "retrial PH needs both exit vectors (leave, attempt)")
        if self.failure_rate < 0:
            raise ValidationError("failure_rate", "must be >= 0")
        if self.repair_rate <= 0:
            raise ValidationError("repair_rate", "must be > 0")

    @property
    def map_dim(self) -> int:
        return self.arrivals.dimension

    @property
    def service_dim(self) -> int:
        return self.service_new.dimension

    @property
    def retrial_dim(self) -> int:
        return self.retrial.dimension

    def with_(self, **kwargs) -> "ModelParams":
        return replace(self, **kwargs)

    def summary(self) -> dict[str, float]:
        lam_h, lam_n, lam = arrival_intensities(self.arrivals)
        return {
            "lambda_H": lam_h,
            "lambda_N": lam_n,
            "lambda": lam,
            "mu_N": ph_fundamental_rate(self.service_new),
            "mu_H": ph_fundamental_rate(self.service_handoff),
            "theta": ph_fundamental_rate(self.retrial),
            "S": self.servers,
            "G": self.guard,
            "lambda_f": self.failure_rate,
            "mu_r": self.repair_rate,
        }

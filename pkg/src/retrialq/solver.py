"""Stationary distribution of the truncated level-dependent QBD.

Backward rate-matrix recursion, boundary null-space solve and
normalization, a dense direct solver used as an independent oracle, and the
tail-mass truncation search.
"""

from __future__ import annotations

import os
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.linalg import lapack

from .generator import (
    BlockTridiagonalGenerator,
    ParametricChain,
    RateScales,
    build_generator,
    make_builder,
    assemble_generator,
    unit_scales,
)
from .stochastic import ModelParams

NEGATIVITY_TOL = 1e-12
DENSE_ORACLE_CAP = 20_000


class SolverError(RuntimeError):
    pass


@dataclass
class StationaryDistribution:
    """Per-level stationary probability vectors of the truncated chain."""

    M: int
    z: list[np.ndarray]
    residual: float
    tail_mass: float
    boundary_condition: float = float("nan")

    @property
    def total_mass(self) -> float:
        return float(sum(v.sum() for v in self.z))

    def level_mass(self) -> np.ndarray:
        return np.array([float(v.sum()) for v in self.z])


# R matrices are dense and their total size grows like M^3; spill them to a
# temporary directory instead of exhausting memory on deep orbits.
R_SPILL_BYTES = int(os.environ.get("RETRIALQ_R_SPILL_BYTES", 1_200_000_000))


class RateMatrixFamily:
    """R(l), l = 0..M-1, with z(l+1) = z(l) R(l); optionally disk-backed."""

    def __init__(self, level_dims: list[int], spill: bool):
        self._n = len(level_dims) - 1
        self._store: list = [None] * self._n
        self._tmp = tempfile.TemporaryDirectory(prefix="retrialq-rates-") if spill else None

    def put(self, l: int, r: np.ndarray):
        if self._tmp is not None:
            path = os.path.join(self._tmp.name, f"r{l}.npy")
            np.save(path, r)
            self._store[l] = path
        else:
            self._store[l] = r

    def __getitem__(self, l: int) -> np.ndarray:
        item = self._store[l]
        if isinstance(item, str):
            return np.load(item)
        return item

    def __len__(self) -> int:
        return self._n


def _dense_inverse(a: np.ndarray) -> np.ndarray:
    """Explicit inverse via getrf/getri (cheaper than n solves with a dense
    right-hand side once levels are deep, and the upper blocks multiplying
    it are very sparse)."""
    lu, piv, info = lapack.dgetrf(a, overwrite_a=True)
    if info != 0:
        raise SolverError(f"singular inner matrix (getrf info={info})")
    lwork = lapack.dgetri_lwork(a.shape[0])[0]
    inv, info = lapack.dgetri(lu, piv, lwork=int(lwork), overwrite_lu=True)
    if info != 0:
        raise SolverError(f"inner matrix inversion failed (getri info={info})")
    return inv


def rate_matrices(gen: BlockTridiagonalGenerator,
                  spill_bytes: int = R_SPILL_BYTES) -> RateMatrixFamily:
    """Backward recursion R(l-1) = -Q_{l-1,l} (Q_{l,l} + R(l) Q_{l+1,l})^-1.

    The innermost matrix at the truncation level is Q_{M,M} itself.  Inner
    matrices are inverted densely (they are dense once an R enters); the
    minimal-nonnegative property is asserted up to roundoff.
    """
    M = gen.M
    dims = gen.level_dims
    total_bytes = 8 * sum(dims[l] * dims[l + 1] for l in range(M))
    rates = RateMatrixFamily(dims, spill=total_bytes > spill_bytes)
    inner = gen.diag[M].toarray()
    for l in range(M, 0, -1):
        inv = _dense_inverse(inner)
        r = -(gen.upper[l - 1] @ inv)
        del inv
        low = float(r.min(initial=0.0))
        if low < -NEGATIVITY_TOL * max(1.0, float(np.abs(r).max(initial=0.0))):
            raise SolverError(
                f"rate matrix R({l - 1}) has negative entries ({low:.3e}); generator malformed"
            )
        np.clip(r, 0.0, None, out=r)
        rates.put(l - 1, r)
        if l - 1 > 0:
            inner = gen.diag[l - 1].toarray()
            inner += gen.lower[l - 1].T.dot(r.T).T
        del r
    return rates


def boundary_and_normalize(gen: BlockTridiagonalGenerator,
                           rates: RateMatrixFamily) -> StationaryDistribution:
    """Solve x(0)(Q_{0,0} + R(0)Q_{1,0}) = 0, propagate and renormalize.

    The singular boundary system is closed by replacing its first column
    with the normalization direction (ones); the 1-norm condition number of
    the closed system is reported.
    """
    b = gen.diag[0].toarray() + gen.lower[0].T.dot(rates[0].T).T
    n0 = b.shape[0]
    closed = b.copy()
    closed[:, 0] = 1.0
    rhs = np.zeros(n0)
    rhs[0] = 1.0
    try:
        x0 = la.solve(closed.T, rhs)
    except la.LinAlgError as exc:
        raise SolverError("boundary system is singular (null space dimension != 1)") from exc
    cond = float(np.linalg.cond(closed, 1))
    if not np.all(np.isfinite(x0)) or float(np.abs(x0).max(initial=0.0)) == 0.0:
        raise SolverError("boundary solve returned a trivial vector")
    if x0.sum() < 0:
        x0 = -x0
    x = [x0]
    for l in range(gen.M):
        x.append(x[-1] @ rates[l])
    mass = float(sum(v.sum() for v in x))
    if mass <= 0:
        raise SolverError("nonpositive total mass from boundary propagation")
    z = [v / mass for v in x]
    low = min(float(v.min(initial=0.0)) for v in z)
    if low < -NEGATIVITY_TOL:
        raise SolverError(f"stationary vector negativity {low:.3e} beyond roundoff")
    z = [np.clip(v, 0.0, None) for v in z]
    total = float(sum(v.sum() for v in z))
    z = [v / total for v in z]
    return StationaryDistribution(
        M=gen.M,
        z=z,
        residual=residual_norm(gen, z),
        tail_mass=float(z[gen.M].sum()),
        boundary_condition=cond,
    )


def solve_truncated(gen: BlockTridiagonalGenerator) -> StationaryDistribution:
    return boundary_and_normalize(gen, rate_matrices(gen))


def residual_norm(gen: BlockTridiagonalGenerator, z: list[np.ndarray]) -> float:
    """||z Q||_inf over the truncated chain."""
    worst = 0.0
    for l in range(gen.M + 1):
        r = z[l] @ gen.diag[l]
        if l > 0:
            r = r + z[l - 1] @ gen.upper[l - 1]
        if l < gen.M:
            r = r + z[l + 1] @ gen.lower[l]
        worst = max(worst, float(np.abs(r).max(initial=0.0)))
    return worst


def dense_oracle_solve(gen: BlockTridiagonalGenerator,
                       max_dim: int = DENSE_ORACLE_CAP) -> StationaryDistribution:
    """Direct dense solve of z Q = 0, z e = 1 on the full truncated chain.

    Independent verification path: no rate-matrix recursion is involved.
    """
    n = gen.total_dim
    if n > max_dim:
        raise SolverError(f"dense oracle limited to {max_dim} states, got {n}")
    q = gen.to_dense()
    closed = q.copy()
    closed[:, 0] = 1.0
    rhs = np.zeros(n)
    rhs[0] = 1.0
    z_flat = la.solve(closed.T, rhs)
    if z_flat.sum() < 0:
        z_flat = -z_flat
    low = float(z_flat.min(initial=0.0))
    if low < -1e-10:
        raise SolverError(f"dense solve produced negative mass {low:.3e}")
    z_flat = np.clip(z_flat, 0.0, None)
    z_flat /= z_flat.sum()
    dims = gen.level_dims
    offsets = np.cumsum([0] + dims)
    z = [z_flat[offsets[l] : offsets[l + 1]] for l in range(gen.M + 1)]
    return StationaryDistribution(
        M=gen.M,
        z=z,
        residual=float(np.abs(z_flat @ q).max()),
        tail_mass=float(z[gen.M].sum()),
    )


# ---------------------------------------------------------------------------
# Truncation search
# ---------------------------------------------------------------------------


@dataclass
class TruncationResult:
    M: int
    tail_curve: dict[int, float]
    dist: StationaryDistribution
    generator: BlockTridiagonalGenerator
    met: bool  # tail criterion satisfied (False when the cap stopped us)


def choose_truncation(model: ModelParams, epsilon: float, backend: str = "auto",
                      strict: bool = False, m_cap: int = 60, m_start: int = 1,
                      builder=None, scales: RateScales | None = None,
                      chain: ParametricChain | None = None,
                      tail_cache: dict[int, float] | None = None) -> TruncationResult:
    """Smallest M with tail mass z(M).e < epsilon.

    Growth phase: doubling, switching to a log-linear extrapolation of the
    recorded tail curve once two failing probes exist (a blind doubling step
    can overshoot by minutes of dense linear algebra on deep orbits);
    refinement phase: bisection between the last failing and first passing
    level.  Per-level block patterns live in the builder and tail masses can
    be shared across calls through ``tail_cache``, so repeated searches at
    tightened epsilon only pay for new levels.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if chain is not None:
        builder = chain.builder
        model_eff = chain.effective_model(scales or RateScales())
        tag_scales = (scales or RateScales()).tag_scales(chain.base)
    else:
        if builder is None:
            builder = make_builder(model, backend, strict)
        model_eff = model
        tag_scales = unit_scales(model.failure_rate, model.repair_rate)

    tails: dict[int, float] = tail_cache if tail_cache is not None else {}
    solutions: dict[int, tuple] = {}

    def probe(m: int) -> float:
        if m in tails:
            return tails[m]
        gen = assemble_generator(model_eff, builder, m, tag_scales)
        dist = solve_truncated(gen)
        tails[m] = dist.tail_mass
        if dist.tail_mass < epsilon:
            solutions[m] = (dist, gen)
            for k in [k for k in solutions if k > m]:
                del solutions[k]
        return dist.tail_mass

    def next_probe(m: int) -> int:
        # Predict where the log tail crosses log epsilon from the recorded
        # curve (quadratic fit when three failing probes exist, secant with
        # two); clamp by the doubling bound so a wild extrapolation cannot
        # run away.  Deep levels cost minutes of dense algebra each, so a
        # good jump target matters more than probe count.
        failing = sorted(k for k, t in tails.items() if 0 < t and t >= epsilon)
        guess = None
        if len(failing) >= 2:
            pts = failing[-3:]
            xs = np.array(pts, dtype=float)
            ys = np.log([tails[k] for k in pts])
            deg = min(2, len(pts) - 1)
            coeff = np.polyfit(xs, ys, deg)
            roots = np.roots(np.polysub(coeff, [*([0.0] * deg), np.log(epsilon)]))
            real = [r.real for r in roots if abs(r.imag) < 1e-9 and r.real > m]
            if real:
                guess = int(np.ceil(min(real)))
        if guess is None:
            return min(2 * m, m_cap)
        return int(min(max(m + 1, guess), 2 * m, m_cap))

    m = max(1, m_start)
    best_fail = 0
    while True:
        tail = probe(m)
        if tail < epsilon:
            break
        best_fail = m
        if m >= m_cap:
            _check_tail_monotonicity(tails)
            if m not in solutions:
                probe_force(m, solutions, model_eff, builder, tag_scales, tails)
            dist, gen = solutions[m]
            return TruncationResult(M=m, tail_curve=dict(sorted(tails.items())),
                                    dist=dist, generator=gen, met=False)
        m = next_probe(m)
    lo, hi = best_fail, m
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(mid) < epsilon:
            hi = mid
        else:
            lo = mid
    _check_tail_monotonicity(tails)
    if hi not in solutions:
        probe_force(hi, solutions, model_eff, builder, tag_scales, tails)
    dist, gen = solutions[hi]
    return TruncationResult(M=hi, tail_curve=dict(sorted(tails.items())),
                            dist=dist, generator=gen, met=True)


def probe_force(m, solutions, model_eff, builder, tag_scales, tails):
    gen = assemble_generator(model_eff, builder, m, tag_scales)
    dist = solve_truncated(gen)
    tails[m] = dist.tail_mass
    solutions[m] = (dist, gen)


def _check_tail_monotonicity(tails: dict[int, float]):
    items = sorted(tails.items())
    for (m1, t1), (m2, t2) in zip(items, items[1:]):
        if t2 > t1 + 1e-12:
            warnings.warn(
                f"tail mass increased from M={m1} ({t1:.3e}) to M={m2} ({t2:.3e})",
                stacklevel=3,
            )

"""Stationary performance measures of the solved chain.

All fourteen measure groups are reductions of the per-level stationary
vectors: occupancy marginals, orbit marginals, loss/blocking fluxes at
arrival instants, abandonment and successful-retrial fluxes, the handoff
output flow and carried traffic.

Two reporting conventions exist side by side.  The default sums over every
level 0..M of the truncated chain and uses plain event-rate fluxes; the
``strict_sums`` variant reproduces the legacy printed index ranges (sums to
M-1, occupancy marginals over busy states only, and the orbit-full blocking
term read at level M-1).  Scaled variants of the abandonment and
retrial-success measures keep the legacy 1/theta and theta prefactors; the
``*_flux`` fields carry the plain rates.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .generator import BlockTridiagonalGenerator
from .solver import StationaryDistribution
from .stochastic import ModelParams, arrival_intensities, ph_fundamental_rate

SCALAR_MEASURES = (
    "EB", "ER", "EN", "EC",
    "P_d", "P_b", "P_b_printed",
    "P_leave_no_service", "P_leave_no_service_flux", "abandon_fraction",
    "lambda_H_out", "theta_r_succ", "theta_r_succ_flux",
    "P_c_avail",
)


@dataclass
class MeasureReport:
    p_new: np.ndarray          # P_N(j), j = 0..S-G
    p_handoff: np.ndarray      # P_H(j'), j' = 0..S
    eb: float                  # expected busy channels
    er: float                  # expected retrial calls
    en: float                  # expected failed channels
    ec: float                  # expected carried traffic E[l + kappa]
    p_orbit: np.ndarray        # P_orbit(l), l = 0..M
    p_dropped: float           # handoff dropping probability
    p_blocked: float           # new-call blocking probability (union of guard and failure blocking)
    p_blocked_printed: float   # legacy form: orbit-full term at level M-1, i=0
    p_leave_no_service: float  # abandonment flux / theta
    p_leave_no_service_flux: float
    abandon_fraction: float    # abandonment flux / lambda_N
    lambda_h_out: float        # successful handoff completion rate
    theta_r_succ: float        # theta * success flux (legacy scaling)
    theta_r_succ_flux: float   # successful retrial connection rate
    p_channel_avail: float     # P(kappa >= 1)
    p_loss_failure: np.ndarray  # marginal of failed-channel count, i = 0..S
    lambda_h: float
    lambda_n: float
    theta: float

    def scalars(self) -> dict[str, float]:
        return {
            "EB": self.eb, "ER": self.er, "EN": self.en, "EC": self.ec,
            "P_d": self.p_dropped, "P_b": self.p_blocked,
            "P_b_printed": self.p_blocked_printed,
            "P_leave_no_service": self.p_leave_no_service,
            "P_leave_no_service_flux": self.p_leave_no_service_flux,
            "abandon_fraction": self.abandon_fraction,
            "lambda_H_out": self.lambda_h_out,
            "theta_r_succ": self.theta_r_succ,
            "theta_r_succ_flux": self.theta_r_succ_flux,
            "P_c_avail": self.p_channel_avail,
        }

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "P_N": self.p_new,
            "P_H": self.p_handoff,
            "P_orbit": self.p_orbit,
            "P_loss_c_failure": self.p_loss_failure,
        }

    def flat_table(self) -> str:
        lines = [f"{k} = {v:.12g}" for k, v in self.scalars().items()]
        for name, arr in self.arrays().items():
            lines.extend(f"{name}[{k}] = {v:.12g}" for k, v in enumerate(arr))
        return "\n".join(lines) + "\n"

    def csv_header(self) -> list[str]:
        cols = list(SCALAR_MEASURES)
        for name, arr in self.arrays().items():
            cols.extend(f"{name}[{k}]" for k in range(len(arr)))
        return cols

    def csv_row(self) -> list[float]:
        row = [self.scalars()[k] for k in SCALAR_MEASURES]
        for arr in self.arrays().values():
            row.extend(float(v) for v in arr)
        return row

    def check_bounds(self, servers: int, M: int, tol: float = 1e-10):
        """Assert the probability and count bounds; raises on violation."""
        for name, arr in self.arrays().items():
            if np.any(arr < -tol) or np.any(arr > 1 + tol):
                raise AssertionError(f"{name} outside [0, 1]")
        for name in ("p_dropped", "p_blocked", "p_channel_avail"):
            v = getattr(self, name)
            if v < -tol or v > 1 + tol:
                raise AssertionError(f"{name} = {v} outside [0, 1]")
        if not (self.eb <= servers + tol and self.en <= servers + tol):
            raise AssertionError("occupancy exceeds channel count")
        if self.ec > M + servers + tol:
            raise AssertionError("carried traffic exceeds M + S")


def compute_measures(dist: StationaryDistribution, gen: BlockTridiagonalGenerator,
                     model: ModelParams | None = None,
                     strict_sums: bool = False) -> MeasureReport:
    model = model or gen.model
    pol = gen.policy
    S, G = model.servers, model.guard
    M = dist.M
    lam_h, lam_n, _ = arrival_intensities(model.arrivals)
    theta = ph_fundamental_rate(model.retrial)

    level_top = M - 1 if strict_sums else M

    p_new = np.zeros(S - G + 1)
    p_handoff = np.zeros(S + 1)
    p_orbit = np.zeros(M + 1)
    p_loss = np.zeros(S + 1)
    eb = en = ec = 0.0
    p_avail = 0.0
    drop_flux = block_flux = 0.0
    abandon_flux = success_flux = 0.0
    lambda_h_out = 0.0

    for l in range(M + 1):
        lay = gen.layouts[l]
        zl = dist.z[l]
        p_orbit[l] = float(zl.sum())
        if l > level_top:
            continue
        w_ah = lay.weight_vector("arrival_H", model)
        w_an = lay.weight_vector("arrival_N", model)
        w_xh = lay.weight_vector("exit_handoff", model)
        w_ab = lay.weight_vector("abandon", model)
        w_at = lay.weight_vector("attempt", model)
        for c in lay.cells:
            sl = slice(c.offset, c.offset + c.dim)
            mass = float(zl[sl].sum())
            if not strict_sums or c.kappa >= 1:
                p_new[c.j] += mass
                p_handoff[c.kappa - c.j] += mass
            eb += c.kappa * mass
            en += c.i * mass
            ec += (l + c.kappa) * mass
            p_loss[c.i] += mass
            if c.kappa >= 1:
                p_avail += mass
            if not pol.handoff_admissible(c.kappa, c.i):
                drop_flux += float(zl[sl] @ w_ah[sl])
            if not pol.new_admissible(c.kappa, c.i):
                block_flux += float(zl[sl] @ w_an[sl])
            lambda_h_out += float(zl[sl] @ w_xh[sl])
            if not strict_sums or l >= 1:
                abandon_flux += float(zl[sl] @ w_ab[sl])
            if pol.retrial_success(c.kappa, c.j, c.i):
                success_flux += float(zl[sl] @ w_at[sl])

    p_blocked_printed = _printed_blocking(dist, gen, model, lam_n)
    p_blocked = p_blocked_printed if strict_sums else block_flux / lam_n if lam_n > 0 else 0.0

    return MeasureReport(
        p_new=p_new,
        p_handoff=p_handoff,
        eb=eb,
        er=float(np.arange(M + 1)[: level_top + 1] @ p_orbit[: level_top + 1]),
        en=en,
        ec=ec,
        p_orbit=p_orbit,
        p_dropped=drop_flux / lam_h if lam_h > 0 else 0.0,
        p_blocked=p_blocked,
        p_blocked_printed=p_blocked_printed,
        p_leave_no_service=abandon_flux / theta,
        p_leave_no_service_flux=abandon_flux,
        abandon_fraction=abandon_flux / lam_n if lam_n > 0 else 0.0,
        lambda_h_out=lambda_h_out,
        theta_r_succ=theta * success_flux,
        theta_r_succ_flux=success_flux,
        p_channel_avail=p_avail,
        p_loss_failure=p_loss,
        lambda_h=lam_h,
        lambda_n=lam_n,
        theta=theta,
    )


def _printed_blocking(dist, gen, model, lam_n) -> float:
    """Legacy blocking form: orbit-full term read at level M-1 with i = 0,
    plus the failed-idle term over levels 0..M-1."""
    S, G = model.servers, model.guard
    M = dist.M
    total = 0.0
    lay = gen.layouts[M - 1]
    w_an = lay.weight_vector("arrival_N", model)
    for c in lay.cells:
        if c.kappa >= S - G and c.i == 0:
            sl = slice(c.offset, c.offset + c.dim)
            total += float(dist.z[M - 1][sl] @ w_an[sl])
    for l in range(M):
        lay = gen.layouts[l]
        w_an = lay.weight_vector("arrival_N", model)
        for c in lay.cells:
            if c.kappa <= S - 1 and c.i == S - c.kappa:
                sl = slice(c.offset, c.offset + c.dim)
                total += float(dist.z[l][sl] @ w_an[sl])
    return total / lam_n if lam_n > 0 else 0.0


# -- spec-facing views -------------------------------------------------------


def occupancy_measures(dist, gen, model=None, strict_sums=False):
    """(P_N, P_H, EB, EN, P_c_avail)."""
    r = compute_measures(dist, gen, model, strict_sums)
    return r.p_new, r.p_handoff, r.eb, r.en, r.p_channel_avail


def orbit_measures(dist, gen, model=None, strict_sums=False):
    """(P_orbit, ER, P_leave_no_service, theta_r_succ)."""
    r = compute_measures(dist, gen, model, strict_sums)
    return r.p_orbit, r.er, r.p_leave_no_service, r.theta_r_succ


def loss_measures(dist, gen, model=None, strict_sums=False):
    """(P_d, P_b, P_loss_c_failure)."""
    r = compute_measures(dist, gen, model, strict_sums)
    return r.p_dropped, r.p_blocked, r.p_loss_failure


def flow_measures(dist, gen, model=None, strict_sums=False):
    """(lambda_H_out, EC)."""
    r = compute_measures(dist, gen, model, strict_sums)
    return r.lambda_h_out, r.ec


def occupancy_expectations(dist, gen) -> tuple[float, float]:
    """(EB, EN) only -- the cheap reduction used by the cost objective."""
    eb = en = 0.0
    for l in range(dist.M + 1):
        lay = gen.layouts[l]
        zl = dist.z[l]
        for c in lay.cells:
            mass = float(zl[c.offset : c.offset + c.dim].sum())
            eb += c.kappa * mass
            en += c.i * mass
    return eb, en

"""Admission and transition policy shared by the generator backends.

One place answers, for a cell (kappa busy, j new-in-service, i failed):
which arrivals are admitted, which are lost, when a blocked new call joins
the orbit, and when a retrial attempt can succeed.

The default policy treats the guard rule uniformly: a retrial call is a new
call, so a successful retrial needs kappa < S - G and an idle working
channel; a failed attempt restarts its retrial phase wherever success is
impossible; and when every idle channel has failed (kappa + i = S with
i >= 1) arrivals of both types are lost outright.

The ``strict`` variant reproduces the legacy block conventions instead:
blocked new calls join the orbit for every kappa >= S - G regardless of
failed channels, attempts restart only at full occupancy kappa = S, retrial
success is allowed up to kappa = S - 1, and each busy-channel failure branch
carries the full kappa * lambda_f rate (double counting it in mixed cells).
Strict blocks can leak probability mass; the assembler reports the defect.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class AdmissionPolicy:
    servers: int
    guard: int
    strict: bool = False

    @property
    def free_limit(self) -> int:
        """Channels usable by new calls: S - G."""
        return self.servers - self.guard

    def idle_working(self, kappa: int, i: int) -> bool:
        return kappa + i < self.servers

    def handoff_admissible(self, kappa: int, i: int) -> bool:
        return self.idle_working(kappa, i)

    def new_admissible(self, kappa: int, i: int) -> bool:
        return kappa < self.free_limit and self.idle_working(kappa, i)

    def new_to_orbit(self, kappa: int, i: int) -> bool:
        if self.strict:
            return kappa >= self.free_limit
        return kappa >= self.free_limit and (self.idle_working(kappa, i) or i == 0)

    def new_lost(self, kappa: int, i: int) -> bool:
        if self.strict:
            return kappa < self.free_limit and not self.idle_working(kappa, i)
        return not self.idle_working(kappa, i) and i >= 1

    def retrial_success(self, kappa: int, j: int, i: int) -> bool:
        if self.strict:
            return (
                kappa < self.servers
                and self.idle_working(kappa, i)
                and j + 1 <= min(kappa + 1, self.free_limit)
            )
        return self.new_admissible(kappa, i)

    def retry_restart(self, kappa: int, j: int, i: int) -> bool:
        """Whether a failed attempt re-draws its retrial phase in this cell."""
        if self.strict:
            return kappa == self.servers
        return not self.retrial_success(kappa, j, i)

    def failure_kill_rates(self, kappa: int, j: int) -> tuple[float, float]:
        """Per-unit-lambda_f total kill rates for the (new, handoff) branches."""
        n_new, n_h = j, kappa - j
        if self.strict:
            # Legacy convention: every existing branch carries the full kappa.
            return (float(kappa) if n_new else 0.0, float(kappa) if n_h else 0.0)
        return float(n_new), float(n_h)


def admissible_cells(servers: int, guard: int):
    """All (kappa, j, i) triples of a level, in lexicographic order."""
    for kappa in range(servers + 1):
        for j in range(min(kappa, servers - guard) + 1):
            for i in range(servers - kappa + 1):
                yield kappa, j, i

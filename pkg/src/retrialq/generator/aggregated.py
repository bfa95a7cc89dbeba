"""Count-based (aggregated) generator blocks.

Exploits exchangeability of same-type calls: instead of tracking each call's
phase, a state keeps the number of calls per phase.  The chain is the exact
lumping of the tracked representation, all stationary measures agree, and
the orbit dimension grows polynomially in the orbit size instead of
exponentially, which is what makes deep truncation levels affordable.
"""

from __future__ import annotations

import numpy as np

from ..kron import DEFAULT_DIMENSION_CAP
from .blocks import BlockBuffer, BlockPattern
from .layout import AggregatedLayout, composition_space
from .policy import AdmissionPolicy


def _fold4(v, a, b, c, nA, nB, nC):
    """Row-major state index ((v*nA + a)*nB + b)*nC + c with broadcasting."""
    v = np.asarray(v, dtype=np.int64).reshape(-1, 1, 1, 1)
    a = np.asarray(a, dtype=np.int64).reshape(1, -1, 1, 1)
    b = np.asarray(b, dtype=np.int64).reshape(1, 1, -1, 1)
    c = np.asarray(c, dtype=np.int64).reshape(1, 1, 1, -1)
    return (((v * nA + a) * nB + b) * nC + c).ravel()


def _vals4(v, a, b, c):
    """Entry values with the same broadcasting as _fold4."""
    v = np.asarray(v, dtype=float).reshape(-1, 1, 1, 1)
    a = np.asarray(a, dtype=float).reshape(1, -1, 1, 1)
    b = np.asarray(b, dtype=float).reshape(1, 1, -1, 1)
    c = np.asarray(c, dtype=float).reshape(1, 1, 1, -1)
    return (v * a * b * c).ravel()


class AggregatedBuilder:
    """Same block interface as TrackedBuilder, on the lumped state space."""

    def __init__(self, model, strict: bool = False, cap: int = DEFAULT_DIMENSION_CAP):
        self.model = model
        self.policy = AdmissionPolicy(model.servers, model.guard, strict=strict)
        self.cap = cap
        self._layouts: dict[int, AggregatedLayout] = {}
        self._diag: dict[tuple[int, bool], BlockPattern] = {}
        self._upper: dict[int, BlockPattern] = {}
        self._lower: dict[int, BlockPattern] = {}

    def layout(self, level: int) -> AggregatedLayout:
        if level not in self._layouts:
            self._layouts[level] = AggregatedLayout(self.model, level, self.cap)
        return self._layouts[level]

    def diag_pattern(self, level: int, fold_upper: bool = False) -> BlockPattern:
        key = (level, fold_upper)
        if key not in self._diag:
            self._diag[key] = self._build_diag(level, fold_upper)
        return self._diag[key]

    def upper_pattern(self, level: int) -> BlockPattern:
        if level not in self._upper:
            self._upper[level] = self._build_upper(level)
        return self._upper[level]

    def lower_pattern(self, level: int) -> BlockPattern:
        if level not in self._lower:
            self._lower[level] = self._build_lower(level)
        return self._lower[level]

    # -------------------------------------------------------------------

    def _spaces(self, layout, cell):
        W1 = self.model.service_dim
        return (
            composition_space(cell.j, W1),
            composition_space(cell.kappa - cell.j, W1),
            layout.orbit_space,
        )

    def _build_diag(self, level: int, fold_upper: bool) -> BlockPattern:
        m, pol = self.model, self.policy
        L, W1, W2 = m.map_dim, m.service_dim, m.retrial_dim
        lay = self.layout(level)
        buf = BlockBuffer((lay.dim, lay.dim))
        c_h_rowsum = m.arrivals.c_h.sum(axis=1)
        c_n_rowsum = m.arrivals.c_n.sum(axis=1)
        vs = np.arange(L)

        for c in lay.cells:
            kappa, j, i = c.kappa, c.j, c.i
            sa, sb, sc = self._spaces(lay, c)
            nA, nB, nC = sa.size, sb.size, sc.size
            ia, ib, ic = np.arange(nA), np.arange(nB), np.arange(nC)
            all_states = c.offset + _fold4(vs, ia, ib, ic, nA, nB, nC)

            fold_h = not pol.handoff_admissible(kappa, i)
            fold_n = pol.new_lost(kappa, i) or (fold_upper and pol.new_to_orbit(kappa, i))
            v_base = m.arrivals.c0 + np.diag(c_h_rowsum + c_n_rowsum)
            v_arrh = -np.diag(c_h_rowsum) + (m.arrivals.c_h if fold_h else 0.0)
            v_arrn = -np.diag(c_n_rowsum) + (m.arrivals.c_n if fold_n else 0.0)
            for tag, mat in (("base", v_base), ("arrH", v_arrh), ("arrN", v_arrn)):
                mat = np.atleast_2d(mat)
                for v in range(L):
                    for v2 in range(L):
                        if mat[v, v2] == 0.0:
                            continue
                        rows = c.offset + _fold4(v, ia, ib, ic, nA, nB, nC)
                        cols = c.offset + _fold4(v2, ia, ib, ic, nA, nB, nC)
                        buf.add(tag, rows, cols, mat[v, v2])

            # Service phase moves (includes the sub-generator diagonal).
            for w in range(W1):
                for w2 in range(W1):
                    if m.service_new.subgen[w, w2] != 0.0 and j:
                        src, dst, mult = sa.move(w, w2)
                        rows = c.offset + _fold4(vs, src, ib, ic, nA, nB, nC)
                        cols = c.offset + _fold4(vs, dst, ib, ic, nA, nB, nC)
                        vals = _vals4(np.ones(L), mult * m.service_new.subgen[w, w2],
                                      np.ones(nB), np.ones(nC))
                        buf.add("svcN", rows, cols, vals)
                    if m.service_handoff.subgen[w, w2] != 0.0 and kappa - j:
                        src, dst, mult = sb.move(w, w2)
                        rows = c.offset + _fold4(vs, ia, src, ic, nA, nB, nC)
                        cols = c.offset + _fold4(vs, ia, dst, ic, nA, nB, nC)
                        vals = _vals4(np.ones(L), np.ones(nA),
                                      mult * m.service_handoff.subgen[w, w2], np.ones(nC))
                        buf.add("svcH", rows, cols, vals)

            # Retrial phase moves plus failed-attempt restart.
            restart = pol.retry_restart(kappa, j, i)
            gamma_block = m.retrial.subgen + (
                np.outer(m.retrial.exit2, m.retrial.init) if restart else 0.0
            )
            gamma_block = np.atleast_2d(gamma_block)
            if level:
                for w in range(W2):
                    for w2 in range(W2):
                        if gamma_block[w, w2] == 0.0:
                            continue
                        src, dst, mult = sc.move(w, w2)
                        rows = c.offset + _fold4(vs, ia, ib, src, nA, nB, nC)
                        cols = c.offset + _fold4(vs, ia, ib, dst, nA, nB, nC)
                        vals = _vals4(np.ones(L), np.ones(nA), np.ones(nB),
                                      mult * gamma_block[w, w2])
                        buf.add("retrial", rows, cols, vals)

            # Failure / repair.
            kill_n, kill_h = pol.failure_kill_rates(kappa, j)
            if kill_n + kill_h:
                buf.add("fail", all_states, all_states, -(kill_n + kill_h))
            if i:
                buf.add("repair", all_states, all_states, -float(i))
                tgt = lay.cell(kappa, j, i - 1)
                buf.add("repair", all_states,
                        tgt.offset + _fold4(vs, ia, ib, ic, nA, nB, nC), float(i))

            # Admissions.
            if pol.handoff_admissible(kappa, i):
                tgt = lay.cell(kappa + 1, j, i)
                tb = composition_space(kappa - j + 1, W1)
                for v in range(L):
                    for v2 in range(L):
                        rate = m.arrivals.c_h[v, v2]
                        if rate == 0.0:
                            continue
                        for w in range(W1):
                            if m.service_handoff.init[w] == 0.0:
                                continue
                            addb = sb.add(w)
                            rows = c.offset + _fold4(v, ia, ib, ic, nA, nB, nC)
                            cols = tgt.offset + _fold4(v2, ia, addb, ic, nA, tb.size, nC)
                            buf.add("arrH", rows, cols, rate * m.service_handoff.init[w])
            if pol.new_admissible(kappa, i):
                tgt = lay.cell(kappa + 1, j + 1, i)
                ta = composition_space(j + 1, W1)
                for v in range(L):
                    for v2 in range(L):
                        rate = m.arrivals.c_n[v, v2]
                        if rate == 0.0:
                            continue
                        for w in range(W1):
                            if m.service_new.init[w] == 0.0:
                                continue
                            adda = sa.add(w)
                            rows = c.offset + _fold4(v, ia, ib, ic, nA, nB, nC)
                            cols = tgt.offset + _fold4(v2, adda, ib, ic, ta.size, nB, nC)
                            buf.add("arrN", rows, cols, rate * m.service_new.init[w])

            # Completions and kills.
            if j:
                ra = composition_space(j - 1, W1)
                for w in range(W1):
                    src, dst, mult = sa.remove(w)
                    if src.size == 0:
                        continue
                    if m.service_new.exit1[w] != 0.0:
                        tgt = lay.cell(kappa - 1, j - 1, i)
                        rows = c.offset + _fold4(vs, src, ib, ic, nA, nB, nC)
                        cols = tgt.offset + _fold4(vs, dst, ib, ic, ra.size, nB, nC)
                        vals = _vals4(np.ones(L), mult * m.service_new.exit1[w],
                                      np.ones(nB), np.ones(nC))
                        buf.add("svcN", rows, cols, vals)
                    if kill_n:
                        tgt = lay.cell(kappa - 1, j - 1, i + 1)
                        rows = c.offset + _fold4(vs, src, ib, ic, nA, nB, nC)
                        cols = tgt.offset + _fold4(vs, dst, ib, ic, ra.size, nB, nC)
                        vals = _vals4(np.ones(L), mult * (kill_n / j),
                                      np.ones(nB), np.ones(nC))
                        buf.add("fail", rows, cols, vals)
            if kappa - j:
                rb = composition_space(kappa - j - 1, W1)
                for w in range(W1):
                    src, dst, mult = sb.remove(w)
                    if src.size == 0:
                        continue
                    if m.service_handoff.exit1[w] != 0.0:
                        tgt = lay.cell(kappa - 1, j, i)
                        rows = c.offset + _fold4(vs, ia, src, ic, nA, nB, nC)
                        cols = tgt.offset + _fold4(vs, ia, dst, ic, nA, rb.size, nC)
                        vals = _vals4(np.ones(L), np.ones(nA),
                                      mult * m.service_handoff.exit1[w], np.ones(nC))
                        buf.add("svcH", rows, cols, vals)
                    if kill_h:
                        tgt = lay.cell(kappa - 1, j, i + 1)
                        rows = c.offset + _fold4(vs, ia, src, ic, nA, nB, nC)
                        cols = tgt.offset + _fold4(vs, ia, dst, ic, nA, rb.size, nC)
                        vals = _vals4(np.ones(L), np.ones(nA),
                                      mult * (kill_h / (kappa - j)), np.ones(nC))
                        buf.add("fail", rows, cols, vals)
        return buf.freeze()

    def _build_upper(self, level: int) -> BlockPattern:
        m, pol = self.model, self.policy
        L, W1, W2 = m.map_dim, m.service_dim, m.retrial_dim
        src = self.layout(level)
        tgt = self.layout(level + 1)
        buf = BlockBuffer((src.dim, tgt.dim))
        for c in src.cells:
            if not pol.new_to_orbit(c.kappa, c.i):
                continue
            sa, sb, sc = self._spaces(src, c)
            nA, nB, nC = sa.size, sb.size, sc.size
            ia, ib = np.arange(nA), np.arange(nB)
            t = tgt.cell(c.kappa, c.j, c.i)
            tc = tgt.orbit_space
            for v in range(L):
                for v2 in range(L):
                    rate = m.arrivals.c_n[v, v2]
                    if rate == 0.0:
                        continue
                    for w in range(W2):
                        if m.retrial.init[w] == 0.0:
                            continue
                        addc = sc.add(w)
                        rows = c.offset + _fold4(v, ia, ib, np.arange(nC), nA, nB, nC)
                        cols = t.offset + _fold4(v2, ia, ib, addc, nA, nB, tc.size)
                        buf.add("arrN", rows, cols, rate * m.retrial.init[w])
        return buf.freeze()

    def _build_lower(self, level: int) -> BlockPattern:
        m, pol = self.model, self.policy
        L, W1, W2 = m.map_dim, m.service_dim, m.retrial_dim
        src = self.layout(level + 1)
        tgt = self.layout(level)
        buf = BlockBuffer((src.dim, tgt.dim))
        vs = np.arange(L)
        for c in src.cells:
            kappa, j, i = c.kappa, c.j, c.i
            sa, sb, sc = self._spaces(src, c)
            nA, nB, nC = sa.size, sb.size, sc.size
            ia, ib = np.arange(nA), np.arange(nB)
            t_same = tgt.cell(kappa, j, i)
            tc = tgt.orbit_space
            for w in range(W2):
                src_c, dst_c, mult = sc.remove(w)
                if src_c.size == 0:
                    continue
                if m.retrial.exit1[w] != 0.0:
                    rows = c.offset + _fold4(vs, ia, ib, src_c, nA, nB, nC)
                    cols = t_same.offset + _fold4(vs, ia, ib, dst_c, nA, nB, tc.size)
                    vals = _vals4(np.ones(L), np.ones(nA), np.ones(nB),
                                  mult * m.retrial.exit1[w])
                    buf.add("retrial", rows, cols, vals)
                if (
                    m.retrial.exit2[w] != 0.0
                    and pol.retrial_success(kappa, j, i)
                    and tgt.has_cell(kappa + 1, j + 1, i)
                ):
                    t_up = tgt.cell(kappa + 1, j + 1, i)
                    ta = composition_space(j + 1, W1)
                    for w_n in range(W1):
                        if m.service_new.init[w_n] == 0.0:
                            continue
                        adda = sa.add(w_n)
                        rows = c.offset + _fold4(vs, ia, ib, src_c, nA, nB, nC)
                        cols = t_up.offset + _fold4(vs, adda, ib, dst_c, ta.size, nB, tc.size)
                        vals = _vals4(np.ones(L), np.ones(nA), np.ones(nB),
                                      mult * m.retrial.exit2[w] * m.service_new.init[w_n])
                        buf.add("retrial", rows, cols, vals)
        return buf.freeze()

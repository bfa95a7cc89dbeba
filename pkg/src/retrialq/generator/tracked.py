"""Per-call (tracked) generator blocks.

States carry the phase of every individual call, ordered (MAP phase,
new-call service phases, handoff service phases, retrial phases) in
row-major factor order.  Entries are generated by direct index arithmetic
over the factor segments, which keeps every call-insertion and -removal in
the canonical factor order without explicit permutation matrices.
"""

from __future__ import annotations

import numpy as np

from ..kron import DEFAULT_DIMENSION_CAP
from .blocks import BlockBuffer, BlockPattern
from .layout import TrackedLayout
from .policy import AdmissionPolicy


def _fold(segments) -> np.ndarray:
    """Row-major index from (index, size) segments; indices broadcast."""
    out = 0
    for idx, size in segments:
        out = out * size + idx
    return np.asarray(out)


def _mesh(*sizes):
    """Index arrays spanning the product of the given segment sizes."""
    if any(s == 0 for s in sizes):
        return [np.empty(0, dtype=np.int64) for _ in sizes]
    grids = np.indices(sizes, dtype=np.int64)
    return [g.reshape(-1) for g in grids]


class TrackedBuilder:
    """Builds tagged block patterns per level, cached per level index."""

    def __init__(self, model, strict: bool = False, cap: int = DEFAULT_DIMENSION_CAP):
        self.model = model
        self.policy = AdmissionPolicy(model.servers, model.guard, strict=strict)
        self.cap = cap
        self._layouts: dict[int, TrackedLayout] = {}
        self._diag: dict[tuple[int, bool], BlockPattern] = {}
        self._upper: dict[int, BlockPattern] = {}
        self._lower: dict[int, BlockPattern] = {}

    # -- public API ---------------------------------------------------------

    def layout(self, level: int) -> TrackedLayout:
        if level not in self._layouts:
            self._layouts[level] = TrackedLayout(self.model, level, self.cap)
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
        """Pattern of Q_{level+1, level}."""
        if level not in self._lower:
            self._lower[level] = self._build_lower(level)
        return self._lower[level]

    # -- construction helpers ------------------------------------------------

    def _dims(self):
        m = self.model
        return m.map_dim, m.service_dim, m.retrial_dim

    def _build_diag(self, level: int, fold_upper: bool) -> BlockPattern:
        m, pol = self.model, self.policy
        L, W1, W2 = self._dims()
        lay = self.layout(level)
        buf = BlockBuffer((lay.dim, lay.dim))
        c_h_rowsum = m.arrivals.c_h.sum(axis=1)
        c_n_rowsum = m.arrivals.c_n.sum(axis=1)

        for c in lay.cells:
            kappa, j, i = c.kappa, c.j, c.i
            rest = c.dim // L  # states per MAP phase
            fold_h = not pol.handoff_admissible(kappa, i)
            fold_n = pol.new_lost(kappa, i) or (fold_upper and pol.new_to_orbit(kappa, i))

            # MAP phase block: base keeps the arrival-free diagonal so that
            # arrival tags scale cleanly; folded arrivals return as plain
            # phase transitions.
            v_base = m.arrivals.c0 + np.diag(c_h_rowsum + c_n_rowsum)
            v_arrh = -np.diag(c_h_rowsum) + (m.arrivals.c_h if fold_h else 0.0)
            v_arrn = -np.diag(c_n_rowsum) + (m.arrivals.c_n if fold_n else 0.0)
            for tag, mat in (("base", v_base), ("arrH", v_arrh), ("arrN", v_arrn)):
                self._emit_factor_matrix(buf, c, c, level, 0, np.atleast_2d(mat), tag)

            # Per-call phase evolution.
            for p in range(1, 1 + j):
                self._emit_factor_matrix(buf, c, c, level, p, m.service_new.subgen, "svcN")
            for p in range(1 + j, 1 + kappa):
                self._emit_factor_matrix(buf, c, c, level, p, m.service_handoff.subgen, "svcH")
            restart = pol.retry_restart(kappa, j, i)
            gamma_block = m.retrial.subgen + (
                np.outer(m.retrial.exit2, m.retrial.init) if restart else 0.0
            )
            for p in range(1 + kappa, 1 + kappa + level):
                self._emit_factor_matrix(buf, c, c, level, p, np.atleast_2d(gamma_block), "retrial")

            # Failure / repair outflow on the diagonal (counts; scaled later).
            idx = np.arange(c.dim, dtype=np.int64) + c.offset
            kill_n, kill_h = pol.failure_kill_rates(kappa, j)
            if kill_n + kill_h:
                buf.add("fail", idx, idx, -(kill_n + kill_h))
            if i:
                buf.add("repair", idx, idx, -float(i))
                # repair jump i -> i-1, phases unchanged
                tgt = lay.cell(kappa, j, i - 1)
                buf.add("repair", idx, np.arange(c.dim, dtype=np.int64) + tgt.offset, float(i))

            # Handoff admission (kappa+1, j, i).
            if pol.handoff_admissible(kappa, i):
                self._emit_arrival_insert(
                    buf, lay, lay, c, lay.cell(kappa + 1, j, i),
                    m.arrivals.c_h, m.service_handoff.init, insert_after_new=False, tag="arrH",
                )
            # New-call admission (kappa+1, j+1, i).
            if pol.new_admissible(kappa, i):
                self._emit_arrival_insert(
                    buf, lay, lay, c, lay.cell(kappa + 1, j + 1, i),
                    m.arrivals.c_n, m.service_new.init, insert_after_new=True, tag="arrN",
                )

            # Service completions and failure kills (kappa-1 cells).
            if j:
                tgt = lay.cell(kappa - 1, j - 1, i)
                self._emit_remove(buf, lay, c, tgt, "new", m.service_new.exit1, "svcN")
                if kill_n:
                    self._emit_remove(buf, lay, c, lay.cell(kappa - 1, j - 1, i + 1),
                                      "new", np.full(W1, kill_n / j), "fail")
            if kappa - j:
                tgt = lay.cell(kappa - 1, j, i)
                self._emit_remove(buf, lay, c, tgt, "handoff", m.service_handoff.exit1, "svcH")
                if kill_h:
                    self._emit_remove(buf, lay, c, lay.cell(kappa - 1, j, i + 1),
                                      "handoff", np.full(W1, kill_h / (kappa - j)), "fail")
        return buf.freeze()

    def _build_upper(self, level: int) -> BlockPattern:
        """Q_{level, level+1}: one blocked new call joins the orbit."""
        m, pol = self.model, self.policy
        L, W1, W2 = self._dims()
        src = self.layout(level)
        tgt = self.layout(level + 1)
        buf = BlockBuffer((src.dim, tgt.dim))
        for c in src.cells:
            if not pol.new_to_orbit(c.kappa, c.i):
                continue
            t = tgt.cell(c.kappa, c.j, c.i)
            phases = c.dim // L  # W1^kappa * W2^level, appended orbit phase goes last
            vv, pp = _mesh(L, phases)
            for v2 in range(L):
                col_v = m.arrivals.c_n[:, v2]
                if not col_v.any():
                    continue
                for w in range(W2):
                    if m.retrial.init[w] == 0:
                        continue
                    rows = c.offset + _fold([(vv, L), (pp, phases)])
                    cols = t.offset + _fold([(v2, L), (pp, phases), (w, W2)])
                    buf.add("arrN", rows, cols, col_v[vv] * m.retrial.init[w])
        return buf.freeze()

    def _build_lower(self, level: int) -> BlockPattern:
        """Q_{level+1, level}: a retrial call leaves (abandonment or success)."""
        m, pol = self.model, self.policy
        L, W1, W2 = self._dims()
        src = self.layout(level + 1)
        tgt = self.layout(level)
        buf = BlockBuffer((src.dim, tgt.dim))
        for c in src.cells:
            kappa, j, i = c.kappa, c.j, c.i
            # abandonment: any one of level+1 retrial calls exits via exit1
            t_same = tgt.cell(kappa, j, i)
            self._emit_remove(buf, src, c, t_same, "orbit", m.retrial.exit1, "retrial")
            # successful retrial: exit2 plus a fresh new-service phase
            if pol.retrial_success(kappa, j, i) and tgt.has_cell(kappa + 1, j + 1, i):
                t_up = tgt.cell(kappa + 1, j + 1, i)
                self._emit_success(buf, src, c, t_up, level)
        return buf.freeze()

    # -- low-level emitters ---------------------------------------------------

    def _emit_factor_matrix(self, buf, src_cell, tgt_cell, level, pos, mat, tag):
        """mat acting on factor ``pos``; source and target cell share dims."""
        dims = self._cell_dims(src_cell, level)
        d = dims[pos]
        left = int(np.prod(dims[:pos], dtype=np.int64))
        right = int(np.prod(dims[pos + 1 :], dtype=np.int64))
        ll, rr = _mesh(left, right)
        base = ll * (d * right) + rr
        mat = np.asarray(mat, dtype=float)
        for a in range(d):
            for b in range(d):
                if mat[a, b] == 0.0:
                    continue
                buf.add(tag, src_cell.offset + base + a * right,
                        tgt_cell.offset + base + b * right, mat[a, b])

    def _emit_remove(self, buf, src_layout, src_cell, tgt_cell, family, exit_vec, tag):
        """One call of ``family`` leaves: contract its factor with exit_vec."""
        L, W1, W2 = self._dims()
        kappa, j = src_cell.kappa, src_cell.j
        level = src_layout.level
        if family == "new":
            first, count, d = 1, j, W1
        elif family == "handoff":
            first, count, d = 1 + j, kappa - j, W1
        else:  # orbit
            first, count, d = 1 + kappa, level, W2
        dims = self._cell_dims(src_cell, level)
        for y in range(count):
            pos = first + y
            left = int(np.prod(dims[:pos], dtype=np.int64))
            right = int(np.prod(dims[pos + 1 :], dtype=np.int64))
            ll, rr = _mesh(left, right)
            for w in range(d):
                if exit_vec[w] == 0.0:
                    continue
                rows = src_cell.offset + ll * (d * right) + w * right + rr
                cols = tgt_cell.offset + ll * right + rr
                buf.add(tag, rows, cols, exit_vec[w])

    def _emit_arrival_insert(self, buf, src_layout, tgt_layout, src_cell, tgt_cell,
                             arr_mat, init_vec, insert_after_new, tag):
        """MAP arrival transition plus a fresh service phase for the new call.

        The admitted call's factor is appended at the end of its family
        block: after the new-call block (insert_after_new) or after the
        handoff block, which lands it exactly at the canonical position in
        the target cell's factor order.
        """
        L, W1, W2 = self._dims()
        kappa, j = src_cell.kappa, src_cell.j
        level = src_layout.level
        n_dim, h_dim, r_dim = W1**j, W1 ** (kappa - j), W2**level
        vv, nn, hh, rr = _mesh(L, n_dim, h_dim, r_dim)
        for v2 in range(L):
            col_v = arr_mat[:, v2]
            if not col_v.any():
                continue
            for w in range(W1):
                if init_vec[w] == 0.0:
                    continue
                rows = src_cell.offset + _fold(
                    [(vv, L), (nn, n_dim), (hh, h_dim), (rr, r_dim)]
                )
                if insert_after_new:
                    cols = tgt_cell.offset + _fold(
                        [(v2, L), (nn, n_dim), (w, W1), (hh, h_dim), (rr, r_dim)]
                    )
                else:
                    cols = tgt_cell.offset + _fold(
                        [(v2, L), (nn, n_dim), (hh, h_dim), (w, W1), (rr, r_dim)]
                    )
                buf.add(tag, rows, cols, col_v[vv] * init_vec[w])

    def _emit_success(self, buf, src_layout, src_cell, tgt_cell, tgt_level):
        """A retrial call connects: its retrial factor exits via exit2 and a
        new-call service factor appears at the end of the new block."""
        m = self.model
        L, W1, W2 = self._dims()
        kappa, j = src_cell.kappa, src_cell.j
        src_level = src_layout.level  # tgt_level + 1
        n_dim, h_dim = W1**j, W1 ** (kappa - j)
        for y in range(src_level):
            pre, post = W2**y, W2 ** (src_level - 1 - y)
            vv, nn, hh, pp, qq = _mesh(L, n_dim, h_dim, pre, post)
            for w_r in range(W2):
                exit2 = m.retrial.exit2[w_r]
                if exit2 == 0.0:
                    continue
                rows = src_cell.offset + _fold(
                    [(vv, L), (nn, n_dim), (hh, h_dim), (pp, pre), (w_r, W2), (qq, post)]
                )
                for w_n in range(W1):
                    if m.service_new.init[w_n] == 0.0:
                        continue
                    cols = tgt_cell.offset + _fold(
                        [(vv, L), (nn, n_dim), (w_n, W1), (hh, h_dim), (pp, pre), (qq, post)]
                    )
                    buf.add("retrial", rows, cols, exit2 * m.service_new.init[w_n])

    def _cell_dims(self, cell, level):
        L, W1, W2 = self._dims()
        return [L] + [W1] * cell.kappa + [W2] * level

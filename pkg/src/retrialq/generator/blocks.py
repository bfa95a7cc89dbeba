"""Tagged sparse block patterns.

Every generator entry is linear in exactly one rate family (a MAP arrival
block, a service sub-generator, the retrial sub-generator, the failure rate
or the repair rate), so blocks are stored as per-tag coordinate lists and
assembled for a given set of scale factors.  This lets sweeps and the
optimizer rebuild bare patterns once and re-assemble cheaply per point.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

# scale semantics:
#   base    -- always 1
#   arrH    -- multiplier on C_H          (1 reproduces the input MAP)
#   arrN    -- multiplier on C_N
#   svcN    -- multiplier on the new-call service PH (time rescale)
#   svcH    -- multiplier on the handoff service PH
#   retrial -- multiplier on the retrial PH
#   fail    -- the failure intensity lambda_f itself (patterns hold counts)
#   repair  -- the repair intensity mu_r itself
TAGS = ("base", "arrH", "arrN", "svcN", "svcH", "retrial", "fail", "repair")


def unit_scales(failure_rate: float, repair_rate: float) -> dict[str, float]:
    return {
        "base": 1.0,
        "arrH": 1.0,
        "arrN": 1.0,
        "svcN": 1.0,
        "svcH": 1.0,
        "retrial": 1.0,
        "fail": failure_rate,
        "repair": repair_rate,
    }


class BlockBuffer:
    """Append-only tagged coordinate collector for one block."""

    def __init__(self, shape: tuple[int, int]):
        self.shape = shape
        self._parts: dict[str, list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = {}

    def add(self, tag: str, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.broadcast_to(np.asarray(vals, dtype=float).ravel(), rows.shape).copy() \
            if np.ndim(vals) == 0 or np.size(vals) != rows.size \
            else np.asarray(vals, dtype=float).ravel()
        if rows.size == 0:
            return
        if tag not in TAGS:
            raise ValueError(f"unknown tag {tag!r}")
        self._parts.setdefault(tag, []).append((rows, cols, vals))

    def freeze(self) -> "BlockPattern":
        parts = {}
        for tag, chunks in self._parts.items():
            rows = np.concatenate([c[0] for c in chunks])
            cols = np.concatenate([c[1] for c in chunks])
            vals = np.concatenate([c[2] for c in chunks])
            parts[tag] = (rows, cols, vals)
        return BlockPattern(self.shape, parts)


class BlockPattern:
    """Frozen tagged coordinates; ``assemble`` produces a CSR matrix."""

    def __init__(self, shape: tuple[int, int], parts: dict):
        self.shape = shape
        self.parts = parts

    def assemble(self, scales: dict[str, float]) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for tag, (r, c, v) in self.parts.items():
            s = scales[tag]
            if s == 0.0:
                continue
            rows.append(r)
            cols.append(c)
            vals.append(v * s)
        if not rows:
            return sp.csr_matrix(self.shape)
        coo = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=self.shape
        )
        return coo.tocsr()

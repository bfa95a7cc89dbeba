"""Level layouts: cell enumeration and per-state weight vectors.

A level l gathers all cells (kappa, j, i) allowed by the state-space
constraints.  Two state representations are supported:

* ``tracked``   -- every call carries its own phase: cell dimension
                   L * W1^kappa * W2^l, factors ordered (MAP phase, new-call
                   phases, handoff-call phases, retrial phases).
* ``aggregated``-- only per-phase counts are kept (the chain is lumpable
                   under permutations of same-type calls): cell dimension
                   L * comb(j+W1-1, W1-1) * comb(kappa-j+W1-1, W1-1)
                   * comb(l+W2-1, W2-1), which grows polynomially in l.

Both expose the same weight-vector interface used by the measures module.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from ..kron import DEFAULT_DIMENSION_CAP, check_dimension
from .policy import admissible_cells


@dataclass(frozen=True)
class Cell:
    kappa: int
    j: int
    i: int
    offset: int
    dim: int


# Weight kinds consumed by the measures module; each yields, per state, the
# named contraction (an arrival row-sum over the MAP phase, or the summed
# exit intensity over the calls of one family).
WEIGHT_KINDS = ("arrival_H", "arrival_N", "exit_new", "exit_handoff", "abandon", "attempt")


class LevelLayout:
    """Base: cell bookkeeping common to both representations."""

    def __init__(self, level: int, cells: list[Cell], dim: int):
        self.level = level
        self.cells = cells
        self.dim = dim
        self._by_key = {(c.kappa, c.j, c.i): c for c in cells}

    def cell(self, kappa: int, j: int, i: int) -> Cell:
        return self._by_key[(kappa, j, i)]

    def has_cell(self, kappa: int, j: int, i: int) -> bool:
        return (kappa, j, i) in self._by_key

    def cell_weight(self, c: Cell, kind: str, model) -> np.ndarray:
        raise NotImplementedError

    def weight_vector(self, kind: str, model) -> np.ndarray:
        out = np.zeros(self.dim)
        for c in self.cells:
            out[c.offset : c.offset + c.dim] = self.cell_weight(c, kind, model)
        return out


# ---------------------------------------------------------------------------
# Tracked representation
# ---------------------------------------------------------------------------


class TrackedLayout(LevelLayout):
    def __init__(self, model, level: int, cap: int = DEFAULT_DIMENSION_CAP):
        L, W1, W2 = model.map_dim, model.service_dim, model.retrial_dim
        cells, offset = [], 0
        for kappa, j, i in admissible_cells(model.servers, model.guard):
            dim = L * W1**kappa * W2**level
            cells.append(Cell(kappa, j, i, offset, dim))
            offset += dim
        check_dimension(offset, cap)
        super().__init__(level, cells, offset)
        self._model_dims = (L, W1, W2)

    def factor_dims(self, c: Cell) -> list[int]:
        L, W1, W2 = self._model_dims
        return [L] + [W1] * c.kappa + [W2] * self.level

    def cell_weight(self, c: Cell, kind: str, model) -> np.ndarray:
        L, W1, W2 = self._model_dims
        dim = c.dim
        if kind == "arrival_H":
            return np.repeat(model.arrivals.c_h.sum(axis=1), dim // L)
        if kind == "arrival_N":
            return np.repeat(model.arrivals.c_n.sum(axis=1), dim // L)
        dims = self.factor_dims(c)
        if kind == "exit_new":
            positions, u = range(1, 1 + c.j), model.service_new.exit1
        elif kind == "exit_handoff":
            positions, u = range(1 + c.j, 1 + c.kappa), model.service_handoff.exit1
        elif kind == "abandon":
            positions, u = range(1 + c.kappa, 1 + c.kappa + self.level), model.retrial.exit1
        elif kind == "attempt":
            positions, u = range(1 + c.kappa, 1 + c.kappa + self.level), model.retrial.exit2
        else:
            raise ValueError(f"unknown weight kind {kind!r}")
        out = np.zeros(dim)
        for p in positions:
            left = int(np.prod(dims[:p], dtype=np.int64))
            right = int(np.prod(dims[p + 1 :], dtype=np.int64))
            out += np.tile(np.repeat(u, right), left)
        return out


# ---------------------------------------------------------------------------
# Aggregated (count) representation
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def composition_space(n: int, parts: int) -> "CompositionSpace":
    return CompositionSpace(n, parts)


class CompositionSpace:
    """All ways of placing n indistinguishable calls into ``parts`` phases.

    Provides vectorized transition tables: ``move`` (one call changes phase),
    ``remove`` (one call leaves, mapping into the (n-1)-call space) and
    ``add`` (one call enters, mapping into the (n+1)-call space).  Each table
    carries the source multiplicity m[w] where a call is taken from phase w.
    """

    def __init__(self, n: int, parts: int):
        self.n = n
        self.parts = parts
        self.comps = np.array(list(_compositions(n, parts)), dtype=np.int64).reshape(-1, parts)
        self.size = self.comps.shape[0]
        assert self.size == comb(n + parts - 1, parts - 1)
        self._index = {tuple(row): k for k, row in enumerate(self.comps)}

    def index(self, comp) -> int:
        return self._index[tuple(comp)]

    @lru_cache(maxsize=None)
    def move(self, w: int, w2: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src, dst, mult = [], [], []
        for k, row in enumerate(self.comps):
            if row[w] >= 1:
                t = row.copy()
                t[w] -= 1
                t[w2] += 1
                src.append(k)
                dst.append(self._index[tuple(t)])
                mult.append(row[w])
        return (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(mult, dtype=float))

    @lru_cache(maxsize=None)
    def remove(self, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        smaller = composition_space(self.n - 1, self.parts)
        src, dst, mult = [], [], []
        for k, row in enumerate(self.comps):
            if row[w] >= 1:
                t = row.copy()
                t[w] -= 1
                src.append(k)
                dst.append(smaller.index(t))
                mult.append(row[w])
        return (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(mult, dtype=float))

    @lru_cache(maxsize=None)
    def add(self, w: int) -> np.ndarray:
        """dst[k] = index of comps[k] + e_w in the (n+1)-call space."""
        bigger = composition_space(self.n + 1, self.parts)
        dst = np.empty(self.size, dtype=np.int64)
        for k, row in enumerate(self.comps):
            t = row.copy()
            t[w] += 1
            dst[k] = bigger.index(t)
        return dst

    def weights(self, u) -> np.ndarray:
        """Per-composition contraction sum_w m[w] * u[w]."""
        return self.comps @ np.asarray(u, dtype=float)


def _compositions(n: int, parts: int):
    if parts == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, parts - 1):
            yield (first,) + rest


class AggregatedLayout(LevelLayout):
    def __init__(self, model, level: int, cap: int = DEFAULT_DIMENSION_CAP):
        L, W1, W2 = model.map_dim, model.service_dim, model.retrial_dim
        self._model_dims = (L, W1, W2)
        self.orbit_space = composition_space(level, W2)
        cells, offset = [], 0
        for kappa, j, i in admissible_cells(model.servers, model.guard):
            dim = (
                L
                * composition_space(j, W1).size
                * composition_space(kappa - j, W1).size
                * self.orbit_space.size
            )
            cells.append(Cell(kappa, j, i, offset, dim))
            offset += dim
        check_dimension(offset, cap)
        super().__init__(level, cells, offset)

    def spaces(self, c: Cell):
        _, W1, _ = self._model_dims
        return (
            composition_space(c.j, W1),
            composition_space(c.kappa - c.j, W1),
            self.orbit_space,
        )

    def cell_weight(self, c: Cell, kind: str, model) -> np.ndarray:
        L, _, _ = self._model_dims
        sa, sb, sc = self.spaces(c)
        if kind == "arrival_H":
            per_v = model.arrivals.c_h.sum(axis=1)
            return np.repeat(per_v, c.dim // L)
        if kind == "arrival_N":
            per_v = model.arrivals.c_n.sum(axis=1)
            return np.repeat(per_v, c.dim // L)
        if kind == "exit_new":
            w = sa.weights(model.service_new.exit1)  # per ia
            block = np.repeat(w, sb.size * sc.size)
        elif kind == "exit_handoff":
            w = sb.weights(model.service_handoff.exit1)  # per ib
            block = np.tile(np.repeat(w, sc.size), sa.size)
        elif kind == "abandon":
            w = sc.weights(model.retrial.exit1)  # per ic
            block = np.tile(w, sa.size * sb.size)
        elif kind == "attempt":
            w = sc.weights(model.retrial.exit2)
            block = np.tile(w, sa.size * sb.size)
        else:
            raise ValueError(f"unknown weight kind {kind!r}")
        return np.tile(block, L)

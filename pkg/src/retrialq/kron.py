"""Sparse Kronecker algebra and phase-lift operator families.

Builds the k-fold Kronecker sums that describe several calls evolving in
parallel (Phi operators) and the identity-padded exit sums that describe one
of them leaving (Psi operators).  Matrices are scipy.sparse COO/CSR; Kronecker
assembly is append-only coordinate lists, converted to compressed form before
any linear solve.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

# Hard cap on any single dimension product: phase spaces grow like W^k, so
# fail loudly instead of exhausting memory.
DEFAULT_DIMENSION_CAP = 5_000_000


class DimensionCapError(RuntimeError):
    """A requested operator or state space exceeds the configured cap."""


def check_dimension(n: int, cap: int = DEFAULT_DIMENSION_CAP) -> int:
    if n > cap:
        raise DimensionCapError(f"dimension {n} exceeds cap {cap}")
    return n


def _coo(a) -> sp.coo_matrix:
    if sp.issparse(a):
        return a.tocoo()
    return sp.coo_matrix(np.asarray(a, dtype=float))


def kron_product(a, b, cap: int = DEFAULT_DIMENSION_CAP) -> sp.coo_matrix:
    """Kronecker product A (x) B with a dimension guard."""
    a, b = _coo(a), _coo(b)
    check_dimension(a.shape[0] * b.shape[0], cap)
    check_dimension(a.shape[1] * b.shape[1], cap)
    return sp.kron(a, b, format="coo")


def kron_sum(a, b, cap: int = DEFAULT_DIMENSION_CAP) -> sp.coo_matrix:
    """Kronecker sum A (+) B = A (x) I + I (x) B for square A, B."""
    a, b = _coo(a), _coo(b)
    if a.shape[0] != a.shape[1] or b.shape[0] != b.shape[1]:
        raise ValueError(f"kron_sum needs square inputs, got {a.shape} and {b.shape}")
    check_dimension(a.shape[0] * b.shape[0], cap)
    left = sp.kron(a, sp.identity(b.shape[0], format="coo"), format="coo")
    right = sp.kron(sp.identity(a.shape[0], format="coo"), b, format="coo")
    return (left + right).tocoo()


def kron_sum_power(a, k: int, cap: int = DEFAULT_DIMENSION_CAP) -> sp.coo_matrix:
    """k-fold Kronecker sum of a square matrix with itself.

    k = 0 yields the 1x1 zero matrix (the empty sum acting on the empty
    phase space).
    """
    a = _coo(a)
    if k == 0:
        return sp.coo_matrix((1, 1))
    out = a
    for _ in range(k - 1):
        out = kron_sum(out, a, cap)
    return out


def exit_sum(exit_vec, k: int, base_dim: int, cap: int = DEFAULT_DIMENSION_CAP) -> sp.coo_matrix:
    """Identity-padded exit operator: sum_y I^(y-1) (x) u (x) I^(k-y).

    Maps the k-call phase space (base_dim^k) onto the (k-1)-call space; entry
    ((..., w_y, ...), (...)) carries the exit weight u[w_y] of the departing
    call.  k = 0 yields a 1x1 zero matrix.
    """
    u = np.asarray(exit_vec, dtype=float).reshape(-1, 1)  # column: base_dim -> 1
    if u.shape[0] != base_dim:
        raise ValueError(f"exit vector length {u.shape[0]} != base dimension {base_dim}")
    if k == 0:
        return sp.coo_matrix((1, 1))
    check_dimension(base_dim**k, cap)
    u = sp.coo_matrix(u)
    terms = []
    for y in range(k):
        left = sp.identity(base_dim**y, format="coo")
        right = sp.identity(base_dim ** (k - 1 - y), format="coo")
        terms.append(sp.kron(sp.kron(left, u), right, format="coo"))
    return sum(terms[1:], terms[0]).tocoo()


def exit_replace_sum(
    exit_vec, init_vec, k: int, base_dim: int, cap: int = DEFAULT_DIMENSION_CAP
) -> sp.coo_matrix:
    """Exit-and-restart operator: sum_y I^(y-1) (x) (u init) (x) I^(k-y).

    Used both for the failed-attempt restart (u = attempt exit, init = retry
    init vector, square) and, with a foreign init dimension, for an exit that
    spawns a call in another phase family.
    """
    u = np.asarray(exit_vec, dtype=float).reshape(-1, 1)
    v = np.asarray(init_vec, dtype=float).reshape(1, -1)
    block = sp.coo_matrix(u @ v)
    if k == 0:
        return sp.coo_matrix((1, 1))
    check_dimension(base_dim ** (k - 1) * max(block.shape[1], 1) * base_dim, cap)
    terms = []
    for y in range(k):
        left = sp.identity(base_dim**y, format="coo")
        right = sp.identity(base_dim ** (k - 1 - y), format="coo")
        terms.append(sp.kron(sp.kron(left, block), right, format="coo"))
    return sum(terms[1:], terms[0]).tocoo()


# ---------------------------------------------------------------------------
# Named lifts for the model's call families.
# ---------------------------------------------------------------------------

PHI_KINDS = ("service_new", "service_handoff", "orbit", "orbit_failed_retry")
PSI_KINDS = ("exit_new", "exit_handoff", "orbit_leave", "orbit_success")


def lift(kind: str, model, k: int, cap: int = DEFAULT_DIMENSION_CAP) -> sp.coo_matrix:
    """Build the named k-call phase operator for a model.

    Phi kinds are k-fold Kronecker sums acting within the k-call space:
      service_new / service_handoff : service sub-generators,
      orbit                         : retrial sub-generator,
      orbit_failed_retry            : attempt-exit times restart, exit2 @ init.
    Psi kinds contract one call out of k:
      exit_new / exit_handoff : service completion exits,
      orbit_leave             : abandonment exit (exit1),
      orbit_success           : attempt exit spawning a new service phase
                                (exit2 (x) service-new init).
    """
    if kind == "service_new":
        return kron_sum_power(model.service_new.subgen, k, cap)
    if kind == "service_handoff":
        return kron_sum_power(model.service_handoff.subgen, k, cap)
    if kind == "orbit":
        return kron_sum_power(model.retrial.subgen, k, cap)
    if kind == "orbit_failed_retry":
        return exit_replace_sum(
            model.retrial.exit2, model.retrial.init, k, model.retrial_dim, cap
        )
    if kind == "exit_new":
        return exit_sum(model.service_new.exit1, k, model.service_dim, cap)
    if kind == "exit_handoff":
        return exit_sum(model.service_handoff.exit1, k, model.service_dim, cap)
    if kind == "orbit_leave":
        return exit_sum(model.retrial.exit1, k, model.retrial_dim, cap)
    if kind == "orbit_success":
        return exit_replace_sum(
            model.retrial.exit2, model.service_new.init, k, model.retrial_dim, cap
        )
    raise ValueError(f"unknown lift kind {kind!r}")

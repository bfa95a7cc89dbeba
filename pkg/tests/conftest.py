import numpy as np
import pytest

from retrialq.stochastic import (
    ModelParams,
    exponential_ph,
    poisson_map,
    validate_map,
    validate_ph,
)

# The reference two-phase configuration (5 channels, 3 guard channels).
C0 = [[-1.3431, 0.0230], [0.0, -17.183]]
C_H = [[0.6600, 0.0], [0.2567, 8.3351]]
C_N = [[0.6600, 0.0], [0.2567, 8.3351]]
DELTA_N = [0.0, 1.0]
L_N = [[-1.0, 1.0], [0.0, -1.0]]
DELTA_H = [0.9, 0.1]
L_H = [[-1.999, 1.99], [0.0, -0.999]]
GAMMA_INIT = [0.5, 0.5]
GAMMA = [[-2.0, 2.0], [0.0, -2.0]]
GAMMA0_LEAVE = [0.0, 1.0]
GAMMA0_RETRY = [0.0, 1.0]


def make_baseline(servers=5, guard=3, failure_rate=0.5, repair_rate=1.0) -> ModelParams:
    return ModelParams(
        arrivals=validate_map(C0, C_H, C_N),
        service_new=validate_ph(DELTA_N, L_N, name="L_N"),
        service_handoff=validate_ph(DELTA_H, L_H, name="L_H"),
        retrial=validate_ph(GAMMA_INIT, GAMMA, exit1=GAMMA0_LEAVE, exit2=GAMMA0_RETRY,
                            name="Gamma"),
        servers=servers,
        guard=guard,
        failure_rate=failure_rate,
        repair_rate=repair_rate,
    )


def make_scalar(lam_h=0.3, lam_n=0.7, mu_n=1.0, mu_h=1.2, leave=0.5, attempt=0.9,
                servers=1, guard=0, failure_rate=0.0, repair_rate=1.0) -> ModelParams:
    return ModelParams(
        arrivals=poisson_map(lam_h, lam_n),
        service_new=exponential_ph(mu_n),
        service_handoff=exponential_ph(mu_h),
        retrial=validate_ph([1.0], [[-(leave + attempt)]], exit1=[leave],
                            exit2=[attempt], name="retrial"),
        servers=servers,
        guard=guard,
        failure_rate=failure_rate,
        repair_rate=repair_rate,
    )


def random_small_model(rng: np.random.Generator) -> ModelParams:
    """Random well-formed model with small dimensions, for property tests."""
    L = int(rng.integers(1, 3))
    W1 = int(rng.integers(1, 3))
    W2 = int(rng.integers(1, 3))

    def random_map(dim):
        c_h = rng.uniform(0.05, 1.0, (dim, dim))
        c_n = rng.uniform(0.05, 1.0, (dim, dim))
        c0_off = rng.uniform(0.05, 0.5, (dim, dim))
        np.fill_diagonal(c0_off, 0.0)
        diag = -(c0_off.sum(1) + c_h.sum(1) + c_n.sum(1))
        return validate_map(c0_off + np.diag(diag), c_h, c_n, row_sum_tol=1e-10)

    def random_ph(dim, exits=1):
        off = rng.uniform(0.0, 0.6, (dim, dim))
        np.fill_diagonal(off, 0.0)
        ex = rng.uniform(0.2, 1.5, (exits, dim))
        sub = off - np.diag(off.sum(1) + ex.sum(0))
        init = rng.uniform(0.1, 1.0, dim)
        init /= init.sum()
        if exits == 1:
            return validate_ph(init, sub, name="ph")
        return validate_ph(init, sub, exit1=ex[0], exit2=ex[1], name="ph")

    servers = int(rng.integers(1, 4))
    guard = int(rng.integers(0, servers))
    return ModelParams(
        arrivals=random_map(L),
        service_new=random_ph(W1),
        service_handoff=random_ph(W1),
        retrial=random_ph(W2, exits=2),
        servers=servers,
        guard=guard,
        failure_rate=float(rng.uniform(0.0, 0.8)),
        repair_rate=float(rng.uniform(0.5, 2.0)),
    )


@pytest.fixture
def baseline():
    return make_baseline()


@pytest.fixture
def small2():
    """Two-channel failure-enabled reduction of the reference model."""
    return make_baseline(servers=2, guard=1)


@pytest.fixture
def scalar():
    return make_scalar()

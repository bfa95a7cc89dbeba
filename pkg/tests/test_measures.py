import numpy as np
import pytest

from retrialq.generator import build_generator
from retrialq.measures import (
    compute_measures,
    flow_measures,
    loss_measures,
    occupancy_expectations,
    occupancy_measures,
    orbit_measures,
)
from retrialq.solver import dense_oracle_solve, solve_truncated
from retrialq.stochastic import arrival_intensities, ph_fundamental_rate

from conftest import make_baseline, make_scalar


@pytest.fixture(scope="module")
def solved_small2():
    model = make_baseline(servers=2, guard=1)
    gen = build_generator(model, 4, backend="tracked")
    dist = solve_truncated(gen)
    return model, gen, dist


class TestDegeneracies:
    def test_zero_failure_rate(self):
        model = make_baseline(servers=2, guard=1, failure_rate=0.0)
        gen = build_generator(model, 3)
        r = compute_measures(solve_truncated(gen), gen)
        assert r.en <= 1e-12
        assert np.all(r.p_loss_failure[1:] <= 1e-12)
        # availability degenerates to P(kappa >= 1)
        busy_mass = sum(
            float(dist_z[c.offset : c.offset + c.dim].sum())
            for lay, dist_z in zip(gen.layouts, solve_truncated(gen).z)
            for c in lay.cells if c.kappa >= 1
        )
        assert r.p_channel_avail == pytest.approx(busy_mass, abs=1e-12)

    def test_light_load_rarely_drops(self):
        model = make_scalar(lam_h=0.01, lam_n=0.01, mu_n=2.0, mu_h=2.0,
                            servers=3, guard=1)
        gen = build_generator(model, 2)
        r = compute_measures(solve_truncated(gen), gen)
        assert r.p_dropped < 1e-3
        assert r.eb < 0.05
        assert r.lambda_h_out == pytest.approx(0.01, rel=1e-2)


class TestMarginals:
    def test_orbit_marginal_sums_to_one(self, solved_small2):
        model, gen, dist = solved_small2
        r = compute_measures(dist, gen)
        assert r.p_orbit.sum() == pytest.approx(1.0, abs=1e-8)
        assert r.p_new.sum() == pytest.approx(1.0, abs=1e-10)
        assert r.p_handoff.sum() == pytest.approx(1.0, abs=1e-10)
        assert r.p_loss_failure.sum() == pytest.approx(1.0, abs=1e-10)

    def test_expected_busy_consistent_with_marginals(self, solved_small2):
        model, gen, dist = solved_small2
        r = compute_measures(dist, gen)
        eb_from_marginals = (np.arange(len(r.p_new)) @ r.p_new
                             + np.arange(len(r.p_handoff)) @ r.p_handoff)
        assert r.eb == pytest.approx(eb_from_marginals, abs=1e-10)
        assert r.ec == pytest.approx(r.eb + r.er, abs=1e-10)

    def test_dense_oracle_marginal_agreement(self, solved_small2):
        model, gen, dist = solved_small2
        r_mam = compute_measures(dist, gen)
        r_dense = compute_measures(dense_oracle_solve(gen), gen)
        assert r_mam.eb == pytest.approx(r_dense.eb, abs=1e-10)
        assert r_mam.en == pytest.approx(r_dense.en, abs=1e-10)

    def test_bounds_checker(self, solved_small2):
        model, gen, dist = solved_small2
        r = compute_measures(dist, gen)
        r.check_bounds(model.servers, dist.M)


class TestFluxMeasures:
    def test_scaled_variants_consistent(self, solved_small2):
        model, gen, dist = solved_small2
        r = compute_measures(dist, gen)
        theta = ph_fundamental_rate(model.retrial)
        assert r.theta_r_succ == pytest.approx(theta * r.theta_r_succ_flux, abs=1e-12)
        assert r.p_leave_no_service == pytest.approx(
            r.p_leave_no_service_flux / theta, abs=1e-12)
        lam_h, lam_n, _ = arrival_intensities(model.arrivals)
        assert r.abandon_fraction == pytest.approx(
            r.p_leave_no_service_flux / lam_n, abs=1e-12)

    def test_handoff_flow_conservation(self, solved_small2):
        # completions + drops + failure kills must absorb the arriving flow;
        # kill flux recomputed here from the stationary vector directly
        model, gen, dist = solved_small2
        r = compute_measures(dist, gen)
        lam_h, _, _ = arrival_intensities(model.arrivals)
        kill_flux = 0.0
        for l in range(dist.M + 1):
            lay = gen.layouts[l]
            for c in lay.cells:
                mass = float(dist.z[l][c.offset : c.offset + c.dim].sum())
                kill_flux += (c.kappa - c.j) * model.failure_rate * mass
        inflow = lam_h * (1.0 - r.p_dropped)
        outflow = r.lambda_h_out + kill_flux
        # truncation leaves a sub-epsilon imbalance
        assert outflow == pytest.approx(inflow, rel=2e-2)

    def test_orbit_flow_conservation(self, solved_small2):
        # orbit inflow (blocked-to-orbit flux) = abandonment + success outflow
        model, gen, dist = solved_small2
        r = compute_measures(dist, gen)
        join_flux = 0.0
        for l in range(dist.M):  # the fold at M removes that level's joins
            lay = gen.layouts[l]
            w = lay.weight_vector("arrival_N", model)
            for c in lay.cells:
                if gen.policy.new_to_orbit(c.kappa, c.i):
                    sl = slice(c.offset, c.offset + c.dim)
                    join_flux += float(dist.z[l][sl] @ w[sl])
        assert join_flux == pytest.approx(
            r.p_leave_no_service_flux + r.theta_r_succ_flux, rel=2e-2)


class TestStrictSums:
    def test_level_ranges(self, solved_small2):
        model, gen, dist = solved_small2
        full = compute_measures(dist, gen, strict_sums=False)
        strict = compute_measures(dist, gen, strict_sums=True)
        # strict stops at M-1, so the retained mass can only drop
        assert strict.er <= full.er + 1e-15
        expect_er = sum(l * full.p_orbit[l] for l in range(dist.M))
        assert strict.er == pytest.approx(expect_er, abs=1e-12)
        assert strict.p_blocked == pytest.approx(strict.p_blocked_printed, abs=1e-15)
        # occupancy marginals under strict drop the empty-system cells
        assert strict.p_new[0] < full.p_new[0]

    def test_printed_blocking_reported_in_both_modes(self, solved_small2):
        model, gen, dist = solved_small2
        full = compute_measures(dist, gen)
        assert 0.0 <= full.p_blocked_printed <= 1.0
        assert full.p_blocked != pytest.approx(full.p_blocked_printed, abs=1e-12)


class TestSpecViews:
    def test_view_tuples(self, solved_small2):
        model, gen, dist = solved_small2
        p_new, p_handoff, eb, en, p_avail = occupancy_measures(dist, gen)
        p_orbit, er, p_leave, theta_succ = orbit_measures(dist, gen)
        p_d, p_b, p_loss = loss_measures(dist, gen)
        lam_out, ec = flow_measures(dist, gen)
        r = compute_measures(dist, gen)
        assert eb == r.eb and en == r.en and er == r.er and ec == r.ec
        assert p_d == r.p_dropped and p_b == r.p_blocked
        assert lam_out == r.lambda_h_out
        assert np.array_equal(p_orbit, r.p_orbit)

    def test_cheap_occupancy_reduction(self, solved_small2):
        model, gen, dist = solved_small2
        eb, en = occupancy_expectations(dist, gen)
        r = compute_measures(dist, gen)
        assert eb == pytest.approx(r.eb, abs=1e-12)
        assert en == pytest.approx(r.en, abs=1e-12)


class TestSerialization:
    def test_flat_table_and_csv_row(self, solved_small2):
        model, gen, dist = solved_small2
        r = compute_measures(dist, gen)
        table = r.flat_table()
        assert "EB = " in table and "P_orbit[0] = " in table
        header, row = r.csv_header(), r.csv_row()
        assert len(header) == len(row)
        assert header[: len(r.scalars())] == list(r.scalars().keys())

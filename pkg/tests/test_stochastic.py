import numpy as np
import pytest

from retrialq.stochastic import (
    ModelParams,
    ValidationError,
    arrival_correlation_variation,
    arrival_intensities,
    exponential_ph,
    exponential_retrial_ph,
    ph_fundamental_rate,
    poisson_map,
    retrial_absorption_split,
    scale_ph,
    validate_map,
    validate_ph,
)

from conftest import C0, C_H, C_N, DELTA_H, GAMMA, GAMMA_INIT, L_H, make_baseline


class TestValidateMap:
    def test_reference_matrices_accepted(self):
        m = validate_map(C0, C_H, C_N)
        assert m.row_sum_residual <= 1e-3
        assert abs(m.pi.sum() - 1.0) < 1e-12
        assert np.all(m.pi >= 0)
        # repaired chain is an exact generator
        assert np.abs(m.pi @ m.generator).max() < 1e-10
        assert np.abs(m.generator.sum(axis=1)).max() < 1e-12

    def test_one_phase_poisson_split(self):
        m = validate_map([[-2.0]], [[1.0]], [[1.0]])
        assert m.pi == pytest.approx([1.0])

    def test_negative_arrival_entry(self):
        with pytest.raises(ValidationError, match="negative arrival block entry"):
            validate_map([[-2.0, 1.0], [1.0, -2.0]],
                         [[0.5, -0.1], [0.0, 0.5]],
                         [[0.5, 0.1], [0.5, 0.5]])

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError, match="dimension mismatch"):
            validate_map([[-1.0]], [[0.5, 0.0], [0.0, 0.5]], [[0.5]])

    def test_row_sum_tolerance(self):
        with pytest.raises(ValidationError, match="row-sum residual"):
            validate_map([[-1.0]], [[0.6]], [[0.6]])

    def test_reducible_rejected(self):
        c0 = [[-1.0, 0.0], [0.0, -1.0]]
        ch = [[0.5, 0.0], [0.0, 0.5]]
        cn = [[0.5, 0.0], [0.0, 0.5]]
        with pytest.raises(ValidationError, match="reducible"):
            validate_map(c0, ch, cn)

    def test_positive_diagonal_rejected(self):
        with pytest.raises(ValidationError, match="strictly negative"):
            validate_map([[0.0]], [[0.0]], [[0.0]])


class TestArrivalIntensities:
    def test_reference_values_near_one(self):
        lam_h, lam_n, lam = arrival_intensities(validate_map(C0, C_H, C_N))
        assert abs(lam_h - 1.0) <= 0.01
        assert abs(lam_n - 1.0) <= 0.01
        assert lam == pytest.approx(lam_h + lam_n)

    def test_one_phase_exact(self):
        lam_h, lam_n, _ = arrival_intensities(poisson_map(0.7, 1.3))
        assert lam_h == pytest.approx(0.7, abs=1e-14)
        assert lam_n == pytest.approx(1.3, abs=1e-14)

    def test_symmetric_blocks_give_equal_rates(self):
        c0 = [[-3.0, 0.5], [0.3, -2.0]]
        block = [[0.5, 0.75], [0.1, 0.75]]
        m = validate_map(c0, block, block, row_sum_tol=1e-10)
        lam_h, lam_n, _ = arrival_intensities(m)
        assert lam_h == pytest.approx(lam_n, abs=1e-14)
        # independent check of pi via a direct null-space computation
        c = m.generator
        w, v = np.linalg.eig(c.T)
        pi = np.real(v[:, np.argmin(np.abs(w))])
        pi = pi / pi.sum()
        assert lam_h == pytest.approx(float(pi @ np.sum(block, axis=1)), abs=1e-10)


class TestCorrelationVariation:
    def test_one_phase_is_poisson(self):
        corr, cv, cv2 = arrival_correlation_variation(poisson_map(1.0, 1.0))
        assert corr == pytest.approx(0.0, abs=1e-12)
        assert cv == pytest.approx(1.0, abs=1e-12)
        assert cv2 == pytest.approx(1.0, abs=1e-12)

    def test_reference_matrices(self):
        # The published lag-1 correlation 0.2211 is reproduced; the published
        # variation coefficient 12.33 is NOT reproduced by the printed
        # matrices under either the plain or the squared convention, so the
        # computed values are frozen here instead.
        corr, cv, cv2 = arrival_correlation_variation(validate_map(C0, C_H, C_N))
        assert corr == pytest.approx(0.2211, abs=5e-3)
        assert corr == pytest.approx(0.2210931, abs=1e-6)
        assert cv == pytest.approx(1.3655731, abs=1e-6)
        assert cv2 == pytest.approx(1.8647898, abs=1e-6)


class TestPhDistribution:
    def test_reference_rates(self):
        model = make_baseline()
        assert ph_fundamental_rate(model.service_new) == pytest.approx(1.0, abs=1e-9)
        assert ph_fundamental_rate(model.retrial) == pytest.approx(4.0 / 3.0, abs=1e-9)
        # the printed handoff matrices do not give the stated 1.85
        assert ph_fundamental_rate(model.service_handoff) == pytest.approx(
            0.6910038062283737, abs=1e-9)

    def test_single_phase_rate(self):
        assert ph_fundamental_rate(exponential_ph(2.5)) == pytest.approx(2.5)

    def test_closure_invariant(self):
        model = make_baseline()
        for d in (model.service_new, model.service_handoff, model.retrial):
            total = d.subgen.sum(axis=1) + sum(d.exits)
            assert np.abs(total).max() < 1e-12

    def test_bad_init_rejected(self):
        with pytest.raises(ValidationError, match="sum to 1"):
            validate_ph([0.5, 0.6], GAMMA, name="g")

    def test_bad_closure_rejected(self):
        with pytest.raises(ValidationError, match="sum to 0"):
            validate_ph(GAMMA_INIT, GAMMA, exit1=[0.0, 1.0], exit2=[0.5, 1.0], name="g")

    def test_negative_exit_rejected(self):
        with pytest.raises(ValidationError):
            validate_ph([1.0], [[-1.0]], exit1=[-0.5], exit2=[1.5], name="g")


class TestScalePh:
    def test_identity(self):
        d = validate_ph(DELTA_H, L_H, name="h")
        scaled = scale_ph(d, ph_fundamental_rate(d))
        assert np.allclose(scaled.subgen, d.subgen, atol=1e-14)

    def test_exponential_forced(self):
        scaled = scale_ph(exponential_ph(1.0), 2.0)
        assert scaled.subgen[0, 0] == pytest.approx(-2.0)

    def test_target_rate_reached(self):
        d = validate_ph([0.0, 1.0], [[-1.0, 1.0], [0.0, -1.0]], name="n")
        assert ph_fundamental_rate(scale_ph(d, 3.0)) == pytest.approx(3.0, abs=1e-12)

    @pytest.mark.parametrize("rate", [0.1, 1.0, 10.0])
    def test_round_trip(self, rate):
        model = make_baseline()
        for d in (model.service_new, model.service_handoff, model.retrial):
            assert ph_fundamental_rate(scale_ph(d, rate)) == pytest.approx(rate, abs=1e-10)

    def test_split_preserved(self):
        model = make_baseline()
        before = retrial_absorption_split(model.retrial)
        after = retrial_absorption_split(scale_ph(model.retrial, 5.0))
        assert before == pytest.approx(after, abs=1e-14)

    def test_nonpositive_target(self):
        with pytest.raises(ValueError):
            scale_ph(exponential_ph(1.0), 0.0)


class TestModelParams:
    def test_guard_bound(self):
        with pytest.raises(ValidationError, match="guard"):
            make_baseline(servers=3, guard=3)

    def test_service_dimension_mismatch(self):
        model = make_baseline()
        with pytest.raises(ValidationError, match="share a dimension"):
            ModelParams(arrivals=model.arrivals, service_new=exponential_ph(1.0),
                        service_handoff=model.service_handoff, retrial=model.retrial,
                        servers=2, guard=0, failure_rate=0.0, repair_rate=1.0)

    def test_retrial_needs_two_exits(self):
        model = make_baseline()
        with pytest.raises(ValidationError, match="both exit vectors"):
            ModelParams(arrivals=model.arrivals, service_new=model.service_new,
                        service_handoff=model.service_handoff,
                        retrial=exponential_ph(1.0),
                        servers=2, guard=0, failure_rate=0.0, repair_rate=1.0)

    def test_exponential_retrial_split(self):
        d = exponential_retrial_ph(2.0, 0.25)
        assert d.exit1 == pytest.approx([0.5])
        assert d.exit2 == pytest.approx([1.5])

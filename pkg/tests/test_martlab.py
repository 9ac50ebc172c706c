"""Martingale machinery: exponential functionals, the scalar exponential
bound, the pathwise occupation estimate and the clock-change Laplace bound.
"""

import numpy as np
import pytest

from hypokernel import levy
from hypokernel.fieldlang import MatrixField, parse_matrix
from hypokernel.martlab import (
    SemimartingaleSpec,
    band_nodes,
    bracket_event_probability,
    esy_bound_check,
    exp_supermartingale_mean,
    kt_pathwise_check,
    kt_refinement_study,
    laplace_time_change_check,
    shipped_integrand_suite,
)


class TestBandNodes:
    def test_quadrature_matches_closed_forms(self):
        # integral of |z|^2 over the band against the truncated second moments
        for d in (1, 2):
            spec = levy.StableSpec(alpha=1.0, dim=d)
            nodes, weights = band_nodes(spec, 0.01, 0.5, 200, 16)
            got = float(weights @ (np.linalg.norm(nodes, axis=1) ** 2))
            want = levy.truncated_second_moment(spec, 0.5) - \
                levy.truncated_second_moment(spec, 0.01)
            assert got == pytest.approx(want, rel=1e-4)

    def test_tail_mass_band(self):
        spec = levy.StableSpec(alpha=1.2, dim=2)
        nodes, weights = band_nodes(spec, 0.05, 0.9, 400, 32)
        got = float(weights.sum())
        want = levy.tail_mass(spec, 0.05) - levy.tail_mass(spec, 0.9)
        assert got == pytest.approx(want, rel=1e-4)


class TestExpSupermartingale:
    def test_zero_integrands(self):
        spec = SemimartingaleSpec(label="zero", stable=levy.StableSpec(1.0, 1),
                                  brownian_xi=np.zeros(1))
        res = exp_supermartingale_mean(spec, 1.0, 500, master_seed=0)
        assert res.estimate == pytest.approx(1.0, abs=1e-14)
        assert res.se == pytest.approx(0.0, abs=1e-14)

    def test_pure_brownian_exact_martingale(self):
        spec = SemimartingaleSpec(label="bm", brownian_xi=np.array([1.0]))
        res = exp_supermartingale_mean(spec, 1.0, 50_000, master_seed=1)
        assert abs(res.estimate - 1.0) <= 3 * res.se
        assert res.within_contract

    def test_stable_jump_integrand(self):
        spec = SemimartingaleSpec(
            label="jump", stable=levy.StableSpec(1.0, 1),
            jump_eta=lambda r: np.minimum(r, 1.0), record_threshold=0.01,
            delta=1.0)
        res = exp_supermartingale_mean(spec, 1.0, 50_000, master_seed=2)
        assert res.within_contract

    def test_flow_form_contract(self, kinetic):
        spec = SemimartingaleSpec(
            label="wave", model=kinetic, V=parse_matrix("0;0|0;sin(x2)", 2),
            u=np.array([0.0, 1.0]), v_index=2, delta=0.2, steps=48,
            band_radial=12, band_angular=8)
        res = exp_supermartingale_mean(spec, 0.5, 300, master_seed=3)
        assert res.within_contract
        assert res.se > 0  # nontrivial integrand

    def test_shipped_suite_within_contract(self):
        for spec in shipped_integrand_suite():
            n = 20_000 if spec.kind == "direct" else 200
            res = exp_supermartingale_mean(spec, 0.5, n, master_seed=4)
            assert res.within_contract, spec.label

    def test_spec_validation(self, kinetic):
        with pytest.raises(ValueError, match="unit"):
            SemimartingaleSpec(label="x", model=kinetic, V=kinetic.sigma,
                               u=np.array([2.0, 0.0]))
        with pytest.raises(ValueError):
            SemimartingaleSpec(label="x")
        from hypokernel.fieldlang import ModelSpec, parse_vector

        varying = ModelSpec(1, 1.0, parse_vector("0", 1), parse_matrix("sin(x1)", 1))
        with pytest.raises(ValueError, match="constant"):
            SemimartingaleSpec(label="x", model=varying,
                               V=MatrixField.constant(np.eye(1)),
                               u=np.array([1.0]))


class TestEsyBound:
    def test_endpoints_and_random_points(self):
        res = esy_bound_check(10_000, seed=0)
        assert res.scalar_violations == 0
        assert res.scalar_max_ratio <= 1.0
        assert res.assembled_violations == 0
        assert res.passed

    def test_scalar_values(self):
        # |e^1 - 1 - 1| = e - 2 <= 2
        assert abs(np.e - 2.0) <= 2.0
        assert abs(np.expm1(0.0) - 0.0) == 0.0


class TestKTPathwise:
    def make_spec(self, kinetic, **kw):
        base = dict(label="kin", model=kinetic, V=kinetic.sigma,
                    u=np.array([1.0, 0.0]), delta=0.1, epsilon=0.05,
                    horizon=0.5, steps=64)
        base.update(kw)
        return SemimartingaleSpec(**base)

    def test_trivial_branch(self, kinetic):
        spec = self.make_spec(kinetic, epsilon=0.9)
        rep = kt_pathwise_check(spec, "first", 10, 0)
        assert rep.trivial
        assert rep.violation_count == 0

    def test_zero_field(self, kinetic):
        spec = self.make_spec(kinetic, V=MatrixField.constant(np.zeros((2, 2))))
        for which in ("first", "second"):
            rep = kt_pathwise_check(spec, which, 20, 0)
            assert rep.violation_count == 0
            assert np.all(rep.lhs <= 1e-15)

    def test_kinetic_acceptance_settings(self, kinetic):
        spec = self.make_spec(kinetic)
        for which in ("first", "second"):
            rep = kt_pathwise_check(spec, which, 100, 0, steps=128)
            assert rep.violation_count == 0
            assert rep.kappa >= 1.0

    def test_refinement_nonincreasing(self, kinetic):
        spec = self.make_spec(kinetic)
        study = kt_refinement_study(spec, "second", 50, [32, 64], master_seed=0)
        assert study["nonincreasing"]
        assert study["final_fraction"] == 0.0

    def test_nonconstant_field_nontrivial_terms(self, kinetic):
        spec = self.make_spec(kinetic, V=parse_matrix("0;0|0;sin(x2)", 2),
                              u=np.array([0.0, 1.0]), steps=48,
                              band_radial=12, band_angular=6,
                              inner_radial=8, inner_angular=6)
        rep1 = kt_pathwise_check(spec, "first", 12, 0)
        assert rep1.violation_count == 0
        assert rep1.lhs.max() > 0  # jump integrand actually contributes
        rep2 = kt_pathwise_check(spec, "second", 12, 0)
        assert rep2.violation_count == 0

    def test_which_validation(self, kinetic):
        spec = self.make_spec(kinetic)
        with pytest.raises(ValueError):
            kt_pathwise_check(spec, "third", 5, 0)
        direct = SemimartingaleSpec(label="d", brownian_xi=np.array([1.0]))
        with pytest.raises(ValueError, match="flow"):
            kt_pathwise_check(direct, "first", 5, 0)


class TestLaplaceBound:
    def test_exact_lhs_alpha_one(self):
        rows = laplace_time_change_check(1.0, 1.0, 1.0, [1.0])
        assert rows[0].lhs == pytest.approx(np.exp(-2 * np.sqrt(np.pi)), rel=1e-12)

    def test_zero_integrand(self):
        rows = laplace_time_change_check(1.0, 0.0, 1.0, [1.0, 10.0])
        for r in rows:
            assert r.lhs == 1.0 and r.bound == 1.0 and r.margin == 0.0

    @pytest.mark.parametrize("alpha", [0.6, 1.0, 1.5])
    def test_margins_nonnegative(self, alpha):
        rows = laplace_time_change_check(alpha, 1.0, 1.0,
                                         [1.0, 3.0, 10.0, 100.0, 1e4])
        for r in rows:
            assert r.margin >= 0.0

    def test_mc_column_matches_lhs(self):
        rows = laplace_time_change_check(1.0, 1.0, 1.0, [1.0, 10.0],
                                         n_paths=40_000, master_seed=7)
        for r in rows:
            assert abs(r.mc_estimate - r.lhs) <= 4 * r.mc_se + 1e-6

    def test_negative_level_rejected(self):
        with pytest.raises(ValueError):
            laplace_time_change_check(1.0, -1.0, 1.0, [1.0])


class TestBracketEvent:
    def test_kinetic_zero_frequency(self, kinetic):
        rep = bracket_event_probability(kinetic, kinetic.sigma,
                                        np.array([1.0, 0.0]), 0.5, 0.2, 0.5,
                                        1000, master_seed=4)
        assert rep.frequency == 0.0
        assert "delta^(-beta/2)" in rep.bound_formula

    def test_degenerate_direction(self, degenerate):
        # u K V and u K [b, V] both vanish along e2 for the degenerate control,
        # so the joint event would need a positive threshold from nothing
        rep = bracket_event_probability(degenerate, degenerate.sigma,
                                        np.array([0.0, 1.0]), 0.5, 0.2, 0.5,
                                        300, master_seed=5)
        assert rep.frequency == 0.0

    def test_delta_near_one_bounded(self, kinetic):
        rep = bracket_event_probability(kinetic, kinetic.sigma,
                                        np.array([0.0, 1.0]), 0.5, 0.95, 0.5,
                                        200, master_seed=6)
        assert 0.0 <= rep.frequency <= 1.0

    def test_beta_range(self, kinetic):
        with pytest.raises(ValueError, match="beta"):
            bracket_event_probability(kinetic, kinetic.sigma,
                                      np.array([1.0, 0.0]), 0.5, 0.2, 1.5, 10)

    def test_nonconstant_sigma_rejected(self):
        from hypokernel.fieldlang import ModelSpec, parse_vector

        m = ModelSpec(1, 1.0, parse_vector("0", 1), parse_matrix("sin(x1)", 1))
        with pytest.raises(ValueError, match="constant"):
            bracket_event_probability(m, MatrixField.constant(np.eye(1)),
                                      np.array([1.0]), 0.5, 0.2, 0.5, 10)

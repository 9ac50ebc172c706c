"""Generator quadrature, density estimation and the heat-kernel probes."""

import numpy as np
import pytest

from hypokernel.density import (
    GeneratorToleranceError,
    QuadratureConfig,
    apply_generator,
    apply_generator_batch,
    estimate_density,
    fp_residual,
    silverman_iqr_bandwidth,
    smoothness_probe,
    tv_continuity_probe,
)
from hypokernel.fieldlang import Const, parse_expr
from hypokernel.fieldlang.expr import Add, Mul, simplify
from hypokernel.flow import SimConfig, endpoint_batch
from hypokernel.models import builtin_model

SHARP_QUAD = QuadratureConfig(r_min=1e-4, r_max=4e3, radial_nodes=32768)
MID_QUAD = QuadratureConfig(r_min=1e-4, r_max=200.0, radial_nodes=4000)


class TestApplyGenerator:
    def test_constant_annihilated(self, pure_stable):
        gv = apply_generator(pure_stable, Const(1.0), [0.0])
        assert gv.value == 0.0

    def test_cos_symbol_within_attached_bound(self, pure_stable):
        f = parse_expr("cos(x1)", 1)
        gv = apply_generator(pure_stable, f, [0.0], SHARP_QUAD, f_sup=1.0)
        target = -np.sqrt(2 * np.pi)
        assert abs(gv.value - target) <= gv.error_estimate
        assert gv.error_estimate < 1e-3

    def test_symbol_identity_several_frequencies(self, pure_stable):
        # generator of cos(xi x) at 0 equals -phi(xi^2/2) within the bound
        from hypokernel.levy import StableSpec, laplace_exponent

        for xi in (0.5, 2.0):
            f = parse_expr(f"cos({xi}*x1)", 1)
            gv = apply_generator(pure_stable, f, [0.0], SHARP_QUAD, f_sup=1.0)
            target = -laplace_exponent(StableSpec(1.0, 1), xi * xi / 2)
            assert abs(gv.value - target) <= gv.error_estimate + 5e-4

    def test_drift_only_exact(self):
        m = builtin_model("linear", matrix=[[0.5]], sigma=[[0.0]])
        gv = apply_generator(m, parse_expr("x1^2", 1), [2.0])
        assert gv.value == pytest.approx(0.5 * 2.0 * 2 * 2.0, rel=1e-12)
        assert gv.jump_part == pytest.approx(0.0, abs=1e-12)

    def test_linearity(self, pure_stable):
        f1 = parse_expr("sin(x1)*x1", 1)
        f2 = parse_expr("exp(-x1^2)", 1)
        comb = simplify(Add(Mul(Const(2.0), f1), Mul(Const(-3.0), f2)))
        q = QuadratureConfig(r_min=1e-4, r_max=100.0, radial_nodes=2000)
        va = apply_generator(pure_stable, comb, [0.4], q).value
        vb = 2 * apply_generator(pure_stable, f1, [0.4], q).value \
            - 3 * apply_generator(pure_stable, f2, [0.4], q).value
        assert va == pytest.approx(vb, abs=1e-10)

    def test_translation_invariance(self):
        # identity diffusion with constant drift commutes with translation
        m = builtin_model("linear", matrix=[[0.0]])
        f = parse_expr("exp(-x1^2)", 1)
        shifted = parse_expr("exp(-(x1 - 1)^2)", 1)
        q = MID_QUAD
        a = apply_generator(m, f, [0.3], q).value
        b = apply_generator(m, shifted, [1.3], q).value
        assert a == pytest.approx(b, rel=1e-9)

    def test_tolerance_error_quotes_bound(self, pure_stable):
        f = parse_expr("cos(x1)", 1)
        with pytest.raises(GeneratorToleranceError, match="tail mass"):
            apply_generator(pure_stable, f, [0.0],
                            QuadratureConfig(r_max=10.0, tolerance=1e-3),
                            f_sup=1.0)

    def test_batch_matches_pointwise(self, pure_stable):
        f = parse_expr("exp(-x1^2)*cos(x1)", 1)
        pts = np.array([[-0.5], [0.0], [0.8]])
        q = QuadratureConfig(r_min=1e-3, r_max=50.0, radial_nodes=500)
        batch = apply_generator_batch(pure_stable, f, pts, q)
        for i, x in enumerate(pts):
            assert batch[i] == pytest.approx(
                apply_generator(pure_stable, f, x, q).value, rel=1e-10)

    def test_kinetic_includes_transport(self, kinetic):
        # b . grad f = x2 d/dx1 f
        f = parse_expr("x1", 2)
        gv = apply_generator(kinetic, f, [0.0, 1.7],
                             QuadratureConfig(r_min=1e-3, r_max=50.0,
                                              radial_nodes=400))
        assert gv.drift_part == pytest.approx(1.7, rel=1e-12)


class TestEstimateDensity:
    def test_cauchy_value_at_origin(self, pure_stable):
        cfg = SimConfig(t_end=1.0, steps=8, seed=0)
        _, states, _ = endpoint_batch(pure_stable, [0.0], cfg, 100_000, 21)
        axis = np.linspace(-80, 80, 1601)
        dg = estimate_density(states[:, 0, 0], axis)
        target = 1.0 / (np.pi * np.sqrt(2 * np.pi))
        assert dg.values[800] == pytest.approx(target, rel=0.05)
        assert np.all(dg.values >= 0)
        assert 0.97 <= dg.mass <= 1.03

    def test_spread_shrinks_with_samples(self, pure_stable):
        cfg = SimConfig(t_end=1.0, steps=8, seed=0)
        _, states, _ = endpoint_batch(pure_stable, [0.0], cfg, 40_000, 5)
        x = states[:, 0, 0]
        axis = np.linspace(-30, 30, 301)

        def spread(block):
            vals = [estimate_density(x[k * block:(k + 1) * block], axis,
                                     bandwidth=0.8).values[150]
                    for k in range(10)]
            return np.std(vals)

        assert spread(4000) < spread(2000)

    def test_two_dimensional_mass(self, kinetic):
        # tails are Cauchy-like in both coordinates, so the mass window needs
        # a wide grid
        cfg = SimConfig(t_end=0.5, steps=64, seed=1)
        _, states, _ = endpoint_batch(kinetic, [0.0, 0.0], cfg, 20_000, 9)
        axes = [np.linspace(-40, 40, 201)] * 2
        dg = estimate_density(states[:, 0, :], axes)
        assert 0.97 <= dg.mass <= 1.03

    def test_bandwidth_rule_heavy_tail_safe(self, rng):
        # the rule uses the IQR only, so one huge outlier cannot blow it up
        x = rng.standard_normal(5000)
        bw0 = silverman_iqr_bandwidth(x)
        x[0] = 1e9
        bw1 = silverman_iqr_bandwidth(x)
        assert bw1 == pytest.approx(bw0, rel=0.05)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            estimate_density(np.array([1.0]), np.linspace(0, 1, 5))
        with pytest.raises(ValueError):
            estimate_density(np.random.default_rng(0).normal(size=(100, 2)),
                             [np.linspace(0, 1, 5)])


class TestFpResidual:
    def test_constant_is_exact(self, pure_stable):
        rows = fp_residual(pure_stable, [("one", Const(1.0))], [0.0], [1.0], 200,
                           master_seed=1)
        assert rows[0].residual == 0.0
        assert rows[0].within_contract

    def test_pure_stable_cos(self, pure_stable):
        rows = fp_residual(
            pure_stable, [("cos(x1)", parse_expr("cos(x1)", 1))], [0.0], [1.0],
            8000, QuadratureConfig(r_min=1e-4, r_max=2e3, radial_nodes=16384),
            master_seed=5)
        r = rows[0]
        assert r.within_contract
        # both sides near -sqrt(2 pi) E cos(X_t) = -sqrt(2 pi) e^{-sqrt(2 pi)}
        eigen = -np.sqrt(2 * np.pi) * np.exp(-np.sqrt(2 * np.pi))
        assert r.rhs == pytest.approx(eigen, abs=0.05)

    def test_kinetic_gaussian_bump(self, kinetic):
        rows = fp_residual(
            kinetic, [("bump", parse_expr("exp(-x1^2-x2^2)", 2))],
            [0.0, 0.0], [0.5], 8000,
            QuadratureConfig(r_min=1e-3, r_max=100.0, radial_nodes=600),
            master_seed=6)
        assert rows[0].within_contract


class TestContinuityProbe:
    def test_zero_offset_zero_distance(self, pure_stable):
        rep = tv_continuity_probe(pure_stable, 1.0, [0.0], [[0.0], [0.1]], 2000,
                                  np.linspace(-50, 50, 401), steps=8,
                                  master_seed=1)
        assert rep.rows[0].l1_distance == 0.0

    def test_shift_bound_driftless(self, pure_stable):
        # driftless identity-diffusion law is a translate: the L1 distance is
        # bounded by |h| sup|rho'| plus estimation noise
        axis = np.linspace(-60, 60, 1201)
        h = 0.25
        rep = tv_continuity_probe(pure_stable, 1.0, [0.0], [[h]], 20_000, axis,
                                  steps=8, master_seed=2)
        scale = np.sqrt(2 * np.pi)
        sup_drho = 2.0 / (np.pi * scale * scale) * 3 * np.sqrt(3) / 8  # Cauchy
        assert rep.rows[0].l1_distance <= h * 2 * sup_drho * 1.5 + 0.02

    def test_monotone_ladder_both_models(self, pure_stable, kinetic):
        offsets1 = [[x] for x in (0.0078125, 0.03125, 0.125)]
        rep1 = tv_continuity_probe(pure_stable, 1.0, [0.0], offsets1, 5000,
                                   np.linspace(-60, 60, 601), steps=8,
                                   master_seed=3)
        d1 = [r.l1_distance for r in rep1.rows]
        assert all(b > a for a, b in zip(d1, d1[1:]))
        offsets2 = [[x, 0.0] for x in (0.0078125, 0.03125, 0.125)]
        rep2 = tv_continuity_probe(kinetic, 1.0, [0.0, 0.0], offsets2, 5000,
                                   [np.linspace(-25, 25, 121)] * 2, steps=32,
                                   master_seed=3)
        d2 = [r.l1_distance for r in rep2.rows]
        assert all(b > a for a, b in zip(d2, d2[1:]))


class TestSmoothnessProbe:
    def test_symmetric_mode_derivative(self, pure_stable):
        rows = smoothness_probe(pure_stable, [1.0], [0.0], 30_000,
                                [np.linspace(-40, 40, 801)], master_seed=4)
        g = rows[0]
        # derivative at the mode vanishes by symmetry; compare the central
        # finite difference there to the overall derivative scale
        assert g.sup_grad > 0
        assert np.isfinite(g.sup_second)

    def test_derivative_grows_as_t_shrinks(self, kinetic):
        rows = smoothness_probe(kinetic, [0.25, 1.0], [0.0, 0.0], 15_000,
                                [np.linspace(-25, 25, 161)] * 2, master_seed=5)
        assert rows[0].sup_grad > rows[1].sup_grad
        for r in rows:
            assert np.isfinite(r.sup_density)
            assert np.isfinite(r.sup_grad)
            assert np.isfinite(r.sup_second)

    def test_hypothesis_checks(self, degenerate):
        with pytest.raises(ValueError, match="kappa_hat"):
            smoothness_probe(degenerate, [0.5], [0.0, 0.0], 100,
                             [np.linspace(-5, 5, 21)] * 2)
        from hypokernel.fieldlang import ModelSpec, parse_matrix, parse_vector

        varying = ModelSpec(1, 1.0, parse_vector("0", 1),
                            parse_matrix("1 + tanh(x1)/4", 1))
        with pytest.raises(ValueError, match="constant"):
            smoothness_probe(varying, [0.5], [0.0], 100,
                             [np.linspace(-5, 5, 21)])

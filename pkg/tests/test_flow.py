"""Jump-SDE integration, flow matrices and covariance assembly."""

import numpy as np
import pytest
from scipy.linalg import expm

from hypokernel.fieldlang import (
    MatrixField,
    ModelSpec,
    VectorField,
    parse_matrix,
    parse_vector,
)
from hypokernel.flow import (
    PathAbortError,
    SimConfig,
    covariance_batch,
    endpoint_batch,
    malliavin_covariance,
    propagate_flow,
    simulate,
    validate_truncation,
)
from hypokernel.models import builtin_model


class TestSimulate:
    def test_frozen_when_fields_vanish(self):
        m = ModelSpec(2, 1.0, VectorField.zero(2),
                      MatrixField.constant(np.zeros((2, 2))))
        traj = simulate(m, [1.0, -2.0], SimConfig(t_end=1.0, steps=20, seed=0))
        assert np.allclose(traj.states, [1.0, -2.0])

    def test_char_function_of_endpoint(self, pure_stable):
        cfg = SimConfig(t_end=1.0, steps=8, seed=0)
        _, ends, aborted = endpoint_batch(pure_stable, [0.5], cfg, 60_000, 13)
        assert aborted == 0
        x = ends[:, 0, 0] - 0.5
        for xi in (0.5, 1.0, 2.0):
            assert abs(np.cos(xi * x).mean() - np.exp(-np.sqrt(2 * np.pi) * xi)) < 0.02

    def test_mean_reversion(self):
        # alpha = 1.5 so the mean exists; E X_1 = x0 e^-1
        m = builtin_model("linear", alpha=1.5, matrix=[[-1.0]])
        cfg = SimConfig(t_end=1.0, steps=256, seed=0)
        _, ends, _ = endpoint_batch(m, [1.0], cfg, 100_000, 17)
        x = ends[:, 0, 0]
        se = x.std(ddof=1) / np.sqrt(x.size)
        assert abs(x.mean() - np.exp(-1.0)) <= 3 * se

    def test_weak_order_bias_shrinks(self):
        # for drift -x the scheme's mean is exactly (1-h)^steps: the sampled
        # mean must sit within 3 SE of it, and that mean's distance to e^-1
        # shrinks at first order when steps double
        m = builtin_model("linear", alpha=1.5, matrix=[[-1.0]])
        errs = {}
        ses = {}
        for steps in (8, 32):
            cfg = SimConfig(t_end=1.0, steps=steps, seed=0)
            _, ends, _ = endpoint_batch(m, [1.0], cfg, 400_000, 99,
                                        tag=f"weak{steps}")
            x = ends[:, 0, 0]
            errs[steps] = abs(x.mean() - np.exp(-1.0))
            ses[steps] = x.std(ddof=1) / np.sqrt(x.size)
            euler_mean = (1.0 - 1.0 / steps) ** steps
            assert abs(x.mean() - euler_mean) <= 3 * ses[steps]
        scheme_bias = {s: abs((1.0 - 1.0 / s) ** s - np.exp(-1.0)) for s in (8, 32)}
        assert scheme_bias[32] < 0.3 * scheme_bias[8]
        assert errs[32] < errs[8] + 3 * (ses[8] + ses[32])

    def test_determinism_bit_identical(self, kinetic):
        cfg = SimConfig(t_end=1.0, steps=50, seed=42)
        a = simulate(kinetic, [0.1, 0.2], cfg)
        b = simulate(kinetic, [0.1, 0.2], cfg)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.sub_increments, b.sub_increments)

    def test_seed_changes_path(self, kinetic):
        a = simulate(kinetic, [0.0, 0.0], SimConfig(t_end=1.0, steps=50, seed=1))
        b = simulate(kinetic, [0.0, 0.0], SimConfig(t_end=1.0, steps=50, seed=2))
        assert not np.array_equal(a.states, b.states)

    def test_nan_aborts_with_step_info(self):
        # drift x^3 explodes in finite time under big jumps
        m = ModelSpec(1, 1.0, parse_vector("x1^3", 1),
                      MatrixField.constant(5.0 * np.eye(1)))
        with pytest.raises(PathAbortError, match="step"), \
                np.errstate(over="ignore", invalid="ignore"):
            for seed in range(40):
                simulate(m, [2.0], SimConfig(t_end=4.0, steps=60, seed=seed))

    def test_truncation_condition_enforced(self):
        # steep diffusion gradient: 2 delta sup|grad sigma| > 1 must refuse
        m = ModelSpec(1, 1.0, parse_vector("0", 1), parse_matrix("sin(4*x1)", 1))
        with pytest.raises(ValueError, match="truncation"):
            validate_truncation(m, SimConfig(t_end=1.0, steps=10, delta=1.0))
        validate_truncation(m, SimConfig(t_end=1.0, steps=10, delta=0.1))

    def test_bad_x0(self, kinetic):
        with pytest.raises(ValueError):
            simulate(kinetic, [0.0], SimConfig(t_end=1.0, steps=5, seed=0))


class TestFlow:
    def test_identity_for_constant_sigma_no_drift(self, pure_stable):
        traj = simulate(pure_stable, [0.0], SimConfig(t_end=1.0, steps=30, seed=3))
        fl = propagate_flow(pure_stable, traj)
        assert np.allclose(fl.forward, np.eye(1))
        assert np.allclose(fl.inverse, np.eye(1))

    def test_linear_drift_matches_matrix_exponential(self, rng):
        mat = rng.normal(size=(2, 2)) * 0.5
        m = builtin_model("linear", matrix=mat.tolist())
        traj = simulate(m, [0.5, -1.0], SimConfig(t_end=1.0, steps=2000, seed=5))
        fl = propagate_flow(m, traj)
        assert np.abs(fl.forward[-1] - expm(mat)).max() < 5.0 / 2000

    def test_inverse_defect(self, kinetic):
        traj = simulate(kinetic, [0.2, 0.1], SimConfig(t_end=1.0, steps=200, seed=7))
        fl = propagate_flow(kinetic, traj)
        assert fl.max_inverse_defect <= 1e-8

    def test_det_equals_exp_divergence(self, rng):
        # det J_t = exp(int div b) for constant sigma, to discretization error
        m = builtin_model("linear", matrix=[[0.3, 0.4], [-0.2, -0.5]])
        steps = 1000
        traj = simulate(m, [1.0, 1.0], SimConfig(t_end=1.0, steps=steps, seed=9))
        fl = propagate_flow(m, traj)
        h = 1.0 / steps
        div = np.trace(m.drift_jacobian()(traj.states[:-1]), axis1=-2, axis2=-1)
        assert np.log(np.linalg.det(fl.forward[-1])) == \
            pytest.approx(float((div * h).sum()), abs=5e-3)

    def test_nonconstant_sigma_flow_invertible(self):
        m = ModelSpec(1, 1.0, parse_vector("0", 1),
                      parse_matrix("1 + tanh(x1)/4", 1))
        cfg = SimConfig(t_end=0.5, steps=100, seed=11, delta=0.5)
        traj = simulate(m, [0.0], cfg)
        fl = propagate_flow(m, traj)
        assert fl.max_inverse_defect <= 1e-8


class TestCovariance:
    def test_pure_stable_equals_clock(self, pure_stable):
        cfg = SimConfig(t_end=1.0, steps=40, seed=7)
        traj = simulate(pure_stable, [0.0], cfg)
        fl = propagate_flow(pure_stable, traj)
        cs = malliavin_covariance(traj, fl, pure_stable)
        assert cs.matrix[0, 0] == pytest.approx(traj.sub_increments.sum(), rel=1e-12)

    def test_requires_clock_increments(self, pure_stable):
        cfg = SimConfig(t_end=1.0, steps=20, seed=1, mode="jump-record", delta=1.0)
        traj = simulate(pure_stable, [0.0], cfg)
        fl = propagate_flow(pure_stable, traj)
        with pytest.raises(ValueError, match="grid"):
            malliavin_covariance(traj, fl, pure_stable)

    def test_degenerate_null_direction(self, degenerate):
        batch = covariance_batch(degenerate, [0.0, 0.0],
                                 SimConfig(t_end=1.0, steps=30, seed=0), 1000, 3)
        u = np.array([0.0, 1.0])
        vals = np.einsum("i,nij,j->n", u, batch.matrices, u)
        assert np.abs(vals).max() <= 1e-12

    def test_symmetric_psd(self, kinetic):
        batch = covariance_batch(kinetic, [0.0, 0.0],
                                 SimConfig(t_end=1.0, steps=50, seed=2), 500, 5)
        asym = np.abs(batch.matrices - np.swapaxes(batch.matrices, -1, -2)).max()
        assert asym <= 1e-10
        assert batch.lambda_min.min() >= -1e-10

    def test_refinement_of_truncated_mean(self, kinetic):
        # raw means do not exist at alpha = 1 (the spectrum inherits the
        # stable clock tail), so the refinement contract is checked on the
        # module's truncated-mean convention
        from hypokernel.malliavin import truncated_mean

        means = {}
        for steps in (64, 128):
            b = covariance_batch(kinetic, [0.0, 0.0],
                                 SimConfig(t_end=1.0, steps=steps, seed=1), 5000, 77)
            means[steps] = truncated_mean(b.lambda_min, 1e-3)
        assert abs(means[128] - means[64]) / means[64] < 0.05

    def test_batch_matches_single_path_law(self, pure_stable):
        # batch engine endpoints are exact stable increments; check the
        # Laplace transform of the summed clock against the closed form
        batch = covariance_batch(pure_stable, [0.0],
                                 SimConfig(t_end=1.0, steps=16, seed=0), 40_000, 11)
        vals = np.exp(-batch.det)  # det = S_1 here
        target = np.exp(-2 * np.sqrt(np.pi))
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - target) <= 3 * se

    def test_endpoint_times_must_be_on_grid(self, pure_stable):
        cfg = SimConfig(t_end=1.0, steps=10, seed=0)
        with pytest.raises(ValueError, match="grid"):
            endpoint_batch(pure_stable, [0.0], cfg, 10, 0, at_times=[0.55])

"""Rank condition and uniform-condition scan checks."""

import numpy as np
import pytest

from hypokernel.fieldlang import (
    Add,
    Const,
    MatrixField,
    ModelSpec,
    Mul,
    Var,
    VectorField,
    simplify,
)
from hypokernel.hormander import halton_points, rank_at, scan_grid, uh_kappa
from hypokernel.models import builtin_model


def linear_model(mat: np.ndarray, sig: np.ndarray) -> ModelSpec:
    from functools import reduce

    d = mat.shape[0]
    b = VectorField(tuple(
        simplify(reduce(Add, (Mul(Const(float(mat[i, j])), Var(j + 1))
                              for j in range(d))))
        for i in range(d)), d)
    return ModelSpec(d, 1.0, b, MatrixField.constant(sig))


class TestRankAt:
    def test_kinetic(self, kinetic):
        rep = rank_at(kinetic, [0.4, 0.9], n_max=4)
        assert rep.ranks == [1, 2, 2, 2]
        assert rep.n_needed == 2
        assert rep.min_singular_value > 0

    def test_identity(self):
        m = builtin_model("pure-stable", alpha=1.0, dim=2)
        assert rank_at(m, [0.0, 0.0], 1).n_needed == 1

    def test_degenerate_control_fails(self, degenerate):
        rep = rank_at(degenerate, [0.3, -0.2], n_max=6)
        assert rep.ranks == [1] * 6
        assert rep.n_needed is None
        assert not rep.full_rank

    def test_rank_monotone_in_n(self, rng):
        for _ in range(3):
            mat = rng.normal(size=(3, 3))
            sig = np.zeros((3, 3))
            sig[:, 0] = rng.normal(size=3)
            rep = rank_at(linear_model(mat, sig), rng.normal(size=3), n_max=5)
            assert all(b >= a for a, b in zip(rep.ranks, rep.ranks[1:]))
            assert max(rep.ranks) <= 3

    def test_column_sign_flip_invariance(self, kinetic, rng):
        from hypokernel.fieldlang import bracket_sequence

        levels = bracket_sequence(kinetic, 3)
        x = rng.normal(size=2)
        mats = [lv(x) for lv in levels]
        flipped = [m * np.array([1.0, -1.0]) for m in mats]  # flip a column
        assert np.linalg.matrix_rank(np.hstack(mats)) == \
            np.linalg.matrix_rank(np.hstack(flipped))

    def test_rotation_invariance(self, rng):
        # conjugating drift, diffusion and the point by a rotation preserves ranks
        mat = rng.normal(size=(2, 2))
        sig = np.array([[1.0, 0.0], [0.0, 0.0]])
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        x = rng.normal(size=2)
        base = rank_at(linear_model(mat, sig), x, n_max=3)
        conj = rank_at(linear_model(rot @ mat @ rot.T, rot @ sig), rot @ x, n_max=3)
        assert base.ranks == conj.ranks

    def test_kalman_index_oracle(self, rng):
        for _ in range(3):
            mat = rng.normal(size=(3, 3))
            sig = np.zeros((3, 3))
            sig[:, 0] = rng.normal(size=3)
            got = rank_at(linear_model(mat, sig), rng.normal(size=3), n_max=5).n_needed
            kalman = None
            blocks = []
            for n in range(1, 6):
                blocks.append(np.linalg.matrix_power(mat, n - 1) @ sig)
                if np.linalg.matrix_rank(np.hstack(blocks)) == 3:
                    kalman = n
                    break
            assert got == kalman

    def test_n_max_domain(self, kinetic):
        with pytest.raises(ValueError):
            rank_at(kinetic, [0.0, 0.0], 0)


class TestUhKappa:
    def test_kinetic_exact_one(self, kinetic):
        rep = uh_kappa(kinetic, 2, points_per_axis=21)
        assert abs(rep.kappa_hat - 1.0) <= 1e-10
        assert rep.positive
        assert np.all(np.abs(rep.lambda_min_samples - 1.0) <= 1e-10)

    def test_scaled_identity(self):
        s = 3.0
        m = ModelSpec(2, 1.0, VectorField.zero(2),
                      MatrixField.constant(s * np.eye(2)))
        rep = uh_kappa(m, 1, points_per_axis=5)
        assert rep.kappa_hat == pytest.approx(s * s, abs=1e-12)

    def test_degenerate_zero(self, degenerate):
        for j0 in (1, 2, 3):
            assert uh_kappa(degenerate, j0, points_per_axis=5).kappa_hat == \
                pytest.approx(0.0, abs=1e-14)

    def test_refinement_decreases(self, rng):
        # minimum over a superset of points can only go down
        b = VectorField((Var(2), Const(0.0)), 2)
        sig = MatrixField.constant(np.array([[0.2, 0.0], [0.0, 1.0]]))
        m = ModelSpec(2, 1.0, b, sig)
        coarse = scan_grid(m, 5)
        fine = np.vstack([coarse, halton_points(m, 40)])
        k_coarse = uh_kappa(m, 2, points=coarse).kappa_hat
        k_fine = uh_kappa(m, 2, points=fine).kappa_hat
        assert k_fine <= k_coarse + 1e-15

    def test_nonconstant_sigma_flag(self):
        from hypokernel.fieldlang import parse_matrix, parse_vector

        m = ModelSpec(1, 1.0, parse_vector("0", 1), parse_matrix("sin(x1)", 1))
        uh_kappa(m, 1, points_per_axis=3)  # allowed without the flag
        with pytest.raises(ValueError, match="constant"):
            uh_kappa(m, 1, points_per_axis=3, require_constant_sigma=True)

    def test_empty_plan_rejected(self, kinetic):
        with pytest.raises(ValueError):
            uh_kappa(kinetic, 2, points=np.zeros((0, 2)))
        with pytest.raises(ValueError):
            uh_kappa(kinetic, 0)

    def test_report_serializable(self, kinetic):
        rep = uh_kappa(kinetic, 2, points_per_axis=3)
        d = rep.to_dict()
        assert d["kappa_hat"] == rep.kappa_hat
        assert "upper estimate" in d["note"]

"""Expression language: parsing, differentiation, brackets."""

import numpy as np
import pytest

from hypokernel.fieldlang import (
    BracketBudgetError,
    Const,
    FieldSyntaxError,
    MatrixField,
    ModelSpec,
    Var,
    VectorField,
    bracket_sequence,
    differentiate,
    drift_bracket,
    evaluate,
    parse_expr,
    parse_field,
    parse_matrix,
    parse_vector,
    simplify,
    to_string,
)
from hypokernel.fieldlang.expr import Add, Mul

RANDOM_EXPRS = [
    "x1^3*sin(x2) - exp(x1*x2)/(2 + cos(x1)) + tanh(x2)^2",
    "(x1 - x2)^4/4 + (x1 + 1)*(x2 - 3)",
    "exp(-x1^2 - x2^2)*cos(2*x1)",
    "x2/(1 + x1^2) - sin(x1*x2)",
]


class TestParsing:
    def test_kinetic_drift(self):
        f = parse_field("x2; 0", 2)
        assert isinstance(f, VectorField)
        assert np.allclose(f(np.array([1.0, 3.0])), [3.0, 0.0])

    def test_zero_field(self):
        f = parse_field("0; 0", 2)
        assert np.allclose(f(np.array([1.0, 2.0])), [0.0, 0.0])

    def test_matrix_detection(self):
        m = parse_field("0;0|0;1", 2)
        assert isinstance(m, MatrixField)
        assert np.allclose(m(np.zeros(2)), [[0, 0], [0, 1]])

    @pytest.mark.parametrize("text", ["x1^2*x2; sin(x1)"] + [f"{e}; 0" for e in RANDOM_EXPRS])
    def test_round_trip_semantic_identity(self, text, rng):
        f = parse_vector(text, 2)
        g = parse_vector(f.to_text(), 2)
        pts = rng.normal(size=(100, 2))
        a, b = f(pts), g(pts)
        scale = np.maximum(np.abs(a), 1.0)
        assert np.all(np.abs(a - b) <= 1e-12 * scale)

    def test_simplified_round_trip(self, rng):
        for text in RANDOM_EXPRS:
            e = parse_expr(text, 2)
            s = simplify(e)
            r = parse_expr(to_string(s), 2)
            pts = rng.normal(size=(50, 2))
            assert np.allclose(evaluate(e, pts), evaluate(r, pts), rtol=1e-10, atol=1e-10)

    def test_syntax_error_position(self):
        with pytest.raises(FieldSyntaxError, match="position"):
            parse_expr("x1 + * 2", 2)

    def test_variable_out_of_range(self):
        with pytest.raises(FieldSyntaxError, match="x3 out of range"):
            parse_field("x3; 0", 2)

    def test_non_integer_exponent(self):
        with pytest.raises(FieldSyntaxError, match="integer"):
            parse_expr("x1^2.5", 2)

    def test_division_by_zero_constant(self):
        with pytest.raises(FieldSyntaxError, match="division"):
            parse_expr("x1/0", 2)

    def test_component_count(self):
        with pytest.raises(FieldSyntaxError, match="components"):
            parse_vector("x1; x2; x1", 2)
        with pytest.raises(FieldSyntaxError, match="matrix"):
            parse_matrix("1;0|0", 2)

    def test_unknown_name(self):
        with pytest.raises(FieldSyntaxError, match="unknown name"):
            parse_expr("cosh(x1)", 1)


class TestDifferentiate:
    def test_power_product(self):
        e = parse_expr("x1^2*x2", 2)
        d = differentiate(e, 1)
        pts = np.random.default_rng(0).normal(size=(20, 2))
        assert np.allclose(evaluate(d, pts), 2 * pts[:, 0] * pts[:, 1])

    def test_sin(self):
        assert to_string(differentiate(parse_expr("sin(x1)", 1), 1)) == "cos(x1)"

    @pytest.mark.parametrize("text", RANDOM_EXPRS)
    @pytest.mark.parametrize("i", [1, 2])
    def test_finite_difference_oracle(self, text, i, rng):
        e = parse_expr(text, 2)
        d = differentiate(e, i)
        h = 1e-5
        for _ in range(5):
            pt = rng.uniform(-1.2, 1.2, size=2)
            step = np.zeros(2)
            step[i - 1] = h
            fd = (evaluate(e, pt + step) - evaluate(e, pt - step)) / (2 * h)
            sym = evaluate(d, pt)
            assert sym == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_jacobian_convention(self):
        # row = component index, column = variable index
        f = parse_vector("x2; x1^2", 2)
        jac = f.jacobian()(np.array([1.5, -2.0]))
        assert jac[0, 1] == pytest.approx(1.0)
        assert jac[1, 0] == pytest.approx(2 * 1.5)
        assert jac[0, 0] == jac[1, 1] == 0.0


class TestDriftBracket:
    def test_kinetic_unit_vector(self):
        b = parse_vector("x2; 0", 2)
        v = VectorField((Const(0.0), Const(1.0)), 2)
        out = drift_bracket(b, v)
        assert np.allclose(out(np.zeros(2)), [-1.0, 0.0])

    def test_zero_drift(self):
        v = parse_vector("sin(x1); x2^3", 2)
        out = drift_bracket(VectorField.zero(2), v)
        assert np.allclose(out(np.array([0.3, -0.4])), 0.0)

    def test_linear_drift_constant_field(self, rng):
        # [Bx, const v] = -B v
        for _ in range(3):
            mat = rng.normal(size=(3, 3))
            v = rng.normal(size=3)
            b = VectorField(tuple(
                simplify(Add(Add(Mul(Const(mat[i, 0]), Var(1)),
                                 Mul(Const(mat[i, 1]), Var(2))),
                             Mul(Const(mat[i, 2]), Var(3))))
                for i in range(3)), 3)
            vf = VectorField(tuple(Const(float(x)) for x in v), 3)
            out = drift_bracket(b, vf)(rng.normal(size=3))
            assert np.allclose(out, -mat @ v, atol=1e-12)

    def test_bilinearity(self, rng):
        b = parse_vector("x2; sin(x1)", 2)
        v1 = parse_vector("sin(x1); x2^2", 2)
        v2 = parse_vector("exp(x2); x1*x2", 2)
        c1, c2 = 2.5, -1.25
        comb = VectorField(tuple(
            simplify(Add(Mul(Const(c1), v1.components[i]),
                         Mul(Const(c2), v2.components[i])))
            for i in range(2)), 2)
        pts = rng.normal(size=(40, 2))
        lhs = drift_bracket(b, comb)(pts)
        rhs = c1 * drift_bracket(b, v1)(pts) + c2 * drift_bracket(b, v2)(pts)
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            drift_bracket(VectorField.zero(2), VectorField.zero(3))


class TestBracketSequence:
    def test_kinetic_levels(self, kinetic):
        levels = bracket_sequence(kinetic, 3)
        x = np.array([0.7, -0.3])
        assert np.allclose(levels[0](x), [[0, 0], [0, 1]])
        assert np.allclose(levels[1](x), [[0, -1], [0, 0]])
        assert np.allclose(levels[2](x), 0.0)

    def test_identity_no_drift(self):
        m = ModelSpec(2, 1.0, VectorField.zero(2), MatrixField.constant(np.eye(2)))
        levels = bracket_sequence(m, 3)
        assert np.allclose(levels[0](np.zeros(2)), np.eye(2))
        assert np.allclose(levels[1](np.zeros(2)), 0.0)
        assert np.allclose(levels[2](np.zeros(2)), 0.0)

    def test_linear_matrix_powers(self, rng):
        # B_{j+1} = -B B_j for linear drift, so B_j = (-B)^(j-1) sigma
        mat = rng.normal(size=(3, 3))
        sig = rng.normal(size=(3, 3))
        b = VectorField(tuple(
            simplify(Add(Add(Mul(Const(mat[i, 0]), Var(1)),
                             Mul(Const(mat[i, 1]), Var(2))),
                         Mul(Const(mat[i, 2]), Var(3))))
            for i in range(3)), 3)
        model = ModelSpec(3, 1.0, b, MatrixField.constant(sig))
        levels = bracket_sequence(model, 4)
        x = rng.normal(size=3)
        for j, lv in enumerate(levels, start=1):
            assert np.allclose(lv(x), np.linalg.matrix_power(-mat, j - 1) @ sig,
                               atol=1e-10)

    def test_kalman_rank_equality(self, rng):
        # rank of the stacked evaluated brackets equals the Kalman rank of
        # (-grad b, sigma), which is sign-independent
        mat = rng.normal(size=(3, 3))
        sig = np.zeros((3, 3))
        sig[:, 0] = rng.normal(size=3)
        b = VectorField(tuple(
            simplify(Add(Add(Mul(Const(mat[i, 0]), Var(1)),
                             Mul(Const(mat[i, 1]), Var(2))),
                         Mul(Const(mat[i, 2]), Var(3))))
            for i in range(3)), 3)
        model = ModelSpec(3, 1.0, b, MatrixField.constant(sig))
        levels = bracket_sequence(model, 3)
        x = rng.normal(size=3)
        stacked = np.hstack([lv(x) for lv in levels])
        kalman = np.hstack([np.linalg.matrix_power(mat, j) @ sig for j in range(3)])
        assert np.linalg.matrix_rank(stacked) == np.linalg.matrix_rank(kalman)

    def test_node_budget_error_names_level(self):
        # quartic drift makes iterated brackets grow quickly
        b = parse_vector("x2^4 + x1^3*x2; x1^4 + x1*x2^3", 2)
        sig = parse_matrix("1;0|0;1", 2)
        model = ModelSpec(2, 1.0, b, sig)
        with pytest.raises(BracketBudgetError, match="level"):
            bracket_sequence(model, 8, node_budget=500)

    def test_needs_positive_levels(self, kinetic):
        with pytest.raises(ValueError):
            bracket_sequence(kinetic, 0)


class TestModelSpec:
    def test_alpha_domain(self):
        with pytest.raises(ValueError):
            ModelSpec(1, 2.5, VectorField.zero(1), MatrixField.constant(np.eye(1)))

    def test_dim_consistency(self):
        with pytest.raises(ValueError):
            ModelSpec(2, 1.0, VectorField.zero(3), MatrixField.constant(np.eye(2)))

    def test_scan_box(self):
        with pytest.raises(ValueError):
            ModelSpec(1, 1.0, VectorField.zero(1), MatrixField.constant(np.eye(1)),
                      scan_lo=[1.0], scan_hi=[-1.0])

    def test_constant_detection(self, kinetic):
        assert kinetic.sigma_is_constant
        m = ModelSpec(1, 1.0, VectorField.zero(1), parse_matrix("sin(x1)", 1))
        assert not m.sigma_is_constant

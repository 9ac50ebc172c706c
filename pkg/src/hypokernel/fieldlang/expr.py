"""Expression AST: evaluation, exact differentiation, conservative simplify."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "tanh")

_NUMPY_FN = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}


class Expr:
    """Immutable expression node. Subclasses are frozen dataclasses."""

    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 1-based, printed as x<index>


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def _eval(e: Expr, x: np.ndarray):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return x[..., e.index - 1]
    if isinstance(e, Add):
        return _eval(e.left, x) + _eval(e.right, x)
    if isinstance(e, Sub):
        return _eval(e.left, x) - _eval(e.right, x)
    if isinstance(e, Mul):
        return _eval(e.left, x) * _eval(e.right, x)
    if isinstance(e, Div):
        return _eval(e.left, x) / _eval(e.right, x)
    if isinstance(e, Pow):
        return _eval(e.base, x) ** e.exponent
    if isinstance(e, Call):
        return _NUMPY_FN[e.fn](_eval(e.arg, x))
    if isinstance(e, Neg):
        return -_eval(e.arg, x)
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e: Expr, x: np.ndarray):
    """Evaluate e at points x of shape (..., d); returns shape (...).

    Constant subtrees evaluate to scalars internally; the result is
    broadcast to the point-batch shape (read-only view when broadcast).
    """
    x = np.asarray(x, dtype=float)
    res = np.asarray(_eval(e, x), dtype=float)
    if res.shape != x.shape[:-1]:
        res = np.broadcast_to(res, x.shape[:-1])
    return res


def count_nodes(e: Expr) -> int:
    if isinstance(e, (Const, Var)):
        return 1
    if isinstance(e, (Add, Sub, Mul, Div)):
        return 1 + count_nodes(e.left) + count_nodes(e.right)
    if isinstance(e, Pow):
        return 1 + count_nodes(e.base)
    if isinstance(e, (Call, Neg)):
        return 1 + count_nodes(e.arg)
    raise TypeError(f"not an expression node: {e!r}")


def max_var_index(e: Expr) -> int:
    if isinstance(e, Const):
        return 0
    if isinstance(e, Var):
        return e.index
    if isinstance(e, (Add, Sub, Mul, Div)):
        return max(max_var_index(e.left), max_var_index(e.right))
    if isinstance(e, Pow):
        return max_var_index(e.base)
    if isinstance(e, (Call, Neg)):
        return max_var_index(e.arg)
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------


def differentiate(e: Expr, i: int) -> Expr:
    """Exact partial derivative with respect to x_i (1-based), simplified."""
    return simplify(_diff(e, i))


def _diff(e: Expr, i: int) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Add):
        return Add(_diff(e.left, i), _diff(e.right, i))
    if isinstance(e, Sub):
        return Sub(_diff(e.left, i), _diff(e.right, i))
    if isinstance(e, Mul):
        return Add(Mul(_diff(e.left, i), e.right), Mul(e.left, _diff(e.right, i)))
    if isinstance(e, Div):
        num = Sub(Mul(_diff(e.left, i), e.right), Mul(e.left, _diff(e.right, i)))
        return Div(num, Pow(e.right, 2))
    if isinstance(e, Pow):
        if e.exponent == 0:
            return ZERO
        return Mul(Mul(Const(float(e.exponent)), Pow(e.base, e.exponent - 1)), _diff(e.base, i))
    if isinstance(e, Call):
        inner = _diff(e.arg, i)
        if e.fn == "sin":
            outer: Expr = Call("cos", e.arg)
        elif e.fn == "cos":
            outer = Neg(Call("sin", e.arg))
        elif e.fn == "exp":
            outer = Call("exp", e.arg)
        else:  # tanh
            outer = Sub(ONE, Pow(Call("tanh", e.arg), 2))
        return Mul(outer, inner)
    if isinstance(e, Neg):
        return Neg(_diff(e.arg, i))
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Simplification: constant folding, neutral elements, like-term merging for
# sums of products.  Deliberately conservative so output is deterministic.
# ---------------------------------------------------------------------------


def _is_const(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


def _sum_terms(e: Expr, sign: float, out: list[tuple[float, Expr]]):
    """Flatten nested sums into signed terms."""
    if isinstance(e, Add):
        _sum_terms(e.left, sign, out)
        _sum_terms(e.right, sign, out)
    elif isinstance(e, Sub):
        _sum_terms(e.left, sign, out)
        _sum_terms(e.right, -sign, out)
    elif isinstance(e, Neg):
        _sum_terms(e.arg, -sign, out)
    else:
        out.append((sign, e))


def _product_factors(e: Expr, out: list[Expr]) -> float:
    """Flatten nested products; returns the accumulated constant coefficient."""
    if isinstance(e, Mul):
        return _product_factors(e.left, out) * _product_factors(e.right, out)
    if isinstance(e, Neg):
        return -_product_factors(e.arg, out)
    if isinstance(e, Const):
        return e.value
    out.append(e)
    return 1.0


def _rebuild_product(coeff: float, factors: list[Expr]) -> Expr:
    if coeff == 0.0:
        return ZERO
    # merge repeated factors into integer powers
    merged: list[Expr] = []
    counts: list[int] = []
    for f in sorted(factors, key=to_string):
        if merged and f == merged[-1]:
            counts[-1] += 1
        else:
            merged.append(f)
            counts.append(1)
    parts: list[Expr] = []
    for f, c in zip(merged, counts):
        if isinstance(f, Pow):
            f, c = f.base, f.exponent * c
        if c == 1:
            parts.append(f)
        else:
            parts.append(Pow(f, c))
    expr: Expr | None = None
    for p in parts:
        expr = p if expr is None else Mul(expr, p)
    if expr is None:
        return Const(coeff)
    if coeff == 1.0:
        return expr
    if coeff == -1.0:
        return Neg(expr)
    return Mul(Const(coeff), expr)


def simplify(e: Expr) -> Expr:
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, (Add, Sub)):
        left = simplify(e.left)
        right = simplify(e.right)
        terms: list[tuple[float, Expr]] = []
        _sum_terms(Add(left, right) if isinstance(e, Add) else Sub(left, right), 1.0, terms)
        const_part = 0.0
        collected: dict[str, tuple[float, Expr]] = {}
        for sign, term in terms:
            factors: list[Expr] = []
            coeff = sign * _product_factors(term, factors)
            if not factors:
                const_part += coeff
                continue
            base = _rebuild_product(1.0, factors)
            key = to_string(base)
            if key in collected:
                collected[key] = (collected[key][0] + coeff, base)
            else:
                collected[key] = (coeff, base)
        result: Expr | None = None
        for key in sorted(collected):
            coeff, base = collected[key]
            if coeff == 0.0:
                continue
            term_expr = _rebuild_product(coeff, [base])
            if result is None:
                result = term_expr
            elif isinstance(term_expr, Neg):
                result = Sub(result, term_expr.arg)
            elif isinstance(term_expr, Mul) and _is_const(term_expr.left) and term_expr.left.value < 0:
                result = Sub(result, _rebuild_product(-term_expr.left.value, [term_expr.right]))
            else:
                result = Add(result, term_expr)
        if result is None:
            return Const(const_part)
        if const_part == 0.0:
            return result
        if const_part < 0:
            return Sub(result, Const(-const_part))
        return Add(result, Const(const_part))
    if isinstance(e, Mul):
        left = simplify(e.left)
        right = simplify(e.right)
        factors: list[Expr] = []
        coeff = _product_factors(Mul(left, right), factors)
        return _rebuild_product(coeff, factors)
    if isinstance(e, Div):
        num = simplify(e.left)
        den = simplify(e.right)
        if _is_const(num, 0.0):
            return ZERO
        if _is_const(den, 1.0):
            return num
        if _is_const(den) and den.value != 0.0:
            if _is_const(num):
                return Const(num.value / den.value)
            return simplify(Mul(Const(1.0 / den.value), num))
        return Div(num, den)
    if isinstance(e, Pow):
        base = simplify(e.base)
        if e.exponent == 0:
            return ONE
        if e.exponent == 1:
            return base
        if _is_const(base):
            return Const(base.value ** e.exponent)
        if isinstance(base, Pow):
            return Pow(base.base, base.exponent * e.exponent)
        if isinstance(base, Neg):
            inner = Pow(base.arg, e.exponent)
            return inner if e.exponent % 2 == 0 else Neg(inner)
        return Pow(base, e.exponent)
    if isinstance(e, Call):
        arg = simplify(e.arg)
        if _is_const(arg):
            return Const(float(_NUMPY_FN[e.fn](arg.value)))
        return Call(e.fn, arg)
    if isinstance(e, Neg):
        arg = simplify(e.arg)
        if _is_const(arg):
            return Const(-arg.value)
        if isinstance(arg, Neg):
            return arg.arg
        return Neg(arg)
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Printing.  Output re-parses to a semantically identical expression.
# ---------------------------------------------------------------------------

_PREC_SUM = 1
_PREC_PROD = 2
_PREC_UNARY = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _print(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        if e.value < 0:
            return f"-{_fmt_number(-e.value)}", _PREC_UNARY
        return _fmt_number(e.value), _PREC_ATOM
    if isinstance(e, Var):
        return f"x{e.index}", _PREC_ATOM
    if isinstance(e, Add):
        ls, _ = _print_wrap(e.left, _PREC_SUM)
        rs, _ = _print_wrap(e.right, _PREC_SUM)
        return f"{ls} + {rs}", _PREC_SUM
    if isinstance(e, Sub):
        ls, _ = _print_wrap(e.left, _PREC_SUM)
        rs, _ = _print_wrap(e.right, _PREC_SUM + 1)
        return f"{ls} - {rs}", _PREC_SUM
    if isinstance(e, Mul):
        ls, _ = _print_wrap(e.left, _PREC_PROD)
        rs, _ = _print_wrap(e.right, _PREC_PROD + 1)
        return f"{ls}*{rs}", _PREC_PROD
    if isinstance(e, Div):
        ls, _ = _print_wrap(e.left, _PREC_PROD)
        rs, _ = _print_wrap(e.right, _PREC_PROD + 1)
        return f"{ls}/{rs}", _PREC_PROD
    if isinstance(e, Pow):
        bs, _ = _print_wrap(e.base, _PREC_POW + 1)
        return f"{bs}^{e.exponent}", _PREC_POW
    if isinstance(e, Call):
        return f"{e.fn}({to_string(e.arg)})", _PREC_ATOM
    if isinstance(e, Neg):
        s, _ = _print_wrap(e.arg, _PREC_UNARY)
        return f"-{s}", _PREC_UNARY
    raise TypeError(f"not an expression node: {e!r}")


def _print_wrap(e: Expr, min_prec: int) -> tuple[str, int]:
    s, prec = _print(e)
    if prec < min_prec:
        return f"({s})", _PREC_ATOM
    return s, prec


def to_string(e: Expr) -> str:
    return _print(e)[0]

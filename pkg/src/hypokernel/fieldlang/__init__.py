"""A small expression language for vector and matrix fields.

Expressions support arithmetic, integer powers and the unary functions
sin, cos, exp, tanh over variables x1..xd.  Differentiation is exact and
symbolic; the simplifier is conservative (constant folding, neutral-element
elimination, like-term merging) so results are deterministic.
"""

from .expr import (
    Expr,
    Const,
    Var,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Call,
    Neg,
    count_nodes,
    differentiate,
    evaluate,
    simplify,
    to_string,
)
from .parser import FieldSyntaxError, parse_expr, parse_field, parse_matrix, parse_vector
from .fields import (
    BracketBudgetError,
    MatrixField,
    ModelSpec,
    VectorField,
    bracket_sequence,
    drift_bracket,
)

__all__ = [
    "Expr", "Const", "Var", "Add", "Sub", "Mul", "Div", "Pow", "Call", "Neg",
    "count_nodes", "differentiate", "evaluate", "simplify", "to_string",
    "FieldSyntaxError", "parse_expr", "parse_field", "parse_matrix", "parse_vector",
    "BracketBudgetError", "MatrixField", "ModelSpec", "VectorField",
    "bracket_sequence", "drift_bracket",
]

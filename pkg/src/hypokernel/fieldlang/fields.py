"""Vector and matrix fields, the drift bracket, and the iterated sequence.

The Jacobian convention is (grad f)_(i,j) = d f_i / d x_j (row = component,
column = variable).  The bracket with the drift acts columnwise as
[b, V] = (grad V) b - (grad b) V, which for linear drift b(x) = B x and
constant V reduces to -B V, reproducing the Kalman controllability sequence
up to per-column signs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import (
    Add,
    Const,
    Expr,
    Mul,
    Sub,
    count_nodes,
    differentiate,
    evaluate,
    max_var_index,
    simplify,
    to_string,
)


class BracketBudgetError(RuntimeError):
    """An iterated bracket exceeded the expression-node budget."""

    def __init__(self, level: int, nodes: int, budget: int):
        super().__init__(
            f"bracket too large at level {level}: {nodes} nodes exceed the "
            f"budget of {budget}"
        )
        self.level = level


@dataclass(frozen=True)
class VectorField:
    """d expressions, one per component."""

    components: tuple[Expr, ...]
    dim: int

    def __post_init__(self):
        if len(self.components) != self.dim:
            raise ValueError(
                f"vector field has {len(self.components)} components for dim {self.dim}"
            )
        for c in self.components:
            if max_var_index(c) > self.dim:
                raise ValueError(
                    f"component {to_string(c)!r} uses a variable beyond x{self.dim}"
                )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate at points of shape (..., d); returns shape (..., d)."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape, dtype=float)
        for i, c in enumerate(self.components):
            out[..., i] = evaluate(c, x)
        return out

    def jacobian(self) -> "MatrixField":
        rows = tuple(
            tuple(differentiate(c, j + 1) for j in range(self.dim))
            for c in self.components
        )
        return MatrixField(rows, self.dim)

    def simplified(self) -> "VectorField":
        return VectorField(tuple(simplify(c) for c in self.components), self.dim)

    def node_count(self) -> int:
        return sum(count_nodes(c) for c in self.components)

    def to_text(self) -> str:
        return "; ".join(to_string(c) for c in self.components)

    @staticmethod
    def zero(dim: int) -> "VectorField":
        return VectorField(tuple(Const(0.0) for _ in range(dim)), dim)


@dataclass(frozen=True)
class MatrixField:
    """d x d expressions, row-major."""

    entries: tuple[tuple[Expr, ...], ...]
    dim: int

    def __post_init__(self):
        if len(self.entries) != self.dim or any(len(r) != self.dim for r in self.entries):
            raise ValueError(f"matrix field is not {self.dim}x{self.dim}")
        for row in self.entries:
            for c in row:
                if max_var_index(c) > self.dim:
                    raise ValueError(
                        f"entry {to_string(c)!r} uses a variable beyond x{self.dim}"
                    )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate at points of shape (..., d); returns shape (..., d, d)."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (self.dim, self.dim), dtype=float)
        for i, row in enumerate(self.entries):
            for j, c in enumerate(row):
                out[..., i, j] = evaluate(c, x)
        return out

    @property
    def is_constant(self) -> bool:
        return all(isinstance(c, Const) for row in self.entries for c in row)

    def constant_value(self) -> np.ndarray:
        if not self.is_constant:
            raise ValueError("matrix field is not constant")
        return np.array([[c.value for c in row] for row in self.entries], dtype=float)

    def column(self, j: int) -> VectorField:
        return VectorField(tuple(self.entries[i][j] for i in range(self.dim)), self.dim)

    @staticmethod
    def from_columns(cols: list[VectorField]) -> "MatrixField":
        dim = cols[0].dim
        rows = tuple(
            tuple(cols[j].components[i] for j in range(dim)) for i in range(dim)
        )
        return MatrixField(rows, dim)

    @staticmethod
    def constant(mat: np.ndarray) -> "MatrixField":
        mat = np.asarray(mat, dtype=float)
        d = mat.shape[0]
        rows = tuple(tuple(Const(float(mat[i, j])) for j in range(d)) for i in range(d))
        return MatrixField(rows, d)

    def simplified(self) -> "MatrixField":
        return MatrixField(
            tuple(tuple(simplify(c) for c in row) for row in self.entries), self.dim
        )

    def node_count(self) -> int:
        return sum(count_nodes(c) for row in self.entries for c in row)

    def to_text(self) -> str:
        return " | ".join("; ".join(to_string(c) for c in row) for row in self.entries)


@dataclass(frozen=True)
class ModelSpec:
    """Drift field, diffusion field, stability index and scan box."""

    dim: int
    alpha: float
    drift: VectorField
    sigma: MatrixField
    scan_lo: np.ndarray = field(default=None)
    scan_hi: np.ndarray = field(default=None)
    name: str = "inline"

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.drift.dim != self.dim or self.sigma.dim != self.dim:
            raise ValueError("field dimensions disagree with the model dimension")
        lo = np.full(self.dim, -2.0) if self.scan_lo is None else np.asarray(self.scan_lo, float)
        hi = np.full(self.dim, 2.0) if self.scan_hi is None else np.asarray(self.scan_hi, float)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise ValueError("scan box bounds must each have one entry per dimension")
        if np.any(lo >= hi):
            raise ValueError("scan box must have positive volume")
        object.__setattr__(self, "scan_lo", lo)
        object.__setattr__(self, "scan_hi", hi)
        object.__setattr__(self, "_drift_jac", self.drift.jacobian())
        object.__setattr__(self, "_sigma_col_jacs",
                           tuple(self.sigma.column(j).jacobian() for j in range(self.dim)))

    @property
    def sigma_is_constant(self) -> bool:
        return self.sigma.is_constant

    def drift_jacobian(self) -> MatrixField:
        return self._drift_jac

    def sigma_column_jacobians(self) -> tuple[MatrixField, ...]:
        return self._sigma_col_jacs

    def grad_sigma_apply(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """The matrix sum_k (grad sigma_col_k)(x) * z_k at points x."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.dim, self.dim), dtype=float)
        for k, jac in enumerate(self._sigma_col_jacs):
            out += jac(x) * z[..., k, None, None]
        return out


def drift_bracket(b: VectorField, v: VectorField) -> VectorField:
    """[b, v] = (grad v) b - (grad b) v, exact and simplified."""
    if b.dim != v.dim:
        raise ValueError("bracket arguments must share a dimension")
    d = b.dim
    comps = []
    for i in range(d):
        acc: Expr = Const(0.0)
        for k in range(d):
            acc = Add(acc, Mul(b.components[k], differentiate(v.components[i], k + 1)))
            acc = Sub(acc, Mul(v.components[k], differentiate(b.components[i], k + 1)))
        comps.append(simplify(acc))
    return VectorField(tuple(comps), d)


def bracket_sequence(
    model: ModelSpec, n: int, node_budget: int = 200_000
) -> list[MatrixField]:
    """Matrices of the iterated drift bracket, first entry the diffusion field.

    Each level applies the drift bracket to every column of the previous
    level and simplifies.  Exceeding ``node_budget`` nodes at any level
    raises BracketBudgetError naming the level.
    """
    if n < 1:
        raise ValueError("need at least one bracket level")
    levels = [model.sigma.simplified()]
    for j in range(2, n + 1):
        prev = levels[-1]
        cols = [drift_bracket(model.drift, prev.column(k)) for k in range(model.dim)]
        nxt = MatrixField.from_columns(cols)
        nodes = nxt.node_count()
        if nodes > node_budget:
            raise BracketBudgetError(j, nodes, node_budget)
        levels.append(nxt)
    return levels

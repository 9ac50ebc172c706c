"""Builtin model registry.

Five families ship:

* ``pure-stable`` -- identity diffusion, zero drift; every covariance and
  density statistic has a closed form, so it anchors the oracle tests.
* ``kinetic`` -- reduced position/velocity pair: drift (x2, 0), noise on the
  velocity coordinate only.  Rank 2 needs one bracket level.
* ``oscillator-chain`` -- a chain of coupled oscillators with quadratic
  pinning and quartic nearest-neighbor interaction, damped and driven at the
  two ends.  State is (positions..., velocities...), dimension 2 * length.
* ``linear`` -- drift B x with a user matrix B, constant diffusion.
* ``degenerate-control`` -- negative control: noise on the first coordinate
  only, zero drift, so no bracket level ever fills the rank.
"""

from __future__ import annotations

import numpy as np

from .fieldlang import (
    Add,
    Const,
    Expr,
    MatrixField,
    ModelSpec,
    Mul,
    Neg,
    Pow,
    Sub,
    Var,
    VectorField,
    parse_matrix,
    parse_vector,
    simplify,
)

BUILTIN_NAMES = (
    "pure-stable",
    "kinetic",
    "oscillator-chain",
    "linear",
    "degenerate-control",
)


def _linear_drift(mat: np.ndarray) -> VectorField:
    d = mat.shape[0]
    comps = []
    for i in range(d):
        acc: Expr = Const(0.0)
        for j in range(d):
            if mat[i, j] != 0.0:
                acc = Add(acc, Mul(Const(float(mat[i, j])), Var(j + 1)))
        comps.append(simplify(acc))
    return VectorField(tuple(comps), d)


def _oscillator_chain(length: int, gamma1: float, gammad: float,
                      t1: float, td: float, alpha: float) -> ModelSpec:
    """Chain with pinning V(z) = z^2/2 and coupling U(w) = w^2/2 + w^4/4.

    Interaction force U'(w) = w + w^3.  Positions are x1..x_len, velocities
    x_{len+1}..x_{2 len}; noise enters the first and last velocity scaled by
    sqrt(t1), sqrt(td).
    """
    if length < 3:
        raise ValueError("the chain needs length >= 3")
    d = 2 * length

    def pos(i: int) -> Expr:  # 1-based particle index
        return Var(i)

    def vel(i: int) -> Expr:
        return Var(length + i)

    def u_prime(w: Expr) -> Expr:
        return Add(w, Pow(w, 3))

    comps: list[Expr] = []
    for i in range(1, length + 1):
        comps.append(vel(i))  # position equations
    for i in range(1, length + 1):
        force: Expr = pos(i)  # pinning V'(z) = z
        if i >= 2:
            force = Add(force, u_prime(Sub(pos(i), pos(i - 1))))
        if i <= length - 1:
            force = Sub(force, u_prime(Sub(pos(i + 1), pos(i))))
        accel: Expr = Neg(force)
        if i == 1:
            accel = Sub(accel, Mul(Const(float(gamma1)), vel(1)))
        if i == length:
            accel = Sub(accel, Mul(Const(float(gammad)), vel(length)))
        comps.append(simplify(accel))
    drift = VectorField(tuple(comps), d)

    sig = np.zeros((d, d))
    sig[length, length] = np.sqrt(t1)
    sig[2 * length - 1, 2 * length - 1] = np.sqrt(td)
    return ModelSpec(dim=d, alpha=alpha, drift=drift,
                     sigma=MatrixField.constant(sig), name="oscillator-chain")


def builtin_model(
    name: str,
    alpha: float = 1.0,
    dim: int = 1,
    matrix=None,
    sigma=None,
    chain_length: int = 3,
    gamma1: float = 1.0,
    gammad: float = 1.0,
    t1: float = 1.0,
    td: float = 1.0,
) -> ModelSpec:
    """Construct a builtin model by name.

    ``pure-stable`` takes ``alpha`` and ``dim``; ``linear`` takes ``matrix``
    (nested list / array / field text for B) and optionally ``sigma``;
    ``oscillator-chain`` takes the chain parameters.  Unknown names raise
    with the list of available models.
    """
    if name == "pure-stable":
        return ModelSpec(dim=dim, alpha=alpha, drift=VectorField.zero(dim),
                         sigma=MatrixField.constant(np.eye(dim)), name=name)
    if name == "kinetic":
        return ModelSpec(dim=2, alpha=alpha, drift=parse_vector("x2; 0", 2),
                         sigma=parse_matrix("0; 0 | 0; 1", 2), name=name)
    if name == "degenerate-control":
        return ModelSpec(dim=2, alpha=alpha, drift=VectorField.zero(2),
                         sigma=parse_matrix("1; 0 | 0; 0", 2), name=name)
    if name == "linear":
        if matrix is None:
            raise ValueError("the linear model needs its drift matrix")
        if isinstance(matrix, str):
            mat_field = parse_matrix(matrix, matrix.count("|") + 1)
            mat = mat_field.constant_value()
        else:
            mat = np.asarray(matrix, dtype=float)
        d = mat.shape[0]
        if mat.shape != (d, d):
            raise ValueError("the drift matrix must be square")
        if sigma is None:
            sig = MatrixField.constant(np.eye(d))
        elif isinstance(sigma, str):
            sig = parse_matrix(sigma, d)
        else:
            sig = MatrixField.constant(np.asarray(sigma, dtype=float))
        return ModelSpec(dim=d, alpha=alpha, drift=_linear_drift(mat),
                         sigma=sig, name=name)
    if name == "oscillator-chain":
        return _oscillator_chain(chain_length, gamma1, gammad, t1, td, alpha)
    raise ValueError(
        f"unknown model {name!r}; available models: {', '.join(BUILTIN_NAMES)}"
    )

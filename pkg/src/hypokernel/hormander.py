"""Numeric checkers for the bracket rank condition and its uniform variant.

``rank_at`` stacks the evaluated bracket matrices [B_1(x) .. B_n(x)] into a
d x (n d) matrix and reads the rank off its singular values.  ``uh_kappa``
scans a box for the minimum over x of the smallest eigenvalue of
sum_j B_j(x) B_j(x)^T, which equals inf_{|u|=1} sum_j |u B_j(x)|^2.  The
scan minimum is an upper estimate of the infimum over the whole box; the
report says so explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fieldlang import MatrixField, ModelSpec, bracket_sequence

DEFAULT_RANK_TOL = 1e-8


@dataclass
class RankReport:
    """Per-level ranks of the stacked bracket matrices at one point."""

    point: np.ndarray
    ranks: list[int]
    n_needed: int | None  # least level reaching full rank, None = fail at n_max
    min_singular_value: float
    tol: float

    @property
    def full_rank(self) -> bool:
        return self.n_needed is not None

    def to_dict(self) -> dict:
        return {
            "point": [float(v) for v in self.point],
            "ranks": self.ranks,
            "n_needed": self.n_needed,
            "status": "ok" if self.full_rank else "fail",
            "min_singular_value": self.min_singular_value,
            "tol": self.tol,
        }


@dataclass
class UhReport:
    """Scan summary for the uniform bracket-spanning condition.

    ``kappa_hat`` is the smallest sampled eigenvalue minimum; it upper-bounds
    the true infimum over the scan box (the infimum over all of R^d is not
    attempted).
    """

    j0: int
    kappa_hat: float
    argmin_point: np.ndarray
    points: np.ndarray
    lambda_min_samples: np.ndarray
    positivity_threshold: float

    @property
    def positive(self) -> bool:
        return self.kappa_hat > self.positivity_threshold

    def to_dict(self) -> dict:
        return {
            "j0": self.j0,
            "kappa_hat": self.kappa_hat,
            "argmin_point": [float(v) for v in self.argmin_point],
            "positive": bool(self.positive),
            "positivity_threshold": self.positivity_threshold,
            "n_points": int(self.points.shape[0]),
            "note": "kappa_hat is the scan minimum over the box, an upper "
                    "estimate of the infimum there; the infimum over all of "
                    "R^d is not evaluated",
        }


def rank_at(
    model: ModelSpec,
    x,
    n_max: int,
    tol: float = DEFAULT_RANK_TOL,
    levels: list[MatrixField] | None = None,
) -> RankReport:
    """Rank of the stacked bracket matrices at x for n = 1..n_max.

    Singular values above ``tol`` times the largest one count toward the
    rank.  ``levels`` lets callers reuse a precomputed bracket sequence.
    """
    x = np.asarray(x, dtype=float)
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if levels is None:
        levels = bracket_sequence(model, n_max)
    mats = [lv(x) for lv in levels[:n_max]]
    ranks: list[int] = []
    n_needed = None
    min_sv = 0.0
    for n in range(1, n_max + 1):
        stacked = np.hstack(mats[:n])
        sv = np.linalg.svd(stacked, compute_uv=False)
        top = sv[0] if sv[0] > 0 else 1.0
        kept = sv[sv > tol * top]
        ranks.append(int(kept.size))
        if kept.size == model.dim and n_needed is None:
            n_needed = n
            min_sv = float(kept[-1])
    if n_needed is None:
        sv = np.linalg.svd(np.hstack(mats), compute_uv=False)
        kept = sv[sv > tol * (sv[0] if sv[0] > 0 else 1.0)]
        min_sv = float(kept[-1]) if kept.size else 0.0
    return RankReport(point=x, ranks=ranks, n_needed=n_needed,
                      min_singular_value=min_sv, tol=tol)


def scan_grid(model: ModelSpec, points_per_axis: int) -> np.ndarray:
    """Tensor grid over the model scan box, shape (m, d)."""
    axes = [
        np.linspace(model.scan_lo[i], model.scan_hi[i], points_per_axis)
        for i in range(model.dim)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def halton_points(model: ModelSpec, count: int) -> np.ndarray:
    """Low-discrepancy sampling plan over the scan box."""
    from scipy.stats import qmc

    sampler = qmc.Halton(d=model.dim, scramble=False)
    unit = sampler.random(count)
    return model.scan_lo + unit * (model.scan_hi - model.scan_lo)


def uh_kappa(
    model: ModelSpec,
    j0: int,
    points: np.ndarray | None = None,
    points_per_axis: int = 21,
    positivity_threshold: float = 1e-10,
    require_constant_sigma: bool = False,
) -> UhReport:
    """Scan minimum of the smallest eigenvalue of sum_{j<=j0} B_j B_j^T.

    With ``require_constant_sigma`` the check refuses non-constant diffusion
    fields, since the smoothness results downstream assume a constant one.
    """
    if j0 < 1:
        raise ValueError("j0 must be at least 1")
    if require_constant_sigma and not model.sigma_is_constant:
        raise ValueError(
            "the uniform condition is used with a constant diffusion field; "
            "this model's diffusion is state-dependent"
        )
    if points is None:
        points = scan_grid(model, points_per_axis)
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0 or points.shape[1] != model.dim:
        raise ValueError("sampling plan must be a nonempty (m, d) array")
    levels = bracket_sequence(model, j0)
    gram = np.zeros((points.shape[0], model.dim, model.dim))
    for lv in levels:
        mats = lv(points)
        gram += mats @ np.swapaxes(mats, -1, -2)
    lam_min = np.linalg.eigvalsh(gram)[:, 0]
    k = int(np.argmin(lam_min))
    return UhReport(
        j0=j0,
        kappa_hat=float(lam_min[k]),
        argmin_point=points[k],
        points=points,
        lambda_min_samples=lam_min,
        positivity_threshold=positivity_threshold,
    )

"""Statistics of the pathwise covariance matrix across Monte Carlo paths.

Inverse-determinant moments are heavy-tailed near degeneracy, so the
estimator here always truncates: the top order statistics of det^(-p) are
excluded at a configurable quantile, and a Hill tail-index diagnostic on
det^(-1) is reported next to the truncated mean.  An untruncated mean is
never reported (a single near-singular path would dominate it).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .fieldlang import ModelSpec
from .flow import CovarianceBatch, SimConfig, covariance_batch

DEFAULT_TRUNCATION = 1e-3
SENSITIVITY_LEVELS = (1e-2, 1e-3, 1e-4)


@dataclass
class SpectrumStats:
    """Nearest-rank quantiles of lambda_min and det over a sample set."""

    probs: np.ndarray
    lambda_min_quantiles: np.ndarray
    det_quantiles: np.ndarray
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "probs": self.probs.tolist(),
            "lambda_min_quantiles": self.lambda_min_quantiles.tolist(),
            "det_quantiles": self.det_quantiles.tolist(),
            "n_samples": self.n_samples,
        }


@dataclass
class MomentReport:
    """Truncated estimate of E[det^(-p)] with tail diagnostics."""

    p: float
    estimate: float
    truncation: float
    sensitivity: dict[float, float]
    hill_tail_index: float
    n_paths: int
    aborted: int
    diverging: bool

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "estimate": self.estimate,
            "truncation": self.truncation,
            "sensitivity": {f"{k:g}": v for k, v in self.sensitivity.items()},
            "hill_tail_index": self.hill_tail_index,
            "n_paths": self.n_paths,
            "aborted": self.aborted,
            "diverging": self.diverging,
            "note": "truncated mean of det^(-p); untruncated means are not "
                    "reported for heavy-tailed spectra",
        }


@dataclass
class SmallBallCurve:
    """Empirical P(lambda_min <= eps) with Wilson confidence intervals."""

    thresholds: np.ndarray
    probabilities: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_paths: int


@dataclass(frozen=True)
class ExponentPrediction:
    """Exponent bookkeeping for the covariance small-ball estimate.

    a = (1-beta)/(18-beta), theta = beta*a^j0/(1-beta), gamma = theta/(1+theta);
    computed in exact rational arithmetic when beta is exactly representable.
    """

    alpha: float
    beta: float
    j0: int
    a: float
    theta: float
    gamma: float
    a_exact: Fraction
    theta_exact: Fraction
    gamma_exact: Fraction

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta, "j0": self.j0,
            "a": self.a, "theta": self.theta, "gamma": self.gamma,
            "a_exact": str(self.a_exact), "theta_exact": str(self.theta_exact),
            "gamma_exact": str(self.gamma_exact),
        }


def spectrum_stats(samples, probs=(0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)) -> SpectrumStats:
    """Nearest-rank quantiles of lambda_min and det.

    ``samples`` is a CovarianceBatch or a list of CovarianceSample.
    """
    if isinstance(samples, CovarianceBatch):
        lam = np.asarray(samples.lambda_min, dtype=float)
        det = np.asarray(samples.det, dtype=float)
    else:
        if len(samples) == 0:
            raise ValueError("empty sample list")
        lam = np.array([s.lambda_min for s in samples], dtype=float)
        det = np.array([s.det for s in samples], dtype=float)
    if lam.size == 0:
        raise ValueError("empty sample list")
    probs = np.asarray(probs, dtype=float)
    lam_q = np.quantile(lam, probs, method="inverted_cdf")
    det_q = np.quantile(det, probs, method="inverted_cdf")
    return SpectrumStats(probs=probs, lambda_min_quantiles=lam_q,
                         det_quantiles=det_q, n_samples=lam.size)


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    phat = k / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def small_ball_curve(
    model: ModelSpec, x, t: float, thresholds, n_paths: int,
    cfg: SimConfig | None = None, master_seed: int = 0,
) -> SmallBallCurve:
    """Empirical small-ball probabilities of lambda_min at time t."""
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.size == 0 or np.any(thresholds <= 0) or np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be positive and ascending")
    cfg = cfg or SimConfig(t_end=t, steps=128, seed=master_seed)
    if cfg.t_end != t:
        cfg = replace(cfg, t_end=t)
    batch = covariance_batch(model, x, cfg, n_paths, master_seed)
    probs = np.empty(thresholds.size)
    lo = np.empty(thresholds.size)
    hi = np.empty(thresholds.size)
    n = batch.lambda_min.size
    for i, eps in enumerate(thresholds):
        k = int((batch.lambda_min <= eps).sum())
        probs[i] = k / n
        lo[i], hi[i] = wilson_interval(k, n)
    return SmallBallCurve(thresholds=thresholds, probabilities=probs,
                          ci_low=lo, ci_high=hi, n_paths=n)


def hill_tail_index(x: np.ndarray, top_fraction: float = 0.01) -> float:
    """Hill estimator of the tail index of x (large values = heavy tail)."""
    x = np.sort(x[x > 0])
    n = x.size
    k = max(10, int(n * top_fraction))
    if n <= k + 1:
        return float("nan")
    top = x[-k:]
    ref = x[-k - 1]
    h = np.mean(np.log(top) - np.log(ref))
    return float(1.0 / h) if h > 0 else float("inf")


def truncated_mean(values: np.ndarray, truncation: float) -> float:
    """Mean with the top `truncation` fraction of order statistics excluded."""
    if not 0.0 < truncation < 1.0:
        raise ValueError("truncation must lie in (0, 1)")
    v = np.sort(values)
    keep = v.size - max(1, int(np.ceil(truncation * v.size)))
    return float(v[:keep].mean())


def inverse_det_moment(
    model: ModelSpec, x, t: float, p: float, n_paths: int,
    truncation: float = DEFAULT_TRUNCATION,
    cfg: SimConfig | None = None, master_seed: int = 0,
) -> MomentReport:
    """Truncated estimate of E[det^(-p)] of the covariance at time t.

    The sensitivity table re-evaluates the truncated mean at the standard
    truncation levels; a spread larger than an order of magnitude flags the
    estimate as diverging (non-integrable under discretization).
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    cfg = cfg or SimConfig(t_end=t, steps=128, seed=master_seed)
    if cfg.t_end != t:
        cfg = replace(cfg, t_end=t)
    batch = covariance_batch(model, x, cfg, n_paths, master_seed)
    det = np.maximum(batch.det, 0.0)
    with np.errstate(divide="ignore"):
        inv_p = np.where(det > 0, det ** (-p), np.inf)
    sensitivity = {lvl: truncated_mean(inv_p, lvl) for lvl in SENSITIVITY_LEVELS}
    estimate = truncated_mean(inv_p, truncation)
    harsh = sensitivity[max(SENSITIVITY_LEVELS)]
    loose = sensitivity[min(SENSITIVITY_LEVELS)]
    spread = loose / max(harsh, 1e-300) if np.isfinite(harsh) else np.inf
    with np.errstate(divide="ignore"):
        inv1 = np.where(det > 0, 1.0 / det, np.inf)
    return MomentReport(
        p=p,
        estimate=estimate,
        truncation=truncation,
        sensitivity=sensitivity,
        hill_tail_index=hill_tail_index(inv1[np.isfinite(inv1)]),
        n_paths=n_paths,
        aborted=batch.aborted,
        diverging=bool(not np.isfinite(spread) or spread > 10.0),
    )


def theoretical_gamma(alpha: float, beta, j0: int) -> ExponentPrediction:
    """Exponents (a, theta, gamma) of the small-ball rate bookkeeping.

    ``beta`` must lie in (max(0, 4*alpha - 7), 1); violations raise with the
    constraint spelled out.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    if j0 < 1:
        raise ValueError("j0 must be at least 1")
    lo = max(0.0, 4.0 * float(alpha) - 7.0)
    if not lo < float(beta) < 1.0:
        raise ValueError(
            f"beta must lie in (max(0, 4*alpha-7), 1) = ({lo:g}, 1); got {beta}"
        )
    b = Fraction(beta) if not isinstance(beta, Fraction) else beta
    a = (1 - b) / (18 - b)
    theta = b * a ** j0 / (1 - b)
    gamma = theta / (1 + theta)
    return ExponentPrediction(
        alpha=alpha, beta=float(b), j0=j0,
        a=float(a), theta=float(theta), gamma=float(gamma),
        a_exact=a, theta_exact=theta, gamma_exact=gamma,
    )

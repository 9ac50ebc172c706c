"""Jump-SDE integration, the Jacobian flow and its inverse, and the
pathwise covariance matrix of the state.

The state follows an explicit Euler scheme with left-endpoint coefficients:

    X_{k+1} = X_k + b(X_k) h + sigma(X_k) dL_k,

where dL_k is the Brownian increment over the sampled clock increment dS_k
("grid" mode) or an explicit jump decomposition ("jump-record" mode).  The
flow matrices are propagated multiplicatively,

    J_{k+1} = (I + grad_sigma(X_k) dL_k) (I + grad_b(X_k) h) J_k,

with the inverse K maintained exactly as the product of factor inverses.
The covariance sample is the left-endpoint Stieltjes sum

    Sigma = J_T ( sum_k K_k sigma(X_k) sigma(X_k)^T K_k^T dS_k ) J_T^T,

which for constant sigma is the exact discretization of the clock-integral
form of the covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import levy
from ._rng import stream_rng
from .fieldlang import ModelSpec
from .hormander import scan_grid


class PathAbortError(RuntimeError):
    """A path hit a non-finite state or a singular jump factor."""

    def __init__(self, message: str, step: int, time: float):
        super().__init__(f"{message} (step {step}, t={time:.6g})")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``delta`` is the jump truncation radius used by decomposition-aware
    experiments; for non-constant diffusion the smallness condition
    2 * delta * sup|grad sigma| <= 1 is enforced over the scan box before
    any path is integrated.
    """

    t_end: float = 1.0
    steps: int = 200
    delta: float = 0.5
    seed: int = 0
    mode: str = "grid"  # "grid" | "jump-record"
    store_flow: bool = False
    record_threshold: float | None = None
    small_jump_gaussian: bool = True

    def __post_init__(self):
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if self.mode not in ("grid", "jump-record"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.record_threshold is not None and not 0 < self.record_threshold <= self.delta:
            raise ValueError("record_threshold must lie in (0, delta]")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.steps + 1)

    @property
    def effective_record_threshold(self) -> float:
        return self.record_threshold if self.record_threshold is not None else self.delta / 10.0


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (steps+1, d)
    noise_increments: np.ndarray  # (steps, d)
    sub_increments: np.ndarray | None  # clock increments, grid mode only
    mode: str
    jump_steps: np.ndarray | None = None
    jump_times: np.ndarray | None = None
    jump_sizes: np.ndarray | None = None


@dataclass
class FlowPath:
    forward: np.ndarray  # (steps+1, d, d), J_k
    inverse: np.ndarray  # (steps+1, d, d), K_k
    max_inverse_defect: float


@dataclass
class CovarianceSample:
    matrix: np.ndarray
    lambda_min: float
    det: float
    path_id: int


def grad_sigma_sup(model: ModelSpec, points_per_axis: int = 11) -> float:
    """sup over the scan box of the operator norm of z -> grad_sigma(x) z."""
    if model.sigma_is_constant:
        return 0.0
    pts = scan_grid(model, points_per_axis)
    jacs = np.stack([jac(pts) for jac in model.sigma_column_jacobians()], axis=-1)
    flat = jacs.reshape(pts.shape[0], model.dim * model.dim, model.dim)
    return float(np.linalg.svd(flat, compute_uv=False)[:, 0].max())


def validate_truncation(model: ModelSpec, cfg: SimConfig) -> None:
    """Refuse non-constant diffusion runs violating 2*delta*sup|grad sigma| <= 1."""
    if model.sigma_is_constant:
        return
    sup = grad_sigma_sup(model)
    if 2.0 * cfg.delta * sup > 1.0:
        raise ValueError(
            f"jump truncation too coarse for this diffusion field: "
            f"2*delta*sup|grad sigma| = {2.0 * cfg.delta * sup:.4g} > 1; "
            f"reduce delta below {1.0 / (2.0 * sup):.4g}"
        )


def _check_finite(x: np.ndarray, step: int, time: float) -> None:
    if not np.all(np.isfinite(x)):
        raise PathAbortError("non-finite state in field evaluation", step, time)


def simulate(model: ModelSpec, x0, cfg: SimConfig) -> Trajectory:
    """Integrate one path from x0; deterministic given cfg.seed."""
    validate_truncation(model, cfg)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dim,):
        raise ValueError(f"x0 must have shape ({model.dim},)")
    spec = levy.StableSpec(alpha=model.alpha, dim=model.dim)
    if cfg.mode == "grid":
        noise = levy.sample_levy_path(spec, cfg.grid, seed=cfg.seed, mode="grid")
    else:
        noise = levy.sample_levy_path(
            spec, cfg.grid, seed=cfg.seed, mode="jump-record",
            record_threshold=cfg.effective_record_threshold,
            small_jump_gaussian=cfg.small_jump_gaussian,
        )
    h = cfg.t_end / cfg.steps
    states = np.empty((cfg.steps + 1, model.dim))
    states[0] = x0
    for k in range(cfg.steps):
        xk = states[k]
        drift = model.drift(xk)
        sig = model.sigma(xk)
        _check_finite(drift, k, cfg.grid[k])
        _check_finite(sig, k, cfg.grid[k])
        states[k + 1] = xk + drift * h + sig @ noise.increments[k]
        _check_finite(states[k + 1], k + 1, cfg.grid[k + 1])
    return Trajectory(
        times=cfg.grid,
        states=states,
        noise_increments=noise.increments,
        sub_increments=noise.sub_increments,
        mode=cfg.mode,
        jump_steps=noise.jump_steps,
        jump_times=noise.jump_times,
        jump_sizes=noise.jump_sizes,
    )


def propagate_flow(model: ModelSpec, traj: Trajectory) -> FlowPath:
    """Forward flow J and inverse K along a trajectory.

    Constant diffusion keeps the jump factor at the identity and propagates
    K through the inverted drift factor alone; state-dependent diffusion
    multiplies in (I + grad_sigma(X_k) dL_k) and its inverse.  A singular
    jump factor (possible only for untruncated large jumps) aborts the path.
    """
    d = model.dim
    n = traj.times.size - 1
    h = float(traj.times[1] - traj.times[0])
    eye = np.eye(d)
    forward = np.empty((n + 1, d, d))
    inverse = np.empty((n + 1, d, d))
    forward[0] = eye
    inverse[0] = eye
    const_sigma = model.sigma_is_constant
    defect = 0.0
    for k in range(n):
        xk = traj.states[k]
        drift_factor = eye + model.drift_jacobian()(xk) * h
        if const_sigma:
            factor = drift_factor
        else:
            jump_factor = eye + model.grad_sigma_apply(xk, traj.noise_increments[k])
            if abs(np.linalg.det(jump_factor)) < 1e-14:
                raise PathAbortError("singular jump factor in the flow", k, traj.times[k])
            factor = jump_factor @ drift_factor
        forward[k + 1] = factor @ forward[k]
        inverse[k + 1] = inverse[k] @ np.linalg.inv(factor)
        defect = max(defect, float(np.abs(inverse[k + 1] @ forward[k + 1] - eye).max()))
    return FlowPath(forward=forward, inverse=inverse, max_inverse_defect=defect)


def malliavin_covariance(
    traj: Trajectory, flow: FlowPath, model: ModelSpec, path_id: int = 0
) -> CovarianceSample:
    """Left-endpoint Stieltjes assembly of the covariance sample."""
    if traj.sub_increments is None:
        raise ValueError(
            "covariance assembly needs clock increments; simulate in 'grid' mode"
        )
    n = traj.times.size - 1
    acc = np.zeros((model.dim, model.dim))
    for k in range(n):
        smat = flow.inverse[k] @ model.sigma(traj.states[k])
        acc += (smat @ smat.T) * traj.sub_increments[k]
    jt = flow.forward[n]
    mat = jt @ acc @ jt.T
    mat = 0.5 * (mat + mat.T)
    eig = np.linalg.eigvalsh(mat)
    return CovarianceSample(
        matrix=mat,
        lambda_min=float(eig[0]),
        det=float(np.linalg.det(mat)),
        path_id=path_id,
    )


# ---------------------------------------------------------------------------
# Vectorized batch engines.  These draw from one deterministic stream per
# (master_seed, tag) rather than per-path generators; given identical
# settings the whole batch is bit-reproducible.
# ---------------------------------------------------------------------------


@dataclass
class CovarianceBatch:
    matrices: np.ndarray  # (n_ok, d, d)
    lambda_min: np.ndarray
    det: np.ndarray
    aborted: int

    def samples(self) -> list[CovarianceSample]:
        return [
            CovarianceSample(self.matrices[i], float(self.lambda_min[i]),
                             float(self.det[i]), i)
            for i in range(self.matrices.shape[0])
        ]


def _batch_noise(spec, cfg: SimConfig, n_paths: int, rng) -> tuple[np.ndarray, np.ndarray]:
    h = cfg.t_end / cfg.steps
    ds = levy.subordinator_increments(spec, np.full((n_paths, cfg.steps), h), rng)
    dl = np.sqrt(ds)[..., None] * rng.standard_normal((n_paths, cfg.steps, spec.dim))
    return ds, dl


def covariance_batch(
    model: ModelSpec, x0, cfg: SimConfig, n_paths: int, master_seed: int,
) -> CovarianceBatch:
    """Covariance samples over many paths, streaming over time steps.

    Paths that leave the finite range are dropped from the output and
    counted in ``aborted``; experiments are expected to require zero aborts
    at shipped settings.
    """
    validate_truncation(model, cfg)
    if cfg.mode != "grid":
        raise ValueError("covariance batches run in 'grid' mode")
    x0 = np.asarray(x0, dtype=float)
    d = model.dim
    spec = levy.StableSpec(alpha=model.alpha, dim=d)
    rng = stream_rng(master_seed, "covariance")
    h = cfg.t_end / cfg.steps
    eye = np.eye(d)

    x = np.tile(x0, (n_paths, 1))
    fwd = np.tile(eye, (n_paths, 1, 1))
    inv = np.tile(eye, (n_paths, 1, 1))
    acc = np.zeros((n_paths, d, d))
    alive = np.ones(n_paths, dtype=bool)
    const_sigma = model.sigma_is_constant

    for _ in range(cfg.steps):
        ds = levy.subordinator_increments(spec, np.full(n_paths, h), rng)
        dl = np.sqrt(ds)[:, None] * rng.standard_normal((n_paths, d))
        sig = model.sigma(x)
        kmat = inv @ sig
        acc += (kmat @ np.swapaxes(kmat, -1, -2)) * ds[:, None, None]
        drift_factor = eye + model.drift_jacobian()(x) * h
        if const_sigma:
            factor = drift_factor
        else:
            factor = (eye + model.grad_sigma_apply(x, dl)) @ drift_factor
        fwd = factor @ fwd
        inv = inv @ np.linalg.inv(factor)
        x = x + model.drift(x) * h + np.einsum("nij,nj->ni", sig, dl)
        alive &= np.isfinite(x).all(axis=1)
        x = np.where(alive[:, None], x, 0.0)

    mats = fwd @ acc @ np.swapaxes(fwd, -1, -2)
    mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    mats = mats[alive]
    eig = np.linalg.eigvalsh(mats)
    return CovarianceBatch(
        matrices=mats,
        lambda_min=eig[:, 0],
        det=np.linalg.det(mats),
        aborted=int(n_paths - alive.sum()),
    )


def endpoint_batch(
    model: ModelSpec, x0, cfg: SimConfig, n_paths: int, master_seed: int,
    at_times=None, tag: str = "endpoints",
) -> tuple[np.ndarray, np.ndarray, int]:
    """States at selected grid times over many paths.

    Returns (times, states, aborted) with states of shape
    (n_alive, len(times), d).  ``at_times`` must lie on the simulation grid.
    """
    validate_truncation(model, cfg)
    x0 = np.asarray(x0, dtype=float)
    d = model.dim
    spec = levy.StableSpec(alpha=model.alpha, dim=d)
    rng = stream_rng(master_seed, tag)
    grid = cfg.grid
    h = cfg.t_end / cfg.steps
    if at_times is None:
        at_times = [cfg.t_end]
    idx = []
    for t in at_times:
        j = int(round(t / h))
        if not (0 <= j <= cfg.steps) or abs(grid[j] - t) > 1e-9 * max(1.0, cfg.t_end):
            raise ValueError(f"time {t} is not on the simulation grid")
        idx.append(j)

    x = np.tile(x0, (n_paths, 1))
    alive = np.ones(n_paths, dtype=bool)
    out = np.empty((n_paths, len(idx), d))
    for j, k in enumerate(idx):
        if k == 0:
            out[:, j] = x
    for k in range(cfg.steps):
        ds = levy.subordinator_increments(spec, np.full(n_paths, h), rng)
        dl = np.sqrt(ds)[:, None] * rng.standard_normal((n_paths, d))
        sig = model.sigma(x)
        x = x + model.drift(x) * h + np.einsum("nij,nj->ni", sig, dl)
        alive &= np.isfinite(x).all(axis=1)
        x = np.where(alive[:, None], x, 0.0)
        for j, kk in enumerate(idx):
            if kk == k + 1:
                out[:, j] = x
    return np.asarray(at_times, dtype=float), out[alive], int(n_paths - alive.sum())

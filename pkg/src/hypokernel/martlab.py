"""Empirical checks of the martingale estimates behind the covariance bounds.

Four families of checks live here:

* ``exp_supermartingale_mean`` -- Monte Carlo means of the Doleans-type
  exponential functional, which must stay at or below one.
* ``esy_bound_check`` -- the scalar inequality |e^x - x - 1| <= 2 x^2 and the
  assembled bound it implies for the log of the exponential functional of a
  discrete semimartingale, both by direct evaluation.
* ``kt_pathwise_check`` -- a pathwise evaluation of the quantitative
  occupation estimate for small-jump semimartingales built from the inverse
  flow, with every constant assembled explicitly from the truncated second
  moment of the jump measure.  Checked semimartingales are driven by jumps
  in a recorded band (record threshold, delta], an exact member of the
  estimate's class, so violations can only come from time discretization.
* ``laplace_time_change_check`` -- the clock-change Laplace bound, exact on
  both sides for constant integrands.

All flow-driven checks require a constant diffusion matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from . import levy
from ._rng import stream_rng
from .fieldlang import MatrixField, ModelSpec, VectorField, differentiate
from .fieldlang.fields import drift_bracket as _vector_bracket


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SemimartingaleSpec:
    """Integrand specification for the martingale checks.

    Two mutually exclusive forms:

    direct -- ``brownian_xi`` (constant vector) and/or radial ``jump_eta``
    under the stable jump measure of ``stable``; jumps below
    ``record_threshold`` are excluded from the integrand's support.

    flow -- ``model`` (constant diffusion), matrix field ``V`` and unit row
    vector ``u``; integrands are built from the inverse flow:
    f = u K V(X), jump integrand g(z) = u K (V(X + sigma z) - V(X)),
    with jumps restricted to (record_threshold, delta].
    """

    label: str = "unnamed"
    # direct form
    stable: levy.StableSpec | None = None
    brownian_xi: np.ndarray | None = None
    jump_eta: Callable[[np.ndarray], np.ndarray] | None = None
    # flow form
    model: ModelSpec | None = None
    V: MatrixField | None = None
    u: np.ndarray | None = None
    x0: np.ndarray | None = None
    v_index: int = 1  # column of V contracted to the scalar jump integrand
    steps: int = 100
    # shared truncation and horizon parameters
    delta: float = 0.1
    epsilon: float = 0.05
    horizon: float = 0.5
    record_threshold: float | None = None
    small_jump_gaussian: bool = True
    band_radial: int = 24
    band_angular: int = 8
    inner_radial: int = 12
    inner_angular: int = 8

    def __post_init__(self):
        if self.kind == "flow":
            if self.V is None or self.u is None:
                raise ValueError("flow form needs V and u")
            if not self.model.sigma_is_constant:
                raise ValueError("flow-driven martingale checks need a constant "
                                 "diffusion matrix")
            u = np.asarray(self.u, dtype=float)
            if abs(np.linalg.norm(u) - 1.0) > 1e-12:
                raise ValueError("u must be a unit vector")
            object.__setattr__(self, "u", u)
            x0 = (np.zeros(self.model.dim) if self.x0 is None
                  else np.asarray(self.x0, dtype=float))
            object.__setattr__(self, "x0", x0)
        elif self.brownian_xi is None and self.jump_eta is None:
            raise ValueError("direct form needs brownian_xi and/or jump_eta")
        if self.jump_eta is not None and self.stable is None:
            raise ValueError("a jump integrand needs the stable measure spec")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.epsilon <= 0 or self.horizon <= 0:
            raise ValueError("epsilon and horizon must be positive")

    @property
    def kind(self) -> str:
        return "flow" if self.model is not None else "direct"

    @property
    def effective_record_threshold(self) -> float:
        if self.record_threshold is not None:
            return self.record_threshold
        return self.delta / 10.0


# ---------------------------------------------------------------------------
# Band quadrature: nodes z_i, weights w_i with
#   int_{r0 < |z| <= r1} g(z) nu(dz)  ~=  sum_i w_i g(z_i)
# ---------------------------------------------------------------------------


def band_nodes(spec: levy.StableSpec, r0: float, r1: float,
               n_radial: int, n_angular: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < r0 < r1:
        raise ValueError("need 0 < r0 < r1")
    d, alpha = spec.dim, spec.alpha
    c = levy.levy_density_constant(spec)
    s = np.linspace(np.log(r0), np.log(r1), n_radial)
    trap = np.full(n_radial, s[1] - s[0])
    trap[0] *= 0.5
    trap[-1] *= 0.5
    radii = np.exp(s)
    rad_w = c * trap * radii ** (-alpha)  # includes r^{-1-alpha} * r (log substitution)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
        ang_w = np.array([1.0, 1.0])
    elif d == 2:
        theta = 2.0 * np.pi * np.arange(n_angular) / n_angular
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        ang_w = np.full(n_angular, 2.0 * np.pi / n_angular)
    elif d == 3:
        n_t = max(2, int(round(np.sqrt(n_angular))))
        n_p = n_t
        mu, wmu = np.polynomial.legendre.leggauss(n_t)
        phi = 2.0 * np.pi * np.arange(n_p) / n_p
        dirs = []
        ang_w = []
        for m, wm in zip(mu, wmu):
            st = np.sqrt(1.0 - m * m)
            for p in phi:
                dirs.append([st * np.cos(p), st * np.sin(p), m])
                ang_w.append(wm * 2.0 * np.pi / n_p)
        dirs = np.array(dirs)
        ang_w = np.array(ang_w)
    else:
        raise ValueError("band quadrature supports dimensions 1..3")
    nodes = radii[:, None, None] * dirs[None, :, :]
    weights = rad_w[:, None] * ang_w[None, :]
    return nodes.reshape(-1, d), weights.reshape(-1)


# ---------------------------------------------------------------------------
# Corrected drift fields for the flow integrands.
#
#   V0(x) = [b, V](x) + int_band ( V(x + s z) - V(x) - (s z . grad) V(x) ) nu(dz)
#
# is the drift of t -> u K_t V(X_t) for the band-driven state; V1 repeats the
# construction on V0 and is only used to record the runtime bound kappa.
# ---------------------------------------------------------------------------


def matrix_drift_bracket(b: VectorField, V: MatrixField) -> MatrixField:
    cols = [_vector_bracket(b, V.column(j)) for j in range(V.dim)]
    return MatrixField.from_columns(cols).simplified()


class CorrectedDriftField:
    """Numeric evaluator for V0 and its partial derivatives."""

    def __init__(self, model: ModelSpec, V: MatrixField,
                 nodes: np.ndarray, weights: np.ndarray):
        self.model = model
        self.V = V
        self.symbolic = matrix_drift_bracket(model.drift, V)
        self.sigma = model.sigma.constant_value()
        self.nodes = nodes
        self.weights = weights
        self.offsets = nodes @ self.sigma.T  # rows (sigma z_i)
        d = model.dim
        self.gradV = [
            MatrixField(tuple(tuple(differentiate(V.entries[i][j], k + 1)
                                    for j in range(d)) for i in range(d)), d)
            for k in range(d)
        ]
        self.grad2V = [
            [
                MatrixField(tuple(tuple(differentiate(self.gradV[k].entries[i][j], m + 1)
                                        for j in range(d)) for i in range(d)), d)
                for m in range(d)
            ]
            for k in range(d)
        ]
        self.correction_trivial = V.is_constant

    def _correction(self, x: np.ndarray, base: MatrixField,
                    grads: list[MatrixField]) -> np.ndarray:
        d = self.model.dim
        if base.is_constant and all(g.is_constant for g in grads):
            return np.zeros(x.shape[:-1] + (d, d))
        xoff = x[..., None, :] + self.offsets  # (..., m, d)
        voff = base(xoff)  # (..., m, d, d)
        vbase = base(x)[..., None, :, :]
        lin = np.zeros_like(voff)
        for k in range(d):
            lin += grads[k](x)[..., None, :, :] * self.offsets[:, k][:, None, None]
        integrand = voff - vbase - lin
        return np.einsum("m,...mij->...ij", self.weights, integrand)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.symbolic(x) + self._correction(x, self.V, self.gradV)

    def partial(self, k: int, x: np.ndarray) -> np.ndarray:
        """d V0 / d x_k, symbolic core plus differentiated correction."""
        d = self.model.dim
        sym = MatrixField(
            tuple(tuple(differentiate(self.symbolic.entries[i][j], k + 1)
                        for j in range(d)) for i in range(d)), d)
        return sym(x) + self._correction(x, self.gradV[k], self.grad2V[k])

    def bracket_with_drift(self, x: np.ndarray) -> np.ndarray:
        """[b, V0](x) = (grad V0) b - (grad b) V0, evaluated numerically."""
        d = self.model.dim
        bvals = self.model.drift(x)  # (..., d)
        out = np.zeros(x.shape[:-1] + (d, d))
        for k in range(d):
            out += self.partial(k, x) * bvals[..., k, None, None]
        out -= self.model.drift_jacobian()(x) @ self(x)
        return out

    def level_two(self, x: np.ndarray) -> np.ndarray:
        """V1(x) = [b, V0](x) + band correction of V0 (numeric throughout)."""
        d = self.model.dim
        core = self.bracket_with_drift(x)
        xoff = x[..., None, :] + self.offsets
        flat = xoff.reshape(-1, d)
        voff = self(flat).reshape(xoff.shape[:-1] + (d, d))
        vbase = self(x)[..., None, :, :]
        lin = np.zeros_like(voff)
        for k in range(d):
            lin += self.partial(k, x)[..., None, :, :] * self.offsets[:, k][:, None, None]
        corr = np.einsum("m,...mij->...ij", self.weights, voff - vbase - lin)
        return core + corr


# ---------------------------------------------------------------------------
# Band-driven constant-sigma path engine (vectorized over paths)
# ---------------------------------------------------------------------------


@dataclass
class BandPaths:
    times: np.ndarray
    states: np.ndarray  # (n, steps+1, d)
    kinv: np.ndarray  # (n, steps+1, d, d)
    jump_path: np.ndarray
    jump_step: np.ndarray
    jump_sizes: np.ndarray  # (J, d)
    band: tuple[float, float]


def simulate_band_paths(
    model: ModelSpec, x0: np.ndarray, horizon: float, steps: int,
    band: tuple[float, float], n_paths: int, master_seed: int,
    small_jump_gaussian: bool = False, tag: str = "band",
) -> BandPaths:
    """Euler paths driven by jumps with radius in ``band``; K by the drift ODE."""
    if not model.sigma_is_constant:
        raise ValueError("band-driven paths assume a constant diffusion matrix")
    d = model.dim
    spec = levy.StableSpec(alpha=model.alpha, dim=d)
    rng = stream_rng(master_seed, tag)
    smat = model.sigma.constant_value()
    h = horizon / steps
    r0, r1 = band
    rate = levy.tail_mass(spec, r0) - levy.tail_mass(spec, r1)
    gauss_sd = (np.sqrt(levy.truncated_second_moment(spec, r0) / d * h)
                if small_jump_gaussian else 0.0)
    eye = np.eye(d)

    states = np.empty((n_paths, steps + 1, d))
    kinv = np.empty((n_paths, steps + 1, d, d))
    states[:, 0] = x0
    kinv[:, 0] = eye
    jp, js, jz = [], [], []
    for k in range(steps):
        x = states[:, k]
        counts = rng.poisson(rate * h, size=n_paths)
        total = int(counts.sum())
        inc = np.zeros((n_paths, d))
        if total:
            radii = levy.sample_radius_tail(spec, r0, total, rng, r1=r1)
            dirs = levy.sample_sphere(d, total, rng)
            sizes = radii[:, None] * dirs
            owner = np.repeat(np.arange(n_paths), counts)
            np.add.at(inc, owner, sizes)
            jp.append(owner)
            js.append(np.full(total, k))
            jz.append(sizes)
        if gauss_sd:
            inc += gauss_sd * rng.standard_normal((n_paths, d))
        states[:, k + 1] = x + model.drift(x) * h + inc @ smat.T
        kinv[:, k + 1] = kinv[:, k] @ np.linalg.inv(eye + model.drift_jacobian()(x) * h)
    jump_path = np.concatenate(jp) if jp else np.zeros(0, dtype=int)
    jump_step = np.concatenate(js) if js else np.zeros(0, dtype=int)
    jump_sizes = np.concatenate(jz) if jz else np.zeros((0, d))
    return BandPaths(
        times=np.linspace(0.0, horizon, steps + 1), states=states, kinv=kinv,
        jump_path=jump_path, jump_step=jump_step, jump_sizes=jump_sizes,
        band=band,
    )


def _row_apply(u: np.ndarray, kinv: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """u K M for row vector u: shapes (..., d, d) x (..., d, d) -> (..., d)."""
    uk = np.einsum("i,...ij->...j", u, kinv)
    return np.einsum("...j,...jm->...m", uk, mats)


# ---------------------------------------------------------------------------
# Exponential supermartingale means
# ---------------------------------------------------------------------------


@dataclass
class SupermartingaleResult:
    label: str
    estimate: float
    se: float
    n_paths: int
    kappa: float

    @property
    def within_contract(self) -> bool:
        """Mean of the exponential functional must not exceed 1 + 3 SE."""
        return self.estimate <= 1.0 + 3.0 * self.se

    def to_dict(self) -> dict:
        return {
            "label": self.label, "estimate": self.estimate, "se": self.se,
            "n_paths": self.n_paths, "kappa": self.kappa,
            "within_contract": bool(self.within_contract),
        }


def _direct_log_functional(spec: SemimartingaleSpec, t: float, n_paths: int,
                           rng: np.random.Generator) -> tuple[np.ndarray, float]:
    log_e = np.zeros(n_paths)
    kappa = 1.0
    if spec.brownian_xi is not None:
        xi = np.atleast_1d(np.asarray(spec.brownian_xi, dtype=float))
        w = np.sqrt(t) * rng.standard_normal((n_paths, xi.size))
        log_e += w @ xi - 0.5 * t * float(xi @ xi)
        kappa = max(kappa, float(xi @ xi))
    if spec.jump_eta is not None:
        stable = spec.stable
        r0 = spec.effective_record_threshold
        rate = levy.tail_mass(stable, r0)
        c = levy.levy_density_constant(stable)
        surf = levy.sphere_surface(stable.dim)
        alpha = stable.alpha

        def tail_fn(r):
            return (math.exp(spec.jump_eta(r)) - 1.0) * surf * c * r ** (-1.0 - alpha)

        comp, _ = quad(tail_fn, r0, np.inf, limit=400)
        counts = rng.poisson(rate * t, size=n_paths)
        total = int(counts.sum())
        radii = levy.sample_radius_tail(stable, r0, total, rng)
        eta_vals = np.asarray(spec.jump_eta(radii), dtype=float)
        if total:
            kappa = max(kappa, float(np.max(eta_vals ** 2 / np.minimum(radii, 1.0) ** 2)))
        owner = np.repeat(np.arange(n_paths), counts)
        jumps = np.zeros(n_paths)
        np.add.at(jumps, owner, eta_vals)
        log_e += jumps - t * comp
    return log_e, kappa


def _flow_log_functional(spec: SemimartingaleSpec, t: float, n_paths: int,
                         master_seed: int) -> tuple[np.ndarray, float]:
    """log of the exponential functional for the scalar jump integrand
    eta_s(z) = u K_s (V(X_s + sigma z) - V(X_s)) v, jumps in the band."""
    model = spec.model
    d = model.dim
    stable = levy.StableSpec(alpha=model.alpha, dim=d)
    r0 = spec.effective_record_threshold
    steps = spec.steps
    paths = simulate_band_paths(
        model, spec.x0, t, steps, (r0, spec.delta), n_paths, master_seed,
        small_jump_gaussian=spec.small_jump_gaussian, tag="exp-functional",
    )
    if spec.V.is_constant:
        return np.zeros(n_paths), 1.0  # jump integrand vanishes identically
    smat = model.sigma.constant_value()
    v = np.zeros(d)
    v[spec.v_index - 1] = 1.0
    h = t / steps
    nodes, weights = band_nodes(stable, r0, spec.delta, spec.band_radial, spec.band_angular)
    offsets = nodes @ smat.T
    x = paths.states[:, :-1]  # (n, steps, d)
    kin = paths.kinv[:, :-1]
    vbase = spec.V(x)[:, :, None, :, :]
    xoff = x[:, :, None, :] + offsets  # (n, steps, m, d)
    gmat = spec.V(xoff) - vbase
    eta_nodes = _row_apply(spec.u, kin[:, :, None], gmat) @ v  # (n, steps, m)
    node_norm = np.minimum(np.linalg.norm(nodes, axis=1), 1.0)
    kappa = max(1.0, float((eta_nodes ** 2 / node_norm ** 2).max(initial=0.0)))
    compensator = h * np.einsum("nsm,m->ns", np.exp(eta_nodes) - 1.0, weights).sum(axis=1)

    jump_sum = np.zeros(n_paths)
    if paths.jump_sizes.shape[0]:
        xj = paths.states[paths.jump_path, paths.jump_step]
        kj = paths.kinv[paths.jump_path, paths.jump_step]
        shift = paths.jump_sizes @ smat.T
        gj = _row_apply(spec.u, kj, spec.V(xj + shift) - spec.V(xj)) @ v
        rj = np.linalg.norm(paths.jump_sizes, axis=1)
        kappa = max(kappa, float(np.max(gj ** 2 / np.minimum(rj, 1.0) ** 2)))
        np.add.at(jump_sum, paths.jump_path, gj)
    return jump_sum - compensator, kappa


def exp_supermartingale_mean(
    spec: SemimartingaleSpec, t: float, n_paths: int, master_seed: int = 0,
) -> SupermartingaleResult:
    """Monte Carlo mean of the exponential functional; contract <= 1 + 3 SE."""
    if spec.kind == "direct":
        rng = stream_rng(master_seed, f"exp-{spec.label}")
        log_e, kappa = _direct_log_functional(spec, t, n_paths, rng)
    else:
        log_e, kappa = _flow_log_functional(spec, t, n_paths, master_seed)
    vals = np.exp(log_e)
    return SupermartingaleResult(
        label=spec.label,
        estimate=float(vals.mean()),
        se=float(vals.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0,
        n_paths=n_paths,
        kappa=kappa,
    )


def shipped_integrand_suite() -> list[SemimartingaleSpec]:
    """The integrand specs exercised by the acceptance run."""
    from .fieldlang import parse_matrix
    from .models import builtin_model

    stable = levy.StableSpec(alpha=1.0, dim=1)
    kinetic = builtin_model("kinetic")
    v_wave = parse_matrix("0; 0 | 0; sin(x2)", 2)
    return [
        SemimartingaleSpec(label="zero", stable=stable,
                           brownian_xi=np.zeros(1)),
        SemimartingaleSpec(label="pure-brownian", brownian_xi=np.array([1.0])),
        SemimartingaleSpec(label="stable-jump-min", stable=stable,
                           jump_eta=lambda r: np.minimum(r, 1.0),
                           record_threshold=0.01, delta=1.0),
        SemimartingaleSpec(label="kinetic-flow-wave", model=kinetic, V=v_wave,
                           u=np.array([0.0, 1.0]), v_index=2, delta=0.2,
                           steps=64, band_radial=16, band_angular=8),
    ]


# ---------------------------------------------------------------------------
# The scalar exponential bound and its assembled discrete form
# ---------------------------------------------------------------------------


@dataclass
class EsyCheckResult:
    scalar_violations: int
    scalar_max_ratio: float
    assembled_violations: int
    assembled_cases: int
    n_random: int

    @property
    def passed(self) -> bool:
        return self.scalar_violations == 0 and self.assembled_violations == 0


def esy_bound_check(n_random: int = 10_000, seed: int = 0) -> EsyCheckResult:
    """Check |e^x - x - 1| <= 2 x^2 on [-1, 1] and the bound it implies.

    The assembled check builds random discrete semimartingales (piecewise
    constant Brownian integrand, finitely many jump atoms) and compares
    | M_T - (1/R) log E_T(R X) | against (R/2) int |xi|^2 + 2 R int |eta|^2 nu
    by exact evaluation of every term.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 771)))
    x = rng.uniform(-1.0, 1.0, size=n_random)
    x = np.concatenate([x, [-1.0, 0.0, 1.0]])
    lhs = np.abs(np.expm1(x) - x)
    rhs = 2.0 * x * x
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, 0.0)
    scalar_violations = int((lhs > rhs + 1e-15).sum())

    assembled_violations = 0
    cases = 64
    for _ in range(cases):
        m = rng.integers(4, 12)
        h = float(rng.uniform(0.01, 0.2))
        xi = rng.uniform(-1.0, 1.0, size=m)
        dw = rng.normal(0.0, np.sqrt(h), size=m)
        n_atoms = rng.integers(1, 4)
        wts = rng.uniform(0.2, 2.0, size=n_atoms)
        eta = rng.uniform(-1.0, 1.0, size=(m, n_atoms))
        r_mult = float(rng.uniform(0.1, 1.0))
        r = r_mult / max(np.abs(eta).max(), 1e-9)
        counts = rng.poisson(wts * h, size=(m, n_atoms))
        mart_bm = float(xi @ dw)
        mart_jump = float((eta * counts).sum() - (eta * wts).sum() * h)
        int_xi2 = float((xi ** 2).sum() * h)
        int_eta2 = float(((eta ** 2) * wts).sum() * h)
        log_e = (r * mart_bm + r * mart_jump - 0.5 * r * r * int_xi2
                 - float(((np.exp(r * eta) - 1.0 - r * eta) * wts).sum() * h))
        lhs_a = abs(mart_bm + mart_jump - log_e / r)
        rhs_a = 0.5 * r * int_xi2 + 2.0 * r * int_eta2
        if lhs_a > rhs_a + 1e-12:
            assembled_violations += 1
    return EsyCheckResult(
        scalar_violations=scalar_violations,
        scalar_max_ratio=float(ratio.max()),
        assembled_violations=assembled_violations,
        assembled_cases=cases,
        n_random=n_random,
    )


# ---------------------------------------------------------------------------
# Pathwise occupation estimate (quantitative Norris-type check)
# ---------------------------------------------------------------------------


@dataclass
class KTReport:
    which: str
    label: str
    n_paths: int
    steps: int
    kappa: float
    delta: float
    epsilon: float
    horizon: float
    lhs: np.ndarray
    rhs: np.ndarray
    violation_count: int
    violation_fraction: float
    trivial: bool
    constants: dict

    def to_dict(self) -> dict:
        return {
            "which": self.which, "label": self.label, "n_paths": self.n_paths,
            "steps": self.steps, "kappa": self.kappa, "delta": self.delta,
            "epsilon": self.epsilon, "horizon": self.horizon,
            "violation_count": self.violation_count,
            "violation_fraction": self.violation_fraction,
            "trivial": self.trivial,
            "constants": {k: float(v) for k, v in self.constants.items()},
        }


def _first_constant(c_nu: float) -> float:
    """C1 in the first inequality, assembled from the Young splits of the
    boundary, drift and martingale-correction terms."""
    return max(2.0, 16.0 * c_nu / 3.0, 1.0 + 2.0 * c_nu, 4.0 * c_nu / 3.0)


def kt_pathwise_check(
    spec: SemimartingaleSpec, which: str = "first", n_paths: int = 100,
    master_seed: int = 0, steps: int | None = None, kappa_stride: int = 8,
) -> KTReport:
    """Evaluate every term of the occupation inequality pathwise.

    ``which="first"`` checks the bound on the accumulated squared jump
    integrand; ``which="second"`` the bound on the accumulated squared drift
    integrand.  Both sides are computed per path, with the exponential
    martingale logarithms discretized on the simulation grid.  For
    epsilon >= horizon the estimate holds trivially and is reported as such.
    """
    if which not in ("first", "second"):
        raise ValueError("which must be 'first' or 'second'")
    if spec.kind != "flow":
        raise ValueError("the pathwise check needs a flow-driven integrand spec")
    model = spec.model
    d = model.dim
    T, eps, delta = spec.horizon, spec.epsilon, spec.delta
    steps = steps if steps is not None else spec.steps
    r0 = spec.effective_record_threshold
    stable = levy.StableSpec(alpha=model.alpha, dim=d)
    c_nu = levy.truncated_second_moment(stable, delta) - levy.truncated_second_moment(stable, r0)
    c1 = _first_constant(c_nu)
    constants = {"c_nu_band": c_nu, "C1": c1, "band_lo": r0, "band_hi": delta}

    if eps >= T:
        return KTReport(
            which=which, label=spec.label, n_paths=n_paths, steps=steps,
            kappa=1.0, delta=delta, epsilon=eps, horizon=T,
            lhs=np.zeros(n_paths), rhs=np.full(n_paths, np.inf),
            violation_count=0, violation_fraction=0.0, trivial=True,
            constants=constants,
        )

    paths = simulate_band_paths(
        model, spec.x0, T, steps, (r0, delta), n_paths, master_seed,
        small_jump_gaussian=False, tag=f"kt-{spec.label}",
    )
    smat = model.sigma.constant_value()
    h = T / steps
    tk = paths.times[:-1]
    eps_k = np.minimum(T - eps, tk) - np.maximum(0.0, tk - eps)

    nodes, weights = band_nodes(stable, r0, delta, spec.band_radial, spec.band_angular)
    inner_nodes, inner_weights = band_nodes(stable, r0, delta,
                                            spec.inner_radial, spec.inner_angular)
    offsets = nodes @ smat.T
    node_norm = np.minimum(np.linalg.norm(nodes, axis=1), 1.0)
    v0 = CorrectedDriftField(model, spec.V, inner_nodes, inner_weights)

    x = paths.states[:, :-1]            # (n, s, d)
    kin = paths.kinv[:, :-1]            # (n, s, d, d)
    f = _row_apply(spec.u, kin, spec.V(x))          # (n, s, d)
    f0 = _row_apply(spec.u, kin, v0(x))             # (n, s, d)

    v_varies = not spec.V.is_constant
    if v_varies:
        xoff = x[:, :, None, :] + offsets
        gmat = spec.V(xoff) - spec.V(x)[:, :, None, :, :]
        g_nodes = _row_apply(spec.u, kin[:, :, None], gmat)     # (n, s, m, d)
        del gmat, xoff
    else:
        g_nodes = np.zeros(x.shape[:2] + (nodes.shape[0], d))

    has_jumps = paths.jump_sizes.shape[0] > 0
    if has_jumps and v_varies:
        xj = paths.states[paths.jump_path, paths.jump_step]
        kj = paths.kinv[paths.jump_path, paths.jump_step]
        shift = paths.jump_sizes @ smat.T
        g_jumps = _row_apply(spec.u, kj, spec.V(xj + shift) - spec.V(xj))
    else:
        g_jumps = np.zeros((paths.jump_sizes.shape[0], d))

    v0_varies = v_varies or not v0.symbolic.is_constant
    if which == "second" and v0_varies:
        xoff = x[:, :, None, :] + offsets
        shape = xoff.shape
        v0_off = v0(xoff.reshape(-1, d)).reshape(shape[:-1] + (d, d))
        g0_nodes = _row_apply(spec.u, kin[:, :, None], v0_off - v0(x)[:, :, None, :, :])
        del v0_off, xoff
        if has_jumps:
            xj = paths.states[paths.jump_path, paths.jump_step]
            kj = paths.kinv[paths.jump_path, paths.jump_step]
            shift = paths.jump_sizes @ smat.T
            g0_jumps = _row_apply(spec.u, kj, v0(xj + shift) - v0(xj))
        else:
            g0_jumps = np.zeros((0, d))
    else:
        g0_nodes = np.zeros_like(g_nodes)
        g0_jumps = np.zeros_like(g_jumps)

    # runtime bound kappa over every integrand the estimate constrains;
    # the second-level drift integrand is sampled on a stride
    kappa = max(1.0, float((f ** 2).sum(-1).max()), float((f0 ** 2).sum(-1).max()))
    if v_varies:
        kappa = max(kappa, float(((g_nodes ** 2).sum(-1) / node_norm ** 2).max()))
    if has_jumps and v_varies:
        rj = np.minimum(np.linalg.norm(paths.jump_sizes, axis=1), 1.0)
        kappa = max(kappa, float(((g_jumps ** 2).sum(-1) / rj ** 2).max()))
    if which == "second":
        if v0_varies:
            kappa = max(kappa, float(((g0_nodes ** 2).sum(-1) / node_norm ** 2).max()))
            if has_jumps:
                rj = np.minimum(np.linalg.norm(paths.jump_sizes, axis=1), 1.0)
                kappa = max(kappa, float(((g0_jumps ** 2).sum(-1) / rj ** 2).max()))
        sub = x[:, ::kappa_stride].reshape(-1, d)
        f00_sub = _row_apply(spec.u,
                             kin[:, ::kappa_stride].reshape(-1, d, d),
                             v0.level_two(sub))
        kappa = max(kappa, float((f00_sub ** 2).sum(-1).max()))
    constants["kappa"] = kappa

    sk = np.sqrt(kappa)
    f, f0 = f / sk, f0 / sk
    g_nodes, g_jumps = g_nodes / sk, g_jumps / sk
    g0_nodes, g0_jumps = g0_nodes / sk, g0_jumps / sk

    int_f2 = h * (f ** 2).sum(-1).sum(-1)       # (n,)
    int_f02 = h * (f0 ** 2).sum(-1).sum(-1)
    q2 = np.einsum("nsm,m->ns", (g_nodes ** 2).sum(-1), weights)
    int_g2 = h * q2.sum(-1)

    fj = f[paths.jump_path, paths.jump_step] if has_jumps else np.zeros((0, d))
    f0j = f0[paths.jump_path, paths.jump_step] if has_jumps else np.zeros((0, d))
    eps_j = eps_k[paths.jump_step] if has_jumps else np.zeros(0)

    if which == "first":
        r1 = 1.0 / (3.0 * eps * delta)
        eta_nodes = eps_k[None, :, None] * (
            2.0 * np.einsum("nsd,nsmd->nsm", f, g_nodes) + (g_nodes ** 2).sum(-1)
        )
        comp = h * np.einsum("nsm,m->n", np.exp(-r1 * eta_nodes) - 1.0, weights)
        jump_sum = np.zeros(n_paths)
        if has_jumps:
            eta_j = eps_j * (2.0 * (fj * g_jumps).sum(-1) + (g_jumps ** 2).sum(-1))
            np.add.at(jump_sum, paths.jump_path, eta_j)
        log_m1 = -r1 * jump_sum - comp
        lhs = int_g2
        rhs = 3.0 * delta * log_m1 + c1 * (1.0 / delta + 1.0 / eps) * int_f2 \
            + c1 * (eps + T * delta)
    else:
        # first-level martingale logarithm enters the second bound as well
        r1 = 1.0 / (3.0 * eps * delta)
        eta_nodes = eps_k[None, :, None] * (
            2.0 * np.einsum("nsd,nsmd->nsm", f, g_nodes) + (g_nodes ** 2).sum(-1)
        )
        comp1 = h * np.einsum("nsm,m->n", np.exp(-r1 * eta_nodes) - 1.0, weights)
        jump_sum1 = np.zeros(n_paths)
        if has_jumps:
            eta_j = eps_j * (2.0 * (fj * g_jumps).sum(-1) + (g_jumps ** 2).sum(-1))
            np.add.at(jump_sum1, paths.jump_path, eta_j)
        log_m1 = -r1 * jump_sum1 - comp1

        r2 = 1.0 / (3.0 * eps * np.sqrt(delta))
        hat_nodes = eps_k[None, :, None] * (
            np.einsum("nsd,nsmd->nsm", f, g0_nodes)
            + np.einsum("nsmd,nsd->nsm", g_nodes, f0)
            + np.einsum("nsmd,nsmd->nsm", g_nodes, g0_nodes)
        )
        comp2 = h * np.einsum("nsm,m->n", np.exp(-r2 * hat_nodes) - 1.0, weights)
        jump_sum2 = np.zeros(n_paths)
        if has_jumps:
            hat_j = eps_j * ((fj * g0_jumps).sum(-1) + (g_jumps * (f0j + g0_jumps)).sum(-1))
            np.add.at(jump_sum2, paths.jump_path, hat_j)
        log_m2 = -r2 * jump_sum2 - comp2

        sd = np.sqrt(delta)
        coef_f2 = (0.5 * eps ** -1.5 + (2.0 * c_nu + 0.5) / sd
                   + 4.5 * c1 * (delta ** -1.5 + 1.0 / (eps * sd)))
        const = (np.sqrt(eps) + 2.0 * eps + 0.5 * (1.0 + c_nu) * T * sd
                 + 4.5 * c1 * (eps / sd + T * sd))
        lhs = int_f02
        rhs = 3.0 * sd * log_m2 + 13.5 * sd * log_m1 + coef_f2 * int_f2 + const
        constants.update({"coef_f2": coef_f2, "const": const})

    violations = int((lhs > rhs).sum())
    return KTReport(
        which=which, label=spec.label, n_paths=n_paths, steps=steps,
        kappa=kappa, delta=delta, epsilon=eps, horizon=T,
        lhs=lhs, rhs=rhs, violation_count=violations,
        violation_fraction=violations / n_paths, trivial=False,
        constants=constants,
    )


def kt_refinement_study(
    spec: SemimartingaleSpec, which: str, n_paths: int, steps_list,
    master_seed: int = 0,
) -> dict:
    """Violation fractions across grid resolutions (same path count)."""
    rows = []
    for steps in steps_list:
        rep = kt_pathwise_check(spec, which=which, n_paths=n_paths,
                                master_seed=master_seed, steps=steps)
        rows.append({"steps": int(steps),
                     "violation_fraction": rep.violation_fraction,
                     "violation_count": rep.violation_count,
                     "kappa": rep.kappa})
    fracs = [r["violation_fraction"] for r in rows]
    return {
        "which": which,
        "label": spec.label,
        "rows": rows,
        "nonincreasing": all(fracs[i + 1] <= fracs[i] for i in range(len(fracs) - 1)),
        "final_fraction": fracs[-1],
    }


# ---------------------------------------------------------------------------
# Clock-change Laplace bound (exact on both sides for constant integrands)
# ---------------------------------------------------------------------------


@dataclass
class LaplaceRow:
    lam: float
    lhs: float
    bound: float
    margin: float
    mc_estimate: float | None = None
    mc_se: float | None = None

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam, "lhs": self.lhs, "bound": self.bound,
            "margin": self.margin, "mc_estimate": self.mc_estimate,
            "mc_se": self.mc_se,
        }


def laplace_time_change_check(
    alpha: float, f_level: float, t: float, lambdas,
    n_paths: int = 0, master_seed: int = 0,
) -> list[LaplaceRow]:
    """Exact two-sided evaluation of the clock-change Laplace bound.

    For a constant nonnegative integrand f the left side is
    exp(-t * phi(lambda * f)) in closed form; the right side is the bound
    exp(-c0 * lambda^(alpha/2) * f * t / 2) with
    c0 = 2^(alpha/2) * f^(alpha/2 - 1) / (e * (1 - alpha/2)), assembled from
    the small-jump lower bound of the jump compensator at kappa = 1/e.  The
    margin (bound - lhs) must be nonnegative for every lambda.
    """
    if f_level < 0:
        raise ValueError("the integrand level must be nonnegative")
    spec = levy.StableSpec(alpha=alpha, dim=1)
    rows = []
    a2 = alpha / 2.0
    for lam in lambdas:
        lam = float(lam)
        if f_level == 0.0:
            lhs = 1.0
            bound = 1.0
        else:
            lhs = math.exp(-t * levy.laplace_exponent(spec, lam * f_level))
            c0 = 2.0 ** a2 * f_level ** (a2 - 1.0) / (math.e * (1.0 - a2))
            bound = math.exp(-0.5 * c0 * lam ** a2 * f_level * t)
        mc = mc_se = None
        if n_paths > 0:
            rng = stream_rng(master_seed, f"laplace-{lam}")
            s_t = (t * spec.subordinator_scale) ** (1.0 / a2) * \
                levy.standard_one_sided_stable(a2, n_paths, rng)
            vals = np.exp(-lam * f_level * s_t)
            mc = float(vals.mean())
            mc_se = float(vals.std(ddof=1) / np.sqrt(n_paths))
        rows.append(LaplaceRow(lam=lam, lhs=lhs, bound=bound,
                               margin=bound - lhs, mc_estimate=mc, mc_se=mc_se))
    return rows


# ---------------------------------------------------------------------------
# Joint occupation event frequency for the bracket integrand
# ---------------------------------------------------------------------------


@dataclass
class BracketEventReport:
    t: float
    delta: float
    beta: float
    frequency: float
    n_paths: int
    bracket_threshold: float
    field_threshold: float
    bound_shape: float
    bound_formula: str

    def to_dict(self) -> dict:
        return {
            "t": self.t, "delta": self.delta, "beta": self.beta,
            "frequency": self.frequency, "n_paths": self.n_paths,
            "bracket_threshold": self.bracket_threshold,
            "field_threshold": self.field_threshold,
            "bound_shape": self.bound_shape,
            "bound_formula": self.bound_formula,
        }


def bracket_event_probability(
    model: ModelSpec, V: MatrixField, u, t: float, delta: float, beta: float,
    n_paths: int, steps: int = 128, master_seed: int = 0,
) -> BracketEventReport:
    """Empirical frequency of the joint event

        int_0^t |u K_s [b,V](X_s)|^2 ds >= t * delta^((1-beta)/2)   and
        int_0^t |u K_s V(X_s)|^2 ds    <= t * delta^(9 - beta/2),

    next to the reference decay shape exp(-t * delta^(-beta/2)) whose
    prefactor constants are left symbolic.  Constant diffusion only;
    beta must lie in (max(0, 4*alpha - 7), 1).
    """
    if not model.sigma_is_constant:
        raise ValueError("the occupation event check needs a constant diffusion matrix")
    lo = max(0.0, 4.0 * model.alpha - 7.0)
    if not lo < beta < 1.0:
        raise ValueError(
            f"beta must lie in (max(0, 4*alpha-7), 1) = ({lo:g}, 1); got {beta}")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise ValueError("u must be a unit vector")

    d = model.dim
    spec = levy.StableSpec(alpha=model.alpha, dim=d)
    rng = stream_rng(master_seed, "bracket-event")
    smat = model.sigma.constant_value()
    bracket = matrix_drift_bracket(model.drift, V)
    h = t / steps
    eye = np.eye(d)

    x = np.zeros((n_paths, d))
    kin = np.tile(eye, (n_paths, 1, 1))
    int_v = np.zeros(n_paths)
    int_br = np.zeros(n_paths)
    for _ in range(steps):
        fv = _row_apply(u, kin, V(x))
        fb = _row_apply(u, kin, bracket(x))
        int_v += h * (fv ** 2).sum(-1)
        int_br += h * (fb ** 2).sum(-1)
        ds = levy.subordinator_increments(spec, np.full(n_paths, h), rng)
        dl = np.sqrt(ds)[:, None] * rng.standard_normal((n_paths, d))
        kin = kin @ np.linalg.inv(eye + model.drift_jacobian()(x) * h)
        x = x + model.drift(x) * h + dl @ smat.T

    a_thr = t * delta ** ((1.0 - beta) / 2.0)
    b_thr = t * delta ** (9.0 - beta / 2.0)
    freq = float(((int_br >= a_thr) & (int_v <= b_thr)).mean())
    return BracketEventReport(
        t=t, delta=delta, beta=beta, frequency=freq, n_paths=n_paths,
        bracket_threshold=a_thr, field_threshold=b_thr,
        bound_shape=math.exp(-t * delta ** (-beta / 2.0)),
        bound_formula="C1 * exp(-c1 * t * delta^(-beta/2)) with C1, c1 symbolic",
    )

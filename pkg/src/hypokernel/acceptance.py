"""Acceptance criteria: one callable per criterion, shared by the
``verify-all`` experiment and the test suite.

Each criterion computes its own oracle values, checks the stated tolerance,
and returns a pass/fail outcome plus the tables it wants persisted.  The
final determinism criterion re-executes the whole battery and compares a
canonical digest of every numeric artifact.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.integrate import quad as _quad

from . import levy
from ._rng import stream_rng
from .density import (
    QuadratureConfig,
    apply_generator,
    fp_residual,
    tv_continuity_probe,
)
from .fieldlang import parse_expr
from .flow import SimConfig, covariance_batch
from .hormander import rank_at, uh_kappa
from .malliavin import inverse_det_moment, theoretical_gamma
from .martlab import (
    SemimartingaleSpec,
    exp_supermartingale_mean,
    kt_refinement_study,
    shipped_integrand_suite,
)
from .models import builtin_model


@dataclass
class CriterionOutcome:
    cid: int
    name: str
    passed: bool
    summary: str
    seconds: float = 0.0
    tables: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)

    def to_dict(self) -> dict:
        # timings stay on the console; the persisted report must be
        # byte-reproducible across reruns
        return {"cid": self.cid, "name": self.name, "passed": self.passed,
                "summary": self.summary}


def _c01_jump_constant(seed: int) -> CriterionOutcome:
    spec = levy.StableSpec(alpha=1.0, dim=1)
    closed = levy.levy_density_constant(spec)
    rows = []
    ok = abs(closed - 0.7978845608) <= 1e-4
    for z in (0.5, 1.0, 2.0):
        val, _ = _quad(lambda u: (2 * np.pi * u) ** -0.5 * np.exp(-z * z / (2 * u))
                       * u ** -1.5, 0, np.inf, limit=400)
        fitted = val * z ** 2
        rows.append([z, fitted, closed, abs(fitted - closed)])
        ok = ok and abs(fitted - closed) <= 1e-4
    note = ("direct quadrature of the subordination integral fixes the "
            "constant at 2^((d+alpha)/2)*(2pi)^(-d/2)*Gamma((d+alpha)/2); the "
            "variant sometimes printed with 2^(-(d+alpha)/2) disagrees with "
            "that integral by a factor 2^(d+alpha)")
    return CriterionOutcome(
        1, "jump-density constant vs quadrature oracle", ok,
        f"closed form {closed:.6f}, max fit deviation "
        f"{max(r[3] for r in rows):.2e} (tol 1e-4); {note}",
        tables={"jump_constant": (["z", "fitted", "closed_form", "abs_dev"], rows)},
    )


def _c02_subordinator_laplace(seed: int) -> CriterionOutcome:
    spec = levy.StableSpec(alpha=1.0, dim=1)
    rng = stream_rng(seed, "acc-laplace")
    s1 = levy.subordinator_increments(spec, np.full(100_000, 1.0), rng)
    vals = np.exp(-s1)
    est, se = float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))
    target = float(np.exp(-levy.laplace_exponent(spec, 1.0)))
    dev = abs(est - target)
    ok = dev <= 3 * se
    return CriterionOutcome(
        2, "subordinator Laplace transform", ok,
        f"mean exp(-S_1) = {est:.5f} +- {se:.5f}, target {target:.5f}, "
        f"deviation {dev / se:.2f} SE (tol 3 SE)",
        tables={"subordinator_laplace": (["estimate", "se", "target", "dev_se"],
                                         [[est, se, target, dev / se]])},
    )


def _c03_char_function(seed: int) -> CriterionOutcome:
    spec = levy.StableSpec(alpha=1.0, dim=1)
    rng = stream_rng(seed, "acc-charfn")
    s1 = levy.subordinator_increments(spec, np.full(100_000, 1.0), rng)
    l1 = np.sqrt(s1) * rng.standard_normal(s1.size)
    rows, ok = [], True
    for xi in (0.5, 1.0, 2.0):
        emp = float(np.cos(xi * l1).mean())
        target = float(np.exp(-np.sqrt(2 * np.pi) * xi))
        dev = abs(emp - target)
        rows.append([xi, emp, target, dev])
        ok = ok and dev < 0.02
    return CriterionOutcome(
        3, "characteristic function of the driving noise", ok,
        f"max |empirical - exact| = {max(r[3] for r in rows):.4f} (tol 0.02) "
        f"at xi in {{0.5, 1, 2}}",
        tables={"char_function": (["xi", "empirical", "exact", "abs_dev"], rows)},
    )


def _c04_generator_symbol(seed: int) -> CriterionOutcome:
    model = builtin_model("pure-stable", alpha=1.0, dim=1)
    f = parse_expr("cos(x1)", 1)
    gv = apply_generator(
        model, f, [0.0],
        QuadratureConfig(r_min=1e-4, r_max=4e3, radial_nodes=32768),
        f_sup=1.0,
    )
    target = -np.sqrt(2 * np.pi)
    err = abs(gv.value - target)
    ok = err <= gv.error_estimate < 1e-3
    return CriterionOutcome(
        4, "generator vs symbol on cos", ok,
        f"value {gv.value:.6f}, target {target:.6f}, error {err:.2e} <= "
        f"attached bound {gv.error_estimate:.2e} < 1e-3",
        tables={"generator_symbol": (
            ["value", "target", "abs_err", "bound", "inner", "outer"],
            [[gv.value, target, err, gv.error_estimate, gv.inner_bound,
              gv.outer_bound]])},
    )


def _c05_brackets_rank(seed: int) -> CriterionOutcome:
    from .fieldlang import bracket_sequence

    kin = builtin_model("kinetic")
    rep = rank_at(kin, [0.3, -0.7], n_max=3)
    lv2 = bracket_sequence(kin, 2)[1](np.array([0.0, 0.0]))
    col = lv2[:, 1]
    ok = rep.n_needed == 2 and np.allclose(np.abs(col), [1.0, 0.0], atol=1e-12)
    rows = [["kinetic", rep.n_needed, 2, ok]]

    rng = np.random.default_rng(np.random.SeedSequence((seed, 55)))
    for trial in range(3):
        b_mat = rng.normal(size=(3, 3))
        col0 = rng.normal(size=3)
        sig = np.zeros((3, 3))
        sig[:, 0] = col0
        model = builtin_model("linear", matrix=b_mat.tolist(), sigma=sig.tolist())
        got = rank_at(model, rng.normal(size=3), n_max=5).n_needed
        kalman = None
        blocks = []
        for n in range(1, 6):
            blocks.append(np.linalg.matrix_power(b_mat, n - 1) @ sig)
            if np.linalg.matrix_rank(np.hstack(blocks)) == 3:
                kalman = n
                break
        rows.append([f"linear-{trial}", got, kalman, got == kalman])
        ok = ok and got == kalman

    deg = builtin_model("degenerate-control")
    rep_deg = rank_at(deg, [0.1, 0.2], n_max=6)
    rows.append(["degenerate-control", rep_deg.n_needed, None,
                 rep_deg.n_needed is None])
    ok = ok and rep_deg.n_needed is None
    return CriterionOutcome(
        5, "bracket ranks vs Kalman oracle", ok,
        "kinetic fills rank at level 2 with the expected bracket column; "
        "3 random linear models match the matrix-power oracle; the "
        "degenerate control never fills rank through level 6",
        tables={"bracket_ranks": (["model", "n_needed", "oracle", "match"], rows)},
    )


def _c06_uniform_condition(seed: int) -> CriterionOutcome:
    kin = builtin_model("kinetic")
    rep = uh_kappa(kin, j0=2, points_per_axis=21)
    ok = abs(rep.kappa_hat - 1.0) <= 1e-10
    return CriterionOutcome(
        6, "uniform bracket condition on the kinetic model", ok,
        f"kappa_hat = {rep.kappa_hat!r} over a 21x21 scan (target 1 +- 1e-10)",
        tables={"uniform_condition": (["j0", "kappa_hat", "argmin_x", "argmin_y"],
                                      [[rep.j0, rep.kappa_hat,
                                        rep.argmin_point[0], rep.argmin_point[1]]])},
    )


def _c07_inverse_moment(seed: int) -> CriterionOutcome:
    model = builtin_model("pure-stable", alpha=1.0, dim=1)
    cfg1 = SimConfig(t_end=1.0, steps=16, seed=seed)
    rep1 = inverse_det_moment(model, [0.0], 1.0, 1.0, 100_000, truncation=1e-3,
                              cfg=cfg1, master_seed=seed + 7)
    rep_half = inverse_det_moment(model, [0.0], 0.5, 1.0, 100_000, truncation=1e-3,
                                  cfg=SimConfig(t_end=0.5, steps=16, seed=seed),
                                  master_seed=seed + 8)
    target = 1.0 / (2 * np.pi)
    rel = abs(rep1.estimate - target) / target
    ratio = rep_half.estimate / rep1.estimate
    ratio_rel = abs(ratio - 4.0) / 4.0
    ok = rel <= 0.05 and ratio_rel <= 0.10
    return CriterionOutcome(
        7, "inverse-determinant moment oracle", ok,
        f"E[det^-1] = {rep1.estimate:.5f} vs 1/(2 pi) = {target:.5f} "
        f"(rel {rel:.3%}, tol 5%); t-scaling ratio {ratio:.3f} vs 4 "
        f"(rel {ratio_rel:.3%}, tol 10%)",
        tables={"inverse_moment": (
            ["t", "estimate", "target", "rel_dev", "hill_tail_index"],
            [[1.0, rep1.estimate, target, rel, rep1.hill_tail_index],
             [0.5, rep_half.estimate, 4 * target, abs(ratio - 4) / 4,
              rep_half.hill_tail_index]])},
    )


def _c08_degeneracy(seed: int) -> CriterionOutcome:
    deg = builtin_model("degenerate-control")
    cfg = SimConfig(t_end=1.0, steps=64, seed=seed)
    batch = covariance_batch(deg, [0.0, 0.0], cfg, 1000, master_seed=seed + 11)
    u = np.array([0.0, 1.0])
    quad_forms = np.einsum("i,nij,j->n", u, batch.matrices, u)
    deg_ok = bool(np.all(np.abs(quad_forms) <= 1e-12)) and batch.aborted == 0

    kin = builtin_model("kinetic")
    bk = covariance_batch(kin, [0.0, 0.0], cfg, 1000, master_seed=seed + 12)
    kin_ok = bool(np.all(bk.lambda_min > 0)) and bk.aborted == 0
    ok = deg_ok and kin_ok
    return CriterionOutcome(
        8, "degeneracy detection", ok,
        f"degenerate control: max |u Sigma u^T| = {np.abs(quad_forms).max():.2e} "
        f"(tol 1e-12, {quad_forms.size} paths); kinetic: min lambda_min = "
        f"{bk.lambda_min.min():.3e} > 0 on all {bk.lambda_min.size} paths",
        tables={"degeneracy": (
            ["model", "statistic", "value", "paths"],
            [["degenerate-control", "max_u_sigma_u", float(np.abs(quad_forms).max()),
              quad_forms.size],
             ["kinetic", "min_lambda_min", float(bk.lambda_min.min()),
              bk.lambda_min.size]])},
    )


def _c09_supermartingale(seed: int) -> CriterionOutcome:
    rows, ok = [], True
    brownian = None
    for spec in shipped_integrand_suite():
        n = 50_000 if spec.kind == "direct" else 400
        t = 1.0 if spec.kind == "direct" else 0.5
        res = exp_supermartingale_mean(spec, t, n, master_seed=seed + 21)
        rows.append([res.label, res.estimate, res.se, res.n_paths,
                     res.within_contract])
        ok = ok and res.within_contract
        if spec.label == "pure-brownian":
            brownian = res
    if brownian is not None:
        centered = abs(brownian.estimate - 1.0) <= 3 * brownian.se
        ok = ok and centered
    return CriterionOutcome(
        9, "exponential supermartingale suite", ok,
        "; ".join(f"{r[0]}: {r[1]:.4f} +- {r[2]:.4f}" for r in rows)
        + " (each <= 1 + 3 SE; pure-brownian within 3 SE of 1)",
        tables={"supermartingale": (
            ["label", "estimate", "se", "n_paths", "within_contract"], rows)},
    )


def _c10_kt_refinement(seed: int) -> CriterionOutcome:
    kin = builtin_model("kinetic")
    spec = SemimartingaleSpec(label="kinetic-acceptance", model=kin, V=kin.sigma,
                              u=np.array([1.0, 0.0]), delta=0.1, epsilon=0.05,
                              horizon=0.5)
    rows, ok = [], True
    for which in ("first", "second"):
        study = kt_refinement_study(spec, which, 1000, [64, 128],
                                    master_seed=seed + 31)
        for r in study["rows"]:
            rows.append([which, r["steps"], r["violation_fraction"],
                         r["violation_count"]])
        ok = ok and study["nonincreasing"] and study["final_fraction"] == 0.0
    return CriterionOutcome(
        10, "occupation-estimate refinement study", ok,
        "violation fractions nonincreasing under step doubling and zero at "
        "the finest resolution for both inequalities "
        f"({'; '.join(f'{r[0]}@{r[1]}: {r[2]:.3f}' for r in rows)})",
        tables={"kt_refinement": (
            ["which", "steps", "violation_fraction", "violation_count"], rows)},
    )


def _c11_fp_residual(seed: int) -> CriterionOutcome:
    ps = builtin_model("pure-stable", alpha=1.0, dim=1)
    rows_ps = fp_residual(
        ps, [("cos(x1)", parse_expr("cos(x1)", 1))], [0.0], [1.0], 10_000,
        QuadratureConfig(r_min=1e-4, r_max=2e3, radial_nodes=16384),
        master_seed=seed + 41)
    kin = builtin_model("kinetic")
    rows_kin = fp_residual(
        kin, [("exp(-x1^2-x2^2)", parse_expr("exp(-x1^2-x2^2)", 2))],
        [0.0, 0.0], [0.5], 10_000,
        QuadratureConfig(r_min=1e-3, r_max=100.0, radial_nodes=600),
        master_seed=seed + 42)
    rows = rows_ps + rows_kin
    ok = all(r.within_contract for r in rows)
    table = [[r.f_text, r.t, r.residual, r.se, r.bias_estimate,
              3 * (r.se + r.bias_estimate), r.within_contract] for r in rows]
    return CriterionOutcome(
        11, "evolution-equation residuals", ok,
        "; ".join(f"{r.f_text}@t={r.t:g}: residual {r.residual:.4f} vs "
                  f"{3 * (r.se + r.bias_estimate):.4f}" for r in rows),
        tables={"fp_residual": (
            ["f", "t", "residual", "se", "bias", "contract", "within"], table)},
    )


def _c12_strong_feller(seed: int) -> CriterionOutcome:
    offsets1 = [[h] for h in (0.0078125, 0.015625, 0.03125, 0.0625, 0.125)]
    ps = builtin_model("pure-stable", alpha=1.0, dim=1)
    rep1 = tv_continuity_probe(ps, 1.0, [0.0], offsets1, 10_000,
                               np.linspace(-60, 60, 801), steps=16,
                               master_seed=seed + 51)
    kin = builtin_model("kinetic")
    offsets2 = [[h, 0.0] for h in (0.0078125, 0.015625, 0.03125, 0.0625, 0.125)]
    axes2 = [np.linspace(-25, 25, 161), np.linspace(-25, 25, 161)]
    rep2 = tv_continuity_probe(kin, 1.0, [0.0, 0.0], offsets2, 10_000, axes2,
                               steps=64, master_seed=seed + 52)
    ok = rep1.spearman_rho > 0.9 and rep2.spearman_rho > 0.9
    rows = [["pure-stable", r.offset_norm, r.l1_distance] for r in rep1.rows]
    rows += [["kinetic", r.offset_norm, r.l1_distance] for r in rep2.rows]
    return CriterionOutcome(
        12, "strong Feller continuity probe", ok,
        f"Spearman rho = {rep1.spearman_rho:.3f} (pure-stable), "
        f"{rep2.spearman_rho:.3f} (kinetic); both > 0.9 over a 5-point "
        f"offset ladder",
        tables={"strong_feller": (["model", "offset_norm", "l1_distance"], rows)},
    )


def _c13_exponents(seed: int) -> CriterionOutcome:
    pred = theoretical_gamma(1.0, 0.5, 2)
    exact = pred.gamma_exact == Fraction(1, 1226)
    fired = False
    try:
        theoretical_gamma(1.9, 0.3, 2)
    except ValueError as exc:
        fired = "4*alpha-7" in str(exc)
    fired2 = False
    try:
        theoretical_gamma(1.0, 1.5, 2)
    except ValueError:
        fired2 = True
    ok = exact and fired and fired2
    return CriterionOutcome(
        13, "exponent bookkeeping", ok,
        f"gamma(alpha=1, beta=1/2, j0=2) = {pred.gamma_exact} (exact match "
        f"{exact}); range errors fire citing the beta constraint",
        tables={"exponents": (
            ["alpha", "beta", "j0", "a", "theta", "gamma"],
            [[pred.alpha, pred.beta, pred.j0, str(pred.a_exact),
              str(pred.theta_exact), str(pred.gamma_exact)]])},
    )


CRITERIA = [
    _c01_jump_constant,
    _c02_subordinator_laplace,
    _c03_char_function,
    _c04_generator_symbol,
    _c05_brackets_rank,
    _c06_uniform_condition,
    _c07_inverse_moment,
    _c08_degeneracy,
    _c09_supermartingale,
    _c10_kt_refinement,
    _c11_fp_residual,
    _c12_strong_feller,
    _c13_exponents,
]


def run_criteria(master_seed: int = 0, progress=None) -> list[CriterionOutcome]:
    """Run criteria 1..13; determinism (14) is layered on by the caller."""
    outcomes = []
    for fn in CRITERIA:
        t0 = time.perf_counter()
        out = fn(master_seed)
        out.seconds = time.perf_counter() - t0
        outcomes.append(out)
        if progress is not None:
            progress(out)
    return outcomes


def criteria_digest(outcomes: list[CriterionOutcome]) -> str:
    """Canonical digest of every numeric artifact (timings excluded)."""
    payload = []
    for out in outcomes:
        payload.append({
            "cid": out.cid, "passed": out.passed, "summary": out.summary,
            "tables": {name: [header, [[_canon(v) for v in row] for row in rows]]
                       for name, (header, rows) in sorted(out.tables.items())},
        })
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _canon(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return f"{float(v):.17g}"
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    return v

"""End-to-end experiment stages shared by the CLI subcommands.

Each stage is a pure function of the config (and, for ``bounds``, of the
results of the stages it consumes); file output goes through :class:`Outputs`
so that every written file lands in the run manifest.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import bounds as bd
from ._random import COPULA_STREAM, REPLICATE_STREAM, START_STREAM, derive_seed, make_rng
from .chain import (
    MixingEstimate,
    NotMixedError,
    attach_observations,
    check_mixing_bounds,
    estimate_mixing,
    samples_to_arrays,
    simulate_chain,
)
from .config import ExperimentConfig, RunManifest
from .copula_core import (
    GridCopula,
    IfsSystem,
    TransformationMatrix,
    ValidationError,
    build_ifs,
    copula_axiom_violations,
    d_inf,
    empirical_copula,
    invariant_copula,
)
from .mcsgd import (
    IterateTrace,
    SgdConfig,
    check_recursion_inequality,
    noise_at_optimum,
    noise_bound,
    run_frozen_twin,
    run_mcsgd,
)
from .rkhs import (
    KernelExpansion,
    SpectralFunction,
    SpectralModel,
    l2_norm_mu,
    nystrom_spectrum,
    quadrature_from_copula,
    regularization_target,
    ridge_expansion,
    source_function,
)

log = logging.getLogger(__name__)


def _f(x) -> str:
    return repr(float(x))


class Outputs:
    """Writes files under one output directory and records them in the manifest."""

    def __init__(self, out_dir: Path, manifest: RunManifest):
        self.dir = Path(out_dir)
        self.manifest = manifest

    def path(self, rel: str) -> Path:
        p = self.dir / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_with(self, rel: str, writer) -> Path:
        p = self.path(rel)
        writer(p)
        self.manifest.register(self.dir, p)
        return p

    def write_json(self, rel: str, doc) -> Path:
        def w(p):
            p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

        return self.write_with(rel, w)

    def write_rows(self, rel: str, header, rows) -> Path:
        def w(p):
            with open(p, "w", newline="") as fh:
                cw = csv.writer(fh, lineterminator="\n")
                cw.writerow(header)
                cw.writerows(rows)

        return self.write_with(rel, w)


def new_manifest(cfg: ExperimentConfig, command: str) -> RunManifest:
    return RunManifest(
        command=command,
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        started_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


# ------------------------------------------------------------------- copula


@dataclass
class CopulaResult:
    invariant: GridCopula
    checkpoints: list[int]
    d_inf: np.ndarray  # seeds x checkpoints
    axiom_worst: dict
    passed: bool

    @property
    def median_curve(self) -> np.ndarray:
        return np.median(self.d_inf, axis=0)


def run_copula(cfg: ExperimentConfig, U: TransformationMatrix, out: Outputs | None = None) -> CopulaResult:
    G = cfg.copula_grid
    ifs = build_ifs(U)
    A = invariant_copula(U, G)
    worst = copula_axiom_violations(A.values)
    if out:
        out.write_with("copula/invariant_copula.csv", A.to_csv)
    ns = cfg.copula_checkpoints
    d = np.empty((cfg.copula_seeds, len(ns)))
    for s in range(cfg.copula_seeds):
        seed_s = derive_seed(cfg.seed, COPULA_STREAM, s)
        x0 = make_rng(seed_s, START_STREAM).random(2)
        traj = simulate_chain(ifs, x0, ns[-1], seed_s)
        for j, n in enumerate(ns):
            E = empirical_copula(traj.states[:n], G)
            for key, val in copula_axiom_violations(E.values).items():
                worst[key] = max(worst[key], val)
            d[s, j] = d_inf(E, A)
            if s == 0 and out:
                out.write_with(f"copula/empirical_n{n}.csv", E.to_csv)
    med = np.median(d, axis=0)
    monotone = bool(np.all(np.diff(med) <= 0))
    final_ok = bool(med[-1] <= 0.05)
    axioms_ok = worst["grounded"] == 0 and worst["margins"] <= 1e-10 and worst["volume"] <= 1e-12 and worst["frechet"] <= 1e-12
    passed = monotone and final_ok and axioms_ok
    if out:
        header = ["n", "median", "min", "max"] + [f"seed_{s}" for s in range(cfg.copula_seeds)]
        rows = [[n, _f(med[j]), _f(d[:, j].min()), _f(d[:, j].max())] + [_f(x) for x in d[:, j]] for j, n in enumerate(ns)]
        out.write_rows("copula/convergence.csv", header, rows)
        out.write_json(
            "copula/copula_report.json",
            {
                "passed": passed,
                "final_median_d_inf": float(med[-1]),
                "final_median_threshold": 0.05,
                "median_non_increasing": monotone,
                "axiom_worst_violation": worst,
            },
        )
    return CopulaResult(A, list(ns), d, worst, passed)


# ------------------------------------------------------------------- mixing


@dataclass
class MixingResult:
    estimate: MixingEstimate | None
    report: dict
    passed: bool

    @property
    def t_mix(self) -> int | None:
        return None if self.estimate is None else self.estimate.t_mix


def run_mixing(cfg: ExperimentConfig, ifs: IfsSystem, out: Outputs | None = None) -> MixingResult:
    mc = cfg.mixing
    try:
        est = estimate_mixing(ifs, mc.cells_per_axis, mc.epsilon, mc.n_starts, mc.n_reps, mc.horizon, seed=cfg.seed)
    except NotMixedError as exc:
        report = {"passed": False, "mixed": False, "message": str(exc), "d_curve": [float(x) for x in exc.d_curve]}
        if out:
            out.write_rows("mixing/mixing_curve.csv", ["t", "d"], [[t, _f(x)] for t, x in enumerate(exc.d_curve)])
            out.write_json("mixing/mixing_report.json", report)
        return MixingResult(None, report, False)
    check = check_mixing_bounds(est, cfg.T)
    report = {"mixed": True, "t_mix": est.t_mix, "epsilon": est.epsilon, "d_curve": [float(x) for x in est.d_curve], **check.as_dict()}
    if out:
        out.write_with("mixing/mixing_curve.csv", est.to_csv)
        out.write_json("mixing/mixing_report.json", report)
    return MixingResult(est, report, check.passed)


# -------------------------------------------------------------------- learn


@dataclass
class LearnContext:
    cfg: ExperimentConfig
    ifs: IfsSystem
    spec: SpectralModel
    g_values: np.ndarray
    source: SpectralFunction
    f_rho: np.ndarray
    f_lambda: np.ndarray
    w_star: KernelExpansion
    sgd: SgdConfig
    twin_sgd: SgdConfig

    @property
    def g_norm(self) -> float:
        return l2_norm_mu(self.spec, self.g_values)


def build_context(cfg: ExperimentConfig, U: TransformationMatrix) -> LearnContext:
    ifs = build_ifs(U)
    kernel = cfg.kernel.build()
    nodes, weights = quadrature_from_copula(invariant_copula(U, cfg.spectral_grid))
    spec = nystrom_spectrum(kernel, nodes, weights)
    if cfg.target_index > spec.rank:
        raise ValidationError(f"target_index {cfg.target_index} exceeds the spectral rank {spec.rank}")
    g = spec.eigvec_values[:, cfg.target_index - 1]
    source = source_function(spec, cfg.beta, g)
    f_rho = source.node_values()
    f_lambda = regularization_target(spec, cfg.lam, f_rho)
    w_star = ridge_expansion(spec, cfg.lam, f_rho)
    sgd = SgdConfig(cfg.theta, cfg.lam, cfg.T, cfg.M, kernel)
    twin = SgdConfig(cfg.theta, cfg.lam, cfg.T, cfg.M, kernel, cfg.t_star)
    return LearnContext(cfg, ifs, spec, g, source, f_rho, f_lambda, w_star, sgd, twin)


@dataclass
class ReplicateResult:
    index: int
    seed: int
    trace: IterateTrace
    final_dist_rho: float
    noise_max: float
    grad_sum_sq: float | None
    recursion_checked: int = 0
    recursion_violations: int = 0
    recursion_worst_slack: float = math.inf
    l2_recursion_violations: int = 0


def run_replicate(ctx: LearnContext, r: int) -> ReplicateResult:
    cfg = ctx.cfg
    seed_r = derive_seed(cfg.seed, REPLICATE_STREAM, r)
    x0 = make_rng(seed_r, START_STREAM).random(2)
    traj = simulate_chain(ctx.ifs, x0, cfg.T, seed_r)
    try:
        samples = attach_observations(traj, ctx.source, cfg.noise_level, cfg.M, seed_r)
    except ValidationError as exc:
        raise ValidationError(f"replicate {r}: {exc}") from exc
    xs, ys = samples_to_arrays(samples)
    zero = KernelExpansion.zero(ctx.sgd.kernel)
    trace = run_mcsgd((xs, ys), ctx.sgd, zero, ctx.spec, ctx.f_lambda)
    twin = run_frozen_twin((xs, ys), ctx.twin_sgd, zero, ctx.w_star, ctx.spec)
    res = ReplicateResult(
        index=r,
        seed=seed_r,
        trace=trace,
        final_dist_rho=l2_norm_mu(ctx.spec, trace.final(ctx.spec.nodes) - ctx.f_rho),
        noise_max=float(noise_at_optimum(ctx.w_star, xs, ys, cfg.lam).max()),
        # the twin starts at 0 and moves by -sum gamma_t grad V(w*), with gamma_t = (alpha/eta^2) t^-theta
        grad_sum_sq=None if twin.clamped.any() else float((ctx.sgd.eta**2 / ctx.sgd.alpha) ** 2 * twin.rkhs_norm[-1] ** 2),
    )
    if cfg.check_recursion:
        rep = check_recursion_inequality(trace, twin, ctx.twin_sgd, ctx.w_star, zero, zero, ctx.spec)
        res.recursion_checked = rep.steps_checked
        res.recursion_violations = len(rep.violations)
        res.recursion_worst_slack = rep.worst_slack
        res.l2_recursion_violations = rep.l2_violations
    return res


def _replicate_worker(args):
    ctx, r = args
    return run_replicate(ctx, r)


@dataclass
class LearnResult:
    context: LearnContext
    replicates: list[ReplicateResult]
    report: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.report.get("passed", False))

    @property
    def traces(self) -> list[IterateTrace]:
        return [r.trace for r in self.replicates]


def run_learn(ctx: LearnContext, out: Outputs | None = None) -> LearnResult:
    cfg = ctx.cfg
    idx = list(range(cfg.replicates))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reps = list(pool.map(_replicate_worker, [(ctx, r) for r in idx]))
    else:
        reps = [run_replicate(ctx, r) for r in idx]
    reps.sort(key=lambda r: r.index)

    sq = np.array([r.trace.l2_error for r in reps]) ** 2
    init_mean = float(sq[:, 0].mean())
    final_mean = float(sq[:, -1].mean())
    kern = ctx.sgd.kernel
    norm_cap = 2 * cfg.M * kern.C_k / cfg.lam
    max_norm = float(max(r.trace.rkhs_norm.max() for r in reps))
    nb = noise_bound(cfg.M, kern.C_k, cfg.lam)
    noise_max = max(r.noise_max for r in reps)
    rec_viol = sum(r.recursion_violations for r in reps)
    checks = {
        "error_reduction": {"passed": final_mean < init_mean / 4, "mean_initial_sq_error": init_mean, "mean_final_sq_error": final_mean, "ratio": final_mean / init_mean if init_mean > 0 else 0.0, "threshold_ratio": 0.25},
        "final_below_initial": {"passed": final_mean < init_mean},
        "iterate_boundedness": {"passed": max_norm <= norm_cap, "max_rkhs_norm": max_norm, "cap": norm_cap},
        "noise_at_optimum": {"passed": noise_max <= nb + 1e-6, "max_gradient_norm": noise_max, "bound": nb},
    }
    if cfg.check_recursion:
        checks["recursion_inequality"] = {
            "passed": rec_viol == 0,
            "violations": rec_viol,
            "steps_checked": sum(r.recursion_checked for r in reps),
            "worst_slack": min(r.recursion_worst_slack for r in reps),
            "l2_analogue_violations_reported_only": sum(r.l2_recursion_violations for r in reps),
        }
    report = {
        "passed": all(c["passed"] for c in checks.values()),
        "checks": checks,
        "replicate_seeds": [r.seed for r in reps],
        "sigma": [float(s) for s in ctx.spec.eigenvalues[:10]],
        "sup_f_rho_nodes": ctx.source.sup_on_nodes(),
        "f_lambda_l2_norm": l2_norm_mu(ctx.spec, ctx.f_lambda),
        "w_star_rkhs_norm": float(math.sqrt(max(ctx.w_star.inner(ctx.w_star), 0.0))),
        "gamma_1": float(ctx.sgd.gamma(1)),
        "kappa": ctx.sgd.kappa,
    }
    result = LearnResult(ctx, reps, report)
    if out:
        for r in reps:
            out.write_with(f"learn/trace_rep{r.index:03d}.csv", r.trace.to_csv)
        rows = [[t + 1, _f(sq[:, t].mean()), _f(sq[:, t].min()), _f(sq[:, t].max())] for t in range(sq.shape[1])]
        out.write_rows("learn/error_decay.csv", ["t", "mean", "min", "max"], rows)
        out.write_with("learn/spectrum.csv", lambda p: ctx.spec.to_csv(p))
        out.write_with("learn/nodes.csv", lambda p: _write_nodes(ctx, p))
        out.write_with("learn/final_expansion_rep000.csv", reps[0].trace.final.to_csv)
        out.write_json("learn/learn_report.json", report)
    return result


def _write_nodes(ctx: LearnContext, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_x", "node_y", "weight", "g", "f_rho", "f_lambda"])
        for (x, y), wt, g, fr, fl in zip(ctx.spec.nodes, ctx.spec.weights, ctx.g_values, ctx.f_rho, ctx.f_lambda):
            w.writerow([_f(x), _f(y), _f(wt), _f(g), _f(fr), _f(fl)])


# ------------------------------------------------------------------- bounds


def bound_params(ctx: LearnContext, t_mix: int) -> bd.BoundParams:
    cfg = ctx.cfg
    return bd.BoundParams(
        theta=cfg.theta,
        lam=cfg.lam,
        C_k=ctx.sgd.kernel.C_k,
        M=cfg.M,
        t_mix=max(1, t_mix),
        T=cfg.T,
        delta=cfg.delta,
        beta=cfg.beta,
        g_norm=ctx.g_norm,
        # f_1 = 0, so the initial distance to w* is |w*|_k
        dist0_sq=float(ctx.w_star.inner(ctx.w_star)),
    )


def run_bounds(learn: LearnResult, mixing: MixingResult, out: Outputs | None = None) -> dict:
    ctx = learn.context
    if mixing.estimate is None:
        doc = {"passed": False, "skipped": True, "reason": "mixing time could not be estimated; bound validation skipped"}
        if out:
            out.write_json("bounds/bound_report.json", doc)
        return doc
    p = bound_params(ctx, mixing.t_mix)
    reps = learn.replicates
    dist_rho = np.array([r.final_dist_rho for r in reps])
    tb = bd.total_bound(p)
    grad_sq = [r.grad_sum_sq for r in reps if r.grad_sum_sq is not None]
    extras = {
        "max_gradient_norm_at_optimum": max(r.noise_max for r in reps),
        "mean_final_dist_to_f_rho": float(dist_rho.mean()),
        "fraction_above_total_bound": float(np.mean(dist_rho > tb)),
    }
    if grad_sq:
        extras["mean_weighted_gradient_sum_sq"] = float(np.mean(grad_sq))
    report = bd.validate_bounds(learn.traces, p, extras)
    report.checks["total_bound"] = bd._check(
        extras["fraction_above_total_bound"] <= p.delta_prime + 2 / math.sqrt(len(reps)),
        extras["fraction_above_total_bound"],
        p.delta_prime + 2 / math.sqrt(len(reps)),
    )
    if grad_sq:
        simplified = report.theory["grad_sum_simplified"]
        report.checks["grad_sum_empirical"] = bd._check(float(np.mean(grad_sq)) <= simplified, float(np.mean(grad_sq)), simplified)
    sigma_bound = math.sqrt(p.sigma_sq)
    report.checks["noise_at_optimum"] = bd._check(extras["max_gradient_norm_at_optimum"] <= sigma_bound + 1e-6, extras["max_gradient_norm_at_optimum"], sigma_bound)
    if mixing.t_mix == 0:
        report.notes.append("estimated t_mix = 0; bounds use t_mix = 1")
    doc = report.as_dict()
    if out:
        out.write_json("bounds/bound_report.json", doc)
        out.write_with("bounds/bound_curve.csv", report.to_csv)
    return doc

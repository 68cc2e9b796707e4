"""Closed-form constants of the convergence analysis and their empirical validation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .copula_core import ValidationError

C_FIXED = 30.0
MIN_REPLICATES = 30


class BoundViolation(AssertionError):
    pass


class Comparison(NamedTuple):
    exact: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.exact <= self.bound


def _check_kappa_theta(kappa: float, theta: float) -> None:
    if not 0 < kappa <= 1:
        raise ValidationError("kappa must lie in (0, 1]")
    if not 0 < theta <= 1:
        raise ValidationError("theta must lie in (0, 1]")


def _log_factors(kappa: float, theta: float, T: int) -> np.ndarray:
    """log(1 - kappa / i^theta) for i = 1..T (index 0 holds i = 1)."""
    q = kappa * np.arange(1, T + 1, dtype=float) ** (-theta)
    with np.errstate(divide="ignore"):
        return np.log1p(-np.minimum(q, 1.0))


def product_bound(kappa: float, theta: float, k, T: int, factor: float = 2.0):
    """Upper bound on prod_{i=k+1}^T (1 - kappa/i^theta).

    ``factor`` multiplies kappa in the exponent of the theta < 1 form; the
    default 2 is the form the convergence constants use, 1 is what the integral comparison supports.
    """
    k = np.asarray(k, dtype=float)
    if theta == 1:
        return ((k + 1) / (T + 1)) ** kappa
    return np.exp((factor * kappa / (1 - theta)) * ((k + 1) ** (1 - theta) - (T + 1) ** (1 - theta)))


def coeff_product(kappa: float, theta: float, k: int, T: int, strict: bool = False) -> Comparison:
    """prod_{i=k+1}^T (1 - kappa/i^theta) against its closed-form bound; k >= T is the empty product."""
    _check_kappa_theta(kappa, theta)
    if k >= T:
        return Comparison(1.0, float(product_bound(kappa, theta, k, T)))
    i = np.arange(k + 1, T + 1, dtype=float)
    q = kappa * i ** (-theta)
    if np.any(q >= 1):
        raise ValidationError(f"factor 1 - kappa/i^theta <= 0 at i = {int(i[np.argmax(q >= 1)])}")
    res = Comparison(float(np.prod(1.0 - q)), float(product_bound(kappa, theta, k, T)))
    if strict and not res.holds:
        raise BoundViolation(f"product {res.exact} exceeds bound {res.bound} (kappa={kappa}, theta={theta}, k={k}, T={T})")
    return res


def coeff_sum(kappa: float, theta: float, T: int, strict: bool = False) -> Comparison:
    """sum_{k=1}^T k^-theta prod_{i=k+1}^T (1 - kappa/i^theta) against 3/kappa."""
    _check_kappa_theta(kappa, theta)
    logs = _log_factors(kappa, theta, T)
    if np.any(~np.isfinite(logs[1:])):
        raise ValidationError("factor 1 - kappa/i^theta <= 0 for some i >= 2")
    # suffix[k-1] = sum_{i=k+1}^T log(...), for k = 1..T
    suffix = np.concatenate([np.cumsum(logs[1:][::-1])[::-1], [0.0]])
    k = np.arange(1, T + 1, dtype=float)
    res = Comparison(float(np.sum(k ** (-theta) * np.exp(suffix))), 3.0 / kappa)
    if strict and not res.holds:
        raise BoundViolation(f"sum {res.exact} exceeds 3/kappa = {res.bound}")
    return res


def coefficient_grid(kappas, thetas, Ts, factor: float = 2.0) -> dict:
    """Exhaustive evaluation of both coefficient lemmas over k = 1..T-1.

    Returns per-theta violation counts for the product bound, the number of
    sum violations, and the largest kappa * sum / 3 seen.
    """
    out = {"product_cases": 0, "product_violations": 0, "by_theta": {}, "sum_cases": 0, "sum_violations": 0, "max_sum_ratio": 0.0}
    for theta in thetas:
        viol = cases = 0
        for kappa in kappas:
            for T in Ts:
                logs = _log_factors(kappa, theta, T)
                suffix = np.concatenate([np.cumsum(logs[1:][::-1])[::-1], [0.0]])  # k = 1..T
                k = np.arange(1, T, dtype=float)
                exact = np.exp(suffix[:-1])
                bound = product_bound(kappa, theta, k, T, factor)
                viol += int(np.sum(exact > bound))
                cases += k.size
                s = coeff_sum(kappa, theta, T)
                out["sum_cases"] += 1
                out["sum_violations"] += int(not s.holds)
                out["max_sum_ratio"] = max(out["max_sum_ratio"], s.exact * kappa / 3.0)
        out["by_theta"][repr(float(theta))] = {"cases": cases, "violations": viol}
        out["product_cases"] += cases
        out["product_violations"] += viol
    return out


class GradSumConstants(NamedTuple):
    proof: float
    statement: float
    simplified: float


def grad_sum_bound(sigma_sq: float, theta: float, t_mix: float) -> GradSumConstants:
    """Bounds on E|sum_{t<T} t^-theta grad V_{z_t}(w*)|^2.

    ``proof`` is (2 sigma^2/(2 theta - 1))(3 theta + 2(6 theta - 1) t_mix); ``statement``
    carries 4(6 theta - 1) instead; ``simplified`` is 30 theta sigma^2 t_mix / (2 theta - 1).
    Only proof <= simplified is enforced.
    """
    if not 0.5 < theta <= 1:
        raise ValidationError("theta must lie in (1/2, 1]")
    if t_mix < 1:
        raise ValidationError("t_mix must be at least 1")
    pre = 2.0 * sigma_sq / (2 * theta - 1)
    res = GradSumConstants(
        pre * (3 * theta + 2 * (6 * theta - 1) * t_mix),
        pre * (3 * theta + 4 * (6 * theta - 1) * t_mix),
        C_FIXED * theta * sigma_sq * t_mix / (2 * theta - 1),
    )
    if res.proof > res.simplified * (1 + 1e-12):
        raise BoundViolation(f"proof constant {res.proof} exceeds simplified constant {res.simplified}")
    return res


def _decay_exponent(kappa_sq: float, theta: float, T: float) -> float:
    return (kappa_sq / (1 - theta)) * (2 ** (1 - theta) - T ** (1 - theta))


def e_init(theta: float, kappa: float, T: int, dist0_sq: float) -> float:
    if T < 2:
        raise ValidationError("T must be at least 2")
    k2 = kappa * kappa
    if theta == 1:
        return 2 ** (k2 + 1) / T**k2 * dist0_sq
    return 2.0 * math.exp(2.0 * _decay_exponent(k2, theta, T)) * dist0_sq


@dataclass(frozen=True)
class BoundParams:
    theta: float
    lam: float
    C_k: float
    M: float
    t_mix: float
    T: int
    delta: float
    beta: float = 1.0
    g_norm: float = 0.0
    dist0_sq: float = 0.0
    sigma_sq: float | None = None

    def __post_init__(self):
        if not 0.5 < self.theta <= 1:
            raise ValidationError("theta must lie in (1/2, 1]")
        if not self.lam > 0 or not self.C_k > 0 or not self.M > 0:
            raise ValidationError("lambda, C_k and M must be positive")
        if not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        if not 0 < self.beta <= 1:
            raise ValidationError("beta must lie in (0, 1]")
        if self.T < 2:
            raise ValidationError("T must be at least 2")
        if self.t_mix < 1:
            raise ValidationError("t_mix must be at least 1")
        if self.sigma_sq is None:
            object.__setattr__(self, "sigma_sq", (2 * self.M * self.C_k**2 * (self.lam + self.C_k**2) / self.lam) ** 2)

    c = C_FIXED

    @property
    def kappa(self) -> float:
        return self.lam / (self.lam + self.C_k**2)

    @property
    def c_prime(self) -> float:
        return 4 * self.c * (self.M * self.C_k**2) ** 2

    @property
    def c_one(self) -> float:
        return 2 * math.sqrt(self.c) * self.M * self.C_k**2

    @property
    def delta_prime(self) -> float:
        return math.sqrt(self.delta)

    def with_T(self, T: int) -> "BoundParams":
        return BoundParams(**{**self.__dict__, "T": T})


def e_samp_constants(p: BoundParams) -> tuple[float, float]:
    """(C_{theta,lambda}(T), B_{theta,lambda}(T)) with the theta = 1 forms switched in automatically."""
    k2 = p.kappa**2
    if p.theta == 1:
        r = 2 ** (k2 + 1) / p.T**k2
        C = p.c_prime / p.lam**2 * (3 + k2 * r)
        B = p.c_one / p.lam * (math.sqrt(3) + p.kappa * math.sqrt(r))
        return C, B
    a = _decay_exponent(k2, p.theta, p.T)
    pre = p.theta / (2 * p.theta - 1)
    C = p.c_prime * pre / p.lam**2 * (3 + 2 * k2 * math.exp(2 * a))
    B = p.c_one / p.lam * math.sqrt(pre) * (math.sqrt(3) + math.sqrt(2) * p.kappa * math.exp(a))
    return C, B


def init_decay_root(p: BoundParams) -> float:
    """sqrt(E_init / dist0_sq), the factor multiplying dist0 in the norm-form bound."""
    k2 = p.kappa**2
    if p.theta == 1:
        return math.sqrt(2 ** (k2 + 1) / p.T**k2)
    return math.sqrt(2) * math.exp(_decay_exponent(k2, p.theta, p.T))


def total_bound(p: BoundParams, beta: float | None = None, g_norm: float | None = None) -> float:
    """lambda^beta |g| + sqrt(E_init) + B sqrt(t_mix) / delta', a bound on |f_T - f_rho| holding with probability 1 - delta'."""
    beta = p.beta if beta is None else beta
    g_norm = p.g_norm if g_norm is None else g_norm
    _, B = e_samp_constants(p)
    return p.lam**beta * g_norm + init_decay_root(p) * math.sqrt(p.dist0_sq) + B * math.sqrt(p.t_mix) / p.delta_prime


def markov_self_test(x, eps_values=None) -> bool:
    """fraction{X > eps} <= mean(X)/eps for a non-negative sample, checked at several eps."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValidationError("Markov self-test needs a non-negative sample")
    mean = x.mean()
    if eps_values is None:
        eps_values = np.quantile(x, [0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) + 1e-300
    return all(np.mean(x > e) <= mean / e for e in eps_values if e > 0)


# ------------------------------------------------------------------ report


@dataclass
class BoundReport:
    theory: dict
    empirical: dict
    checks: dict
    curve: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def as_dict(self) -> dict:
        return {"passed": self.passed, "theory": self.theory, "empirical": self.empirical, "checks": self.checks, "notes": self.notes}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        cols = ["t", "empirical_mean_sq_error", "E_init", "C_theta_lambda", "expectation_bound"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.curve:
                w.writerow([row["t"]] + [repr(float(row[c])) for c in cols[1:]])


def _check(passed: bool, lhs: float, rhs: float) -> dict:
    return {"passed": bool(passed), "lhs": float(lhs), "rhs": float(rhs), "margin": float(rhs - lhs)}


def checkpoints(T: int) -> list[int]:
    pts = {T}
    m = 1
    while m <= T:
        for s in (2, 5, 10):
            if 2 <= s * m <= T:
                pts.add(s * m)
        m *= 10
    return sorted(pts)


def validate_bounds(replicate_traces, params: BoundParams, extras: dict | None = None) -> BoundReport:
    """Compare replicate statistics of |f_T - f_{lambda,mu*}|^2 with the expectation and quantile bounds.

    ``extras`` may carry further empirical quantities (e.g. the measured
    noise at the optimum, distances to f_rho) that are merged into the report.
    """
    n = len(replicate_traces)
    if n < MIN_REPLICATES:
        raise ValidationError(f"need at least {MIN_REPLICATES} replicates, got {n}")
    T = params.T
    if any(len(tr) != T for tr in replicate_traces):
        raise ValidationError("all replicates must have length T")

    C, B = e_samp_constants(params)
    Ei = e_init(params.theta, params.kappa, T, params.dist0_sq)
    sq = np.array([tr.final_sq_error for tr in replicate_traces])
    norms = np.sqrt(sq)
    init_sq = np.array([tr.initial_sq_error for tr in replicate_traces])
    mean_sq = float(sq.mean())
    expectation_rhs = Ei + C * params.t_mix
    quantile_threshold = C * params.t_mix / params.delta
    frac = float(np.mean(sq - Ei > quantile_threshold))
    frac_allowed = params.delta + 2 / math.sqrt(n)
    mean_norm = float(norms.mean())
    rms = math.sqrt(mean_sq)

    theory = {
        "kappa": params.kappa,
        "sigma_sq": params.sigma_sq,
        "c": params.c,
        "c_prime": params.c_prime,
        "c_one": params.c_one,
        "delta": params.delta,
        "delta_prime": params.delta_prime,
        "t_mix": params.t_mix,
        "T": T,
        "E_init": Ei,
        "C_theta_lambda": C,
        "B_theta_lambda": B,
        "B_ge_sqrt_C": bool(B >= math.sqrt(C)),
        "E_samp_bound": C * params.t_mix,
        "expectation_bound": expectation_rhs,
        "quantile_threshold": quantile_threshold,
        "total_bound": total_bound(params),
        "C_limit_T_inf": 3 * params.c_prime * params.theta / (params.lam**2 * (2 * params.theta - 1)),
    }
    grad = grad_sum_bound(params.sigma_sq, params.theta, params.t_mix)
    theory["grad_sum_proof"] = grad.proof
    theory["grad_sum_statement"] = grad.statement
    theory["grad_sum_simplified"] = grad.simplified

    empirical = {
        "replicates": n,
        "mean_initial_sq_error": float(init_sq.mean()),
        "mean_final_sq_error": mean_sq,
        "min_final_sq_error": float(sq.min()),
        "max_final_sq_error": float(sq.max()),
        "variance_final_sq_error": float(sq.var()),
        "mean_final_norm": mean_norm,
        "rms_final_norm": rms,
        "fraction_above_quantile_threshold": frac,
    }
    if extras:
        empirical.update(extras)

    checks = {
        "expectation_bound": _check(mean_sq <= expectation_rhs, mean_sq, expectation_rhs),
        "quantile_bound": _check(frac <= frac_allowed, frac, frac_allowed),
        # exact inequality; the slack only absorbs the last bits of the two roundings
        "jensen": _check(mean_norm <= rms * (1 + 4 * np.finfo(float).eps), mean_norm, rms),
        "markov_self_test": {"passed": markov_self_test(sq)},
        "grad_sum_proof_le_simplified": _check(grad.proof <= grad.simplified, grad.proof, grad.simplified),
    }
    notes = []
    if float(sq.var()) == 0.0:
        notes.append("all replicates identical: zero empirical variance")

    errs = np.array([tr.l2_error for tr in replicate_traces]) ** 2
    curve = []
    for t in checkpoints(T):
        pt = params.with_T(t)
        Ct, _ = e_samp_constants(pt)
        Et = e_init(params.theta, params.kappa, t, params.dist0_sq)
        curve.append(
            {"t": t, "empirical_mean_sq_error": float(errs[:, t - 1].mean()), "E_init": Et, "C_theta_lambda": Ct, "expectation_bound": Et + Ct * params.t_mix}
        )
    return BoundReport(theory, empirical, checks, curve, notes)

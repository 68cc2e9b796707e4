"""Markov-chain SGD for kernel least squares, its frozen-gradient twin, and potential validators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .chain import LabeledSample, samples_to_arrays
from .copula_core import ValidationError
from .rkhs import Kernel, KernelExpansion, SpectralModel, gram, rkhs_norm

ROUND_OFF = 1e-12


class StepSizeError(ValueError):
    pass


@dataclass(frozen=True)
class SgdConfig:
    theta: float
    lam: float
    T: int
    M: float
    kernel: Kernel
    t_star: int | None = None

    def __post_init__(self):
        if not 0.5 < self.theta <= 1:
            raise ValidationError("theta must lie in (1/2, 1]")
        if not self.lam > 0:
            raise ValidationError("lambda must be positive")
        if self.T < 1:
            raise ValidationError("T must be at least 1")
        if not self.M > 0:
            raise ValidationError("M must be positive")
        if self.t_star is not None and self.t_star < 1:
            raise ValidationError("t_star must be at least 1")

    @property
    def alpha(self) -> float:
        return self.lam

    @property
    def eta(self) -> float:
        return self.lam + self.kernel.C_k**2

    @property
    def kappa(self) -> float:
        return self.alpha / self.eta

    def gamma(self, t):
        return (self.alpha / self.eta**2) * np.asarray(t, dtype=float) ** (-self.theta)

    def step_sizes(self) -> np.ndarray:
        return self.gamma(np.arange(1, self.T + 1))


@dataclass(frozen=True)
class IterateTrace:
    """Per-step diagnostics of f_t for t = 1..T.

    Row t holds the iterate f_t together with the sample z_t = (x_t, y_t) that
    moves it to f_{t+1}; ``fx`` is f_t(x_t) and ``residual`` the gradient
    multiplier at that step (f_t(x_t) - y_t for MC-SGD, w*(x_t) - y_t for the twin).
    """

    t: np.ndarray
    gamma: np.ndarray
    x: np.ndarray
    y: np.ndarray
    fx: np.ndarray
    residual: np.ndarray
    l2_error: np.ndarray
    rkhs_norm: np.ndarray
    final: KernelExpansion
    clamped: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.t)

    @property
    def initial_sq_error(self) -> float:
        return float(self.l2_error[0] ** 2)

    @property
    def final_sq_error(self) -> float:
        return float(self.l2_error[-1] ** 2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "gamma", "x", "y", "observation", "fx", "residual", "l2_error", "rkhs_norm"])
            for i in range(len(self.t)):
                w.writerow(
                    [
                        int(self.t[i]),
                        repr(float(self.gamma[i])),
                        repr(float(self.x[i, 0])),
                        repr(float(self.x[i, 1])),
                        repr(float(self.y[i])),
                        repr(float(self.fx[i])),
                        repr(float(self.residual[i])),
                        repr(float(self.l2_error[i])),
                        repr(float(self.rkhs_norm[i])),
                    ]
                )


# ------------------------------------------------------------------ one step


def sgd_step(f: KernelExpansion, z: LabeledSample, gamma: float, lam: float) -> KernelExpansion:
    """f <- (1 - gamma lam) f - gamma (f(x) - y) k_x, stored lazily in ``global_scale``."""
    if gamma * lam >= 1:
        raise StepSizeError(f"gamma * lambda = {gamma * lam:.6g} must be < 1")
    x = np.asarray(z.x, dtype=float).reshape(1, 2)
    r = float(f(x)[0]) - z.y
    scale = f.global_scale * (1.0 - gamma * lam)
    if scale == 0.0:
        # a zero incoming scale means f is the zero function; restart the scale at 1
        scale = 1.0
    return KernelExpansion(
        f.kernel,
        np.vstack([f.centers, x]),
        np.append(f.coeffs * (f.global_scale * (1.0 - gamma * lam) / scale), -gamma * r / scale),
        scale,
    )


def sgd_step_rescaled(f: KernelExpansion, z: LabeledSample, gamma: float, lam: float) -> KernelExpansion:
    """Reference form of :func:`sgd_step` that rewrites every coefficient (global_scale stays 1)."""
    if gamma * lam >= 1:
        raise StepSizeError(f"gamma * lambda = {gamma * lam:.6g} must be < 1")
    x = np.asarray(z.x, dtype=float).reshape(1, 2)
    r = float(f(x)[0]) - z.y
    return KernelExpansion(
        f.kernel,
        np.vstack([f.centers, x]),
        np.append((1.0 - gamma * lam) * f.effective_coeffs, -gamma * r),
        1.0,
    )


# --------------------------------------------------------------- full runs


def _as_arrays(samples, T):
    if isinstance(samples, tuple):
        xs, ys = samples
        xs = np.asarray(xs, dtype=float).reshape(-1, 2)
        ys = np.asarray(ys, dtype=float)
    else:
        xs, ys = samples_to_arrays(samples)
    if len(ys) < T:
        raise ValidationError(f"need at least T = {T} samples, got {len(ys)}")
    return xs[:T], ys[:T]


class _Buffer:
    """Growable expansion with a lazy global scale; evaluation is O(current size)."""

    def __init__(self, kernel: Kernel, capacity: int, start: KernelExpansion | None = None):
        self.kernel = kernel
        n0 = 0 if start is None else start.coeffs.size
        self.centers = np.empty((n0 + capacity, 2))
        self.coeffs = np.empty(n0 + capacity)
        self.n = n0
        self.scale = 1.0
        if n0:
            self.centers[:n0] = start.centers
            self.coeffs[:n0] = start.effective_coeffs

    def __call__(self, x) -> float:
        if self.n == 0:
            return 0.0
        return self.scale * float(self.kernel.row(x, self.centers[: self.n]) @ self.coeffs[: self.n])

    def shrink(self, a: float) -> None:
        self.scale *= a
        if abs(self.scale) < 1e-150:
            self.coeffs[: self.n] *= self.scale
            self.scale = 1.0

    def append(self, x, coef: float) -> None:
        self.centers[self.n] = x
        self.coeffs[self.n] = coef / self.scale
        self.n += 1

    def reset(self, exp: KernelExpansion) -> None:
        m = exp.coeffs.size
        self.centers[:m] = exp.centers
        self.coeffs[:m] = exp.effective_coeffs
        self.n = m
        self.scale = 1.0

    def expansion(self) -> KernelExpansion:
        return KernelExpansion(self.kernel, self.centers[: self.n].copy(), self.coeffs[: self.n].copy(), self.scale)


def run_mcsgd(samples, config: SgdConfig, f1: KernelExpansion, spec: SpectralModel, f_target) -> IterateTrace:
    """Run T - 1 updates from ``f1`` along the sample path and record f_1..f_T.

    Node values and the RKHS norm are updated in closed form each step, so the
    cost is dominated by evaluating f_t(x_t) against the growing center list.
    """
    T = config.T
    xs, ys = _as_arrays(samples, T)
    kern = config.kernel
    lam = config.lam
    gam = config.step_sizes()
    w = spec.weights
    f_target = np.asarray(f_target, dtype=float)

    buf = _Buffer(kern, T, f1)
    node_vals = f1(spec.nodes)
    norm_sq = rkhs_norm(f1) ** 2
    kxx = kern.diag(xs)

    fx = np.empty(T)
    l2 = np.empty(T)
    nrm = np.empty(T)
    for i in range(T):
        x = xs[i]
        fx[i] = buf(x)
        diff = node_vals - f_target
        l2[i] = np.sqrt(np.sum(w * diff * diff))
        nrm[i] = np.sqrt(max(norm_sq, 0.0))
        if i == T - 1:
            break
        g = gam[i]
        r = fx[i] - ys[i]
        a = 1.0 - g * lam
        b = -g * r
        if a <= 0:
            raise StepSizeError(f"gamma * lambda = {g * lam:.6g} must be < 1")
        node_vals = a * node_vals + b * kern.row(x, spec.nodes)
        norm_sq = a * a * norm_sq + 2.0 * a * b * fx[i] + b * b * kxx[i]
        buf.shrink(a)
        buf.append(x, b)
    return IterateTrace(
        t=np.arange(1, T + 1),
        gamma=gam,
        x=xs,
        y=ys,
        fx=fx,
        residual=fx - ys,
        l2_error=l2,
        rkhs_norm=nrm,
        final=buf.expansion(),
    )


def run_frozen_twin(samples, config: SgdConfig, f1_prime: KernelExpansion, w_star: KernelExpansion, spec) -> IterateTrace:
    """w'_{t+1} = w'_t - gamma_t grad V_{z_t}(w*), clamped to w* from ``config.t_star`` on.

    ``l2_error`` is measured against w* on the quadrature nodes.
    """
    T = config.T
    xs, ys = _as_arrays(samples, T)
    kern = config.kernel
    lam = config.lam
    gam = config.step_sizes()
    w = spec.weights
    t_star = config.t_star if config.t_star is not None else T + 1

    ws_nodes = w_star(spec.nodes)
    ws_x = w_star(xs)
    ws_sq = rkhs_norm(w_star) ** 2
    kxx = kern.diag(xs)

    # w'_t = base + a_t w* with base a growable expansion
    base = _Buffer(kern, T, f1_prime)
    a_ws = 0.0
    base_nodes = f1_prime(spec.nodes)
    base_sq = rkhs_norm(f1_prime) ** 2
    base_ws = f1_prime.inner(w_star)  # <base, w*>

    fx = np.empty(T)
    l2 = np.empty(T)
    nrm = np.empty(T)
    clamped = np.zeros(T, dtype=bool)
    for i in range(T):
        t = i + 1
        if t >= t_star:
            base.reset(KernelExpansion.zero(kern))
            base_nodes = np.zeros_like(ws_nodes)
            base_sq = base_ws = 0.0
            a_ws = 1.0
            clamped[i] = True
        x = xs[i]
        fx[i] = base(x) + a_ws * ws_x[i]
        diff = base_nodes + (a_ws - 1.0) * ws_nodes
        l2[i] = np.sqrt(np.sum(w * diff * diff))
        full_sq = base_sq + 2.0 * a_ws * base_ws + a_ws * a_ws * ws_sq
        nrm[i] = np.sqrt(max(full_sq, 0.0))
        if i == T - 1:
            break
        g = gam[i]
        b = -g * (ws_x[i] - ys[i])
        base_nodes = base_nodes + b * kern.row(x, spec.nodes)
        base_sq = base_sq + 2.0 * b * base(x) + b * b * kxx[i]
        base_ws = base_ws + b * ws_x[i]
        base.append(x, b)
        a_ws -= g * lam
    final = base.expansion().combine(w_star, 1.0, a_ws)
    return IterateTrace(
        t=np.arange(1, T + 1),
        gamma=gam,
        x=xs,
        y=ys,
        fx=fx,
        residual=ws_x - ys,
        l2_error=l2,
        rkhs_norm=nrm,
        final=final,
        clamped=clamped,
    )


# ------------------------------------------------------- pathwise recursion


@dataclass(frozen=True)
class RecursionReport:
    steps_checked: int
    violations: list[int]
    worst_slack: float
    lhs: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    l2_lhs: np.ndarray = field(repr=False)
    l2_rhs: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def l2_violations(self) -> int:
        """How often the same inequality fails when read in L2 of the quadrature measure (reported only)."""
        return int(np.sum(self.l2_lhs > self.l2_rhs * (1 + 1e-9) + ROUND_OFF))


def _gram_of(expansions) -> np.ndarray:
    n = len(expansions)
    S = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            S[i, j] = S[j, i] = expansions[i].inner(expansions[j])
    return S


def check_recursion_inequality(
    trace: IterateTrace,
    twin: IterateTrace,
    config: SgdConfig,
    w_star: KernelExpansion,
    f1: KernelExpansion,
    f1_prime: KernelExpansion,
    spec: SpectralModel | None = None,
) -> RecursionReport:
    """Check |e_{t+1}|^2 <= (1 - kappa^2 t^-theta)|e_t|^2 + t^-theta |w'_t - w*|^2 in the H_k norm.

    With d = w - w*, e = w - w' the updates are
        d' = (1 - g lam) d - g lam w* - g r k_x,   e' = e - g lam d - g d(x) k_x,
    so the Gram matrix of (d, e, w*) evolves in closed form from its value at
    t = 1.  Steps where the twin is clamped are skipped.
    """
    if len(trace) != len(twin) or not np.array_equal(trace.x, twin.x):
        raise ValidationError("traces must come from the same sample sequence")
    kern = config.kernel
    lam = config.lam
    kap2 = config.kappa**2
    theta = config.theta
    T = len(trace)

    d1 = f1.combine(w_star, 1.0, -1.0)
    e1 = f1.combine(f1_prime, 1.0, -1.0)
    S = _gram_of([d1, e1, w_star])
    ws_sq = S[2, 2]
    ws_x = w_star(trace.x)
    kxx = kern.diag(trace.x)

    if spec is not None:
        wts = spec.weights
        ws_n = w_star(spec.nodes)
        dn = f1(spec.nodes) - ws_n
        en = f1(spec.nodes) - f1_prime(spec.nodes)

    clamped = twin.clamped if twin.clamped is not None else np.zeros(T, dtype=bool)
    lhs = np.full(T - 1, np.nan)
    rhs = np.full(T - 1, np.nan)
    l2l = np.full(T - 1, np.nan)
    l2r = np.full(T - 1, np.nan)
    violations = []
    worst = np.inf
    for i in range(T - 1):
        t = i + 1
        g = trace.gamma[i]
        dx = trace.fx[i] - ws_x[i]
        ex = trace.fx[i] - twin.fx[i]
        ev = np.array([dx, ex, ws_x[i]])
        Mx = np.array([[1.0 - g * lam, 0.0, -g * lam], [-g * lam, 1.0, 0.0]])
        beta = np.array([-g * trace.residual[i], -g * dx])
        MS = Mx @ S
        Me = Mx @ ev
        new2 = MS @ Mx.T + np.outer(beta, Me) + np.outer(Me, beta) + np.outer(beta, beta) * kxx[i]
        new_ws = MS[:, 2] + beta * ws_x[i]
        e_sq, de = S[1, 1], S[0, 1]
        twin_gap = S[0, 0] - 2 * de + e_sq  # |d - e|^2 = |w' - w*|^2
        if not (clamped[i] or clamped[i + 1]):
            lhs[i] = new2[1, 1]
            rhs[i] = (1.0 - kap2 * t ** (-theta)) * e_sq + t ** (-theta) * twin_gap
            tol = ROUND_OFF * max(1.0, abs(rhs[i]), S[0, 0], S[2, 2])
            slack = rhs[i] - lhs[i]
            worst = min(worst, slack)
            if slack < -tol:
                violations.append(t)
        if spec is not None:
            kn = kern.row(trace.x[i], spec.nodes)
            dn_new = (1.0 - g * lam) * dn - g * lam * ws_n + beta[0] * kn
            en_new = en - g * lam * dn + beta[1] * kn
            l2l[i] = np.sum(wts * en_new**2)
            l2r[i] = (1.0 - kap2 * t ** (-theta)) * np.sum(wts * en**2) + t ** (-theta) * np.sum(wts * (dn - en) ** 2)
            dn, en = dn_new, en_new
        S = np.empty((3, 3))
        S[:2, :2] = new2
        S[:2, 2] = S[2, :2] = new_ws
        S[2, 2] = ws_sq
    checked = int(np.sum(~np.isnan(lhs)))
    return RecursionReport(checked, violations, float(worst) if checked else 0.0, lhs, rhs, l2l, l2r)


# -------------------------------------------------------------- potentials


class Potential(Protocol):
    alpha: float
    eta: float

    def value(self, z, w) -> float: ...
    def grad(self, z, w): ...
    def inner(self, a, b) -> float: ...
    def axpy(self, a, u, v, b=1.0): ...


@dataclass(frozen=True)
class QuadraticPotential:
    """V_z(w) = 1/2 <A(z) w, w> + <B(z), w> on R^d; ``A`` and ``B`` are callables of z."""

    A: object
    B: object
    alpha: float
    eta: float

    def value(self, z, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(0.5 * w @ (self.A(z) @ w) + self.B(z) @ w)

    def grad(self, z, w):
        return self.A(z) @ np.asarray(w, dtype=float) + self.B(z)

    def inner(self, a, b) -> float:
        return float(np.dot(a, b))

    def axpy(self, a, u, v, b=1.0):
        return a * np.asarray(u, dtype=float) + b * np.asarray(v, dtype=float)

    @classmethod
    def scalar(cls, a: float = 1.0, b: float = 0.0) -> "QuadraticPotential":
        return cls(lambda z: np.array([[a]]), lambda z: np.array([b]), a, a)


@dataclass(frozen=True)
class KernelLeastSquares:
    """V_z(f) = 1/2 (f(x) - y)^2 + lam/2 |f|_k^2 with gradient (f(x) - y) k_x + lam f."""

    kernel: Kernel
    lam: float

    @property
    def alpha(self) -> float:
        return self.lam

    @property
    def eta(self) -> float:
        return self.lam + self.kernel.C_k**2

    def value(self, z: LabeledSample, f: KernelExpansion) -> float:
        r = float(f(z.x)[0]) - z.y
        return 0.5 * r * r + 0.5 * self.lam * f.inner(f)

    def grad(self, z: LabeledSample, f: KernelExpansion) -> KernelExpansion:
        r = float(f(z.x)[0]) - z.y
        kx = KernelExpansion(self.kernel, np.asarray(z.x, dtype=float).reshape(1, 2), np.array([r]))
        return kx.combine(f, 1.0, self.lam)

    def inner(self, a: KernelExpansion, b: KernelExpansion) -> float:
        return a.inner(b)

    def axpy(self, a, u: KernelExpansion, v: KernelExpansion, b=1.0) -> KernelExpansion:
        return u.combine(v, a, b)


def bregman(potential, z, x, y) -> float:
    """D(x, y) = V(x) - V(y) - <grad V(y), x - y>."""
    return potential.value(z, x) - potential.value(z, y) - potential.inner(
        potential.grad(z, y), potential.axpy(1.0, x, y, -1.0)
    )


def three_point_check(potential, z, x, y, w) -> float:
    """Residual of D(x,y) + D(y,w) - D(x,w) = <grad V(w) - grad V(y), x - y>."""
    lhs = bregman(potential, z, x, y) + bregman(potential, z, y, w) - bregman(potential, z, x, w)
    gdiff = potential.axpy(1.0, potential.grad(z, w), potential.grad(z, y), -1.0)
    return float(lhs - potential.inner(gdiff, potential.axpy(1.0, x, y, -1.0)))


def gradient_check(potential, z, w, u, h: float = 1e-5) -> float:
    """Relative gap between <grad V(w), u> and the central difference along u."""
    if not h > 0:
        raise ValidationError("h must be positive")
    analytic = potential.inner(potential.grad(z, w), u)
    numeric = (potential.value(z, potential.axpy(1.0, w, u, h)) - potential.value(z, potential.axpy(1.0, w, u, -h))) / (2 * h)
    gnorm = np.sqrt(max(potential.inner(potential.grad(z, w), potential.grad(z, w)), 0.0))
    unorm = np.sqrt(max(potential.inner(u, u), 0.0))
    scale = max(abs(analytic), abs(numeric), gnorm * unorm)
    if scale == 0.0:
        return 0.0
    return float(abs(analytic - numeric) / scale)


def convexity_probe(potential, z, w, u) -> float:
    """<grad V(w + u) - grad V(w), u> / |u|^2, asserted to lie in [alpha, eta] up to 1e-8."""
    uu = potential.inner(u, u)
    if not uu > 0:
        raise ValidationError("probe direction must be non-zero")
    g1 = potential.grad(z, potential.axpy(1.0, w, u, 1.0))
    g0 = potential.grad(z, w)
    ratio = potential.inner(potential.axpy(1.0, g1, g0, -1.0), u) / uu
    if not potential.alpha - 1e-8 <= ratio <= potential.eta + 1e-8:
        raise AssertionError(f"convexity ratio {ratio} outside [{potential.alpha}, {potential.eta}]")
    return float(ratio)


# ------------------------------------------------------ noise at optimum


def noise_at_optimum(w_star: KernelExpansion, xs, ys, lam: float) -> np.ndarray:
    """|grad V_z(w*)|_k = |r k_x + lam w*|_k for each sample, r = w*(x) - y."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 2)
    ys = np.asarray(ys, dtype=float)
    wx = w_star(xs)
    r = wx - ys
    sq = r * r * w_star.kernel.diag(xs) + 2.0 * lam * r * wx + lam * lam * w_star.inner(w_star)
    return np.sqrt(np.clip(sq, 0.0, None))


def noise_bound(M: float, C_k: float, lam: float) -> float:
    return 2.0 * M * C_k**2 * (lam + C_k**2) / lam


def weighted_gradient_sum_sq(w_star: KernelExpansion, xs, ys, lam: float, theta: float, chunk: int = 1024) -> float:
    """|sum_t t^-theta grad V_{z_t}(w*)|_k^2 over the given stream (t = 1..len)."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 2)
    ys = np.asarray(ys, dtype=float)
    n = len(ys)
    a = np.arange(1, n + 1, dtype=float) ** (-theta)
    wx = w_star(xs)
    c = a * (wx - ys)
    kern = w_star.kernel
    quad = 0.0
    for s in range(0, n, chunk):
        quad += float(c[s : s + chunk] @ (kern(xs[s : s + chunk], xs) @ c))
    A = a.sum()
    return quad + 2.0 * lam * A * float(c @ wx) + (lam * A) ** 2 * w_star.inner(w_star)


def direct_gram_norms(expansions) -> np.ndarray:
    """Gram matrix of expansions built from one joint kernel matrix (dual route for incremental norms)."""
    kern = expansions[0].kernel
    centers = np.vstack([e.centers for e in expansions])
    K = gram(kern, centers)
    blocks = []
    for e in expansions:
        blocks.append(e.effective_coeffs)
    sizes = np.cumsum([0] + [b.size for b in blocks])
    C = np.zeros((len(expansions), centers.shape[0]))
    for i, b in enumerate(blocks):
        C[i, sizes[i] : sizes[i + 1]] = b
    return C @ K @ C.T

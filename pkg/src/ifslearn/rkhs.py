"""Kernels, kernel expansions and the quadrature (Nystrom) model of the integral operator.

Functions in L2 of the quadrature measure are plain 1-D arrays of values at
the quadrature nodes; inner products are weighted by the node weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .copula_core import GridCopula, ValidationError

TRUNCATION = 1e-12
JITTER = 1e-10


# --------------------------------------------------------------------- kernels


@dataclass(frozen=True)
class GaussianKernel:
    """k(x, x') = exp(-|x - x'|^2 / (2 width^2))."""

    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValidationError("Gaussian width must be positive")

    def __call__(self, X, Y):
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        Y = np.asarray(Y, dtype=float).reshape(-1, 2)
        d2 = (X[:, None, 0] - Y[None, :, 0]) ** 2 + (X[:, None, 1] - Y[None, :, 1]) ** 2
        return np.exp(-d2 / (2.0 * self.width**2))

    def row(self, x, Y) -> np.ndarray:
        """k(x, Y) for a single point ``x`` against an (n, 2) array, without broadcasting overhead."""
        d2 = (Y[:, 0] - x[0]) ** 2 + (Y[:, 1] - x[1]) ** 2
        return np.exp(d2 * (-0.5 / self.width**2))

    def diag(self, X):
        return np.ones(np.asarray(X).reshape(-1, 2).shape[0])

    @property
    def C_k(self) -> float:
        return 1.0

    def params(self) -> dict:
        return {"name": "gaussian", "width": self.width}


@dataclass(frozen=True)
class PolynomialKernel:
    """k(x, x') = (<x, x'> + offset)^degree."""

    degree: int
    offset: float = 1.0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValidationError("polynomial degree must be an integer >= 1")
        if self.offset < 0:
            raise ValidationError("polynomial offset must be non-negative")

    def __call__(self, X, Y):
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        Y = np.asarray(Y, dtype=float).reshape(-1, 2)
        return (X @ Y.T + self.offset) ** self.degree

    def row(self, x, Y):
        return (Y @ np.asarray(x, dtype=float) + self.offset) ** self.degree

    def diag(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        return ((X * X).sum(axis=1) + self.offset) ** self.degree

    @property
    def C_k(self) -> float:
        # sup of <x, x> over the unit square is 2, at (1, 1)
        return float(np.sqrt((2.0 + self.offset) ** self.degree))

    def params(self) -> dict:
        return {"name": "polynomial", "degree": self.degree, "offset": self.offset}


@dataclass(frozen=True)
class ConstantKernel:
    value: float = 1.0

    def __post_init__(self):
        if not self.value > 0:
            raise ValidationError("constant kernel value must be positive")

    def __call__(self, X, Y):
        X = np.asarray(X).reshape(-1, 2)
        Y = np.asarray(Y).reshape(-1, 2)
        return np.full((X.shape[0], Y.shape[0]), float(self.value))

    def row(self, x, Y):
        return np.full(np.asarray(Y).reshape(-1, 2).shape[0], float(self.value))

    def diag(self, X):
        return np.full(np.asarray(X).reshape(-1, 2).shape[0], float(self.value))

    @property
    def C_k(self) -> float:
        return float(np.sqrt(self.value))

    def params(self) -> dict:
        return {"name": "constant", "value": self.value}


Kernel = GaussianKernel | PolynomialKernel | ConstantKernel


def make_kernel(name: str, **params) -> Kernel:
    kinds = {"gaussian": GaussianKernel, "polynomial": PolynomialKernel, "constant": ConstantKernel}
    try:
        return kinds[name.lower()](**params)
    except KeyError:
        raise ValidationError(f"unknown kernel {name!r}; expected one of {sorted(kinds)}") from None
    except TypeError as exc:
        raise ValidationError(f"bad parameters for kernel {name!r}: {exc}") from None


def gram(kernel: Kernel, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValidationError("gram needs at least one point")
    K = kernel(pts, pts)
    return 0.5 * (K + K.T)


# ---------------------------------------------------------- kernel expansions


@dataclass(frozen=True)
class KernelExpansion:
    """f(x) = global_scale * sum_i coeffs[i] * k(centers[i], x)."""

    kernel: Kernel
    centers: np.ndarray
    coeffs: np.ndarray
    global_scale: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        a = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if c.shape[0] != a.shape[0]:
            raise ValidationError("need one coefficient per center")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "coeffs", a)

    @classmethod
    def zero(cls, kernel: Kernel) -> "KernelExpansion":
        return cls(kernel, np.zeros((0, 2)), np.zeros(0), 1.0)

    @property
    def effective_coeffs(self) -> np.ndarray:
        return self.global_scale * self.coeffs

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        if self.coeffs.size == 0:
            return np.zeros(X.shape[0])
        return self.global_scale * (self.kernel(X, self.centers) @ self.coeffs)

    def inner(self, other: "KernelExpansion") -> float:
        if self.coeffs.size == 0 or other.coeffs.size == 0:
            return 0.0
        return float(self.effective_coeffs @ self.kernel(self.centers, other.centers) @ other.effective_coeffs)

    def combine(self, other: "KernelExpansion", a: float = 1.0, b: float = 1.0) -> "KernelExpansion":
        """a * self + b * other as a single expansion over the union of centers."""
        return KernelExpansion(
            self.kernel,
            np.vstack([self.centers, other.centers]),
            np.concatenate([a * self.effective_coeffs, b * other.effective_coeffs]),
            1.0,
        )

    def scaled(self, a: float) -> "KernelExpansion":
        return KernelExpansion(self.kernel, self.centers, self.coeffs, self.global_scale * a)

    def __add__(self, other):
        return self.combine(other)

    def __sub__(self, other):
        return self.combine(other, 1.0, -1.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# global_scale={float(self.global_scale)!r}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["center_x", "center_y", "coefficient"])
            for (x, y), c in zip(self.centers, self.coeffs):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(c))])


def rkhs_norm(expansion: KernelExpansion) -> float:
    if expansion.coeffs.size == 0:
        return 0.0
    a = expansion.coeffs
    q = float(a @ gram(expansion.kernel, expansion.centers) @ a)
    return abs(expansion.global_scale) * float(np.sqrt(max(q, 0.0)))


# ------------------------------------------------------------ spectral model


@dataclass(frozen=True)
class SpectralModel:
    """Eigenpairs of the quadrature-discretized integral operator.

    ``eigvec_values[m, i]`` is the i-th eigenfunction at node m; eigenfunctions
    are orthonormal in the weighted inner product.
    """

    kernel: Kernel
    nodes: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    eigvec_values: np.ndarray

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0

    def inner(self, f, g) -> float:
        return float(np.sum(self.weights * np.asarray(f) * np.asarray(g)))

    def coefficients(self, f) -> np.ndarray:
        """<f, psi_i> in L2 of the quadrature measure."""
        return self.eigvec_values.T @ (self.weights * np.asarray(f, dtype=float))

    def synthesize(self, b) -> np.ndarray:
        return self.eigvec_values @ np.asarray(b, dtype=float)

    def project(self, f) -> np.ndarray:
        return self.synthesize(self.coefficients(f))

    def eigenfunctions_at(self, X, idx=None) -> np.ndarray:
        """Nystrom extension psi_i(x) = (1/sigma_i) sum_m w_m k(x, node_m) psi_i(node_m)."""
        idx = np.arange(self.rank) if idx is None else np.atleast_1d(idx)
        Kx = self.kernel(X, self.nodes) * self.weights[None, :]
        return (Kx @ self.eigvec_values[:, idx]) / self.eigenvalues[idx]

    def operator_matrix(self) -> np.ndarray:
        """T_h acting on node values: (T_h f)(m) = sum_n k(m, n) w_n f(n)."""
        return self.kernel(self.nodes, self.nodes) * self.weights[None, :]

    def to_csv(self, spectrum_path, nodes_path=None) -> None:
        with open(spectrum_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "sigma"])
            for i, s in enumerate(self.eigenvalues, start=1):
                w.writerow([i, repr(float(s))])
        if nodes_path is not None:
            with open(nodes_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["node_x", "node_y", "weight"])
                for (x, y), wt in zip(self.nodes, self.weights):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(wt))])


def quadrature_from_copula(C: GridCopula, min_weight: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Cell centers and cell masses of a grid copula.

    Masses at or below ``min_weight`` (residue of the fixed-point iteration
    outside the attractor) are treated as exact zeros.
    """
    G = C.grid_size
    c = (np.arange(G) + 0.5) / G
    X, Y = np.meshgrid(c, c, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    w = np.clip(C.cell_masses().ravel(), 0.0, None)
    w[w <= min_weight] = 0.0
    return nodes, w / w.sum()


def nystrom_spectrum(kernel: Kernel, nodes, weights) -> SpectralModel:
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
    w = np.asarray(weights, dtype=float)
    if w.shape != (nodes.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError("weights must be non-negative, one per node, summing to 1")
    on = w > 0
    sw = np.sqrt(w[on])
    K = gram(kernel, nodes)
    evals, evecs = linalg.eigh(sw[:, None] * K[np.ix_(on, on)] * sw[None, :])
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 0:
        raise ValidationError("operator has no positive eigenvalue")
    keep = evals > TRUNCATION * evals[0]
    evals, evecs = evals[keep], evecs[:, keep]
    # deterministic sign: largest-magnitude node value positive
    pivot = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[pivot, np.arange(evecs.shape[1])])
    psi = np.zeros((nodes.shape[0], evals.size))
    psi[on] = evecs / sw[:, None]
    if not on.all():
        # zero-weight nodes carry no L2 information; give them their Nystrom values
        psi[~on] = (K[np.ix_(~on, on)] * w[on][None, :]) @ psi[on] / evals
    return SpectralModel(kernel, nodes, w, evals, psi)


def operator_power_apply(spec: SpectralModel, beta: float, f) -> np.ndarray:
    """T^beta f; beta = 0 is the projection onto the eigenfunction span."""
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    return spec.synthesize(spec.eigenvalues**beta * spec.coefficients(f))


def resolvent_apply(spec: SpectralModel, lam: float, f) -> np.ndarray:
    """(T + lam I)^{-1} f, including the null-space part (f - Pf) / lam."""
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    f = np.asarray(f, dtype=float)
    b = spec.coefficients(f)
    return spec.synthesize(b / (spec.eigenvalues + lam)) + (f - spec.synthesize(b)) / lam


def make_source_target(spec: SpectralModel, beta: float, g) -> tuple[np.ndarray, float]:
    if not 0 < beta <= 1:
        raise ValidationError("beta must lie in (0, 1]")
    return operator_power_apply(spec, beta, g), l2_norm_mu(spec, g)


def regularization_target(spec: SpectralModel, lam: float, f_rho) -> np.ndarray:
    """(T + lam I)^{-1} T f_rho in spectral form."""
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    s = spec.eigenvalues
    return spec.synthesize(s / (s + lam) * spec.coefficients(f_rho))


def h_beta_norm(spec: SpectralModel, beta: float, f, tol: float = 1e-8) -> float:
    """Norm of the power space [H]^beta: sqrt(sum <f, psi_i>^2 / sigma_i^beta)."""
    f = np.asarray(f, dtype=float)
    b = spec.coefficients(f)
    resid = l2_norm_mu(spec, f - spec.synthesize(b))
    if resid > tol * max(1.0, l2_norm_mu(spec, f)):
        raise ValidationError(f"function has a component of norm {resid:.3g} outside the eigenfunction span")
    return float(np.sqrt(np.sum(b**2 / spec.eigenvalues**beta)))


def l2_norm_mu(spec: SpectralModel, f) -> float:
    f = np.asarray(f, dtype=float)
    return float(np.sqrt(np.sum(spec.weights * f * f)))


def expansion_to_l2(expansion: KernelExpansion, spec: SpectralModel) -> np.ndarray:
    return expansion(spec.nodes)


@dataclass(frozen=True)
class SpectralFunction:
    """sum_i coeffs[i] psi_i, evaluable anywhere through the Nystrom extension."""

    spec: SpectralModel
    coeffs: np.ndarray

    def __call__(self, X) -> np.ndarray:
        idx = np.flatnonzero(self.coeffs)
        if idx.size == 0:
            return np.zeros(np.asarray(X).reshape(-1, 2).shape[0])
        return self.spec.eigenfunctions_at(X, idx) @ self.coeffs[idx]

    def node_values(self) -> np.ndarray:
        return self.spec.synthesize(self.coeffs)

    def sup_on_nodes(self) -> float:
        return float(np.abs(self.node_values()[self.spec.support]).max())


def source_function(spec: SpectralModel, beta: float, g) -> SpectralFunction:
    """f_rho = T^beta g as an evaluable function (used to synthesize observations)."""
    return SpectralFunction(spec, spec.eigenvalues**beta * spec.coefficients(g))


def ridge_expansion(spec: SpectralModel, lam: float, f_rho) -> KernelExpansion:
    """f_{lam} as a kernel expansion on the quadrature nodes.

    Solves (T_h + lam I) f = T_h f_rho on node values; the RKHS element is then
    sum_m c_m k(node_m, .) with c = W (f_rho - f) / lam, whose node values
    reproduce f exactly.
    """
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    f_rho = np.asarray(f_rho, dtype=float)
    Th = spec.operator_matrix()
    f = linalg.solve(Th + lam * np.eye(Th.shape[0]), Th @ f_rho)
    c = spec.weights * (f_rho - f) / lam
    on = spec.weights > 0
    return KernelExpansion(spec.kernel, spec.nodes[on], c[on], 1.0)

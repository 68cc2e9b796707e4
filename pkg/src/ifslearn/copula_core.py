"""Transformation matrices, the IFS they induce, and copulas on a uniform grid.

Orientation convention: a transformation matrix is stored row-major with
``U[r, c]`` the mass of row ``r`` counted bottom-to-top and column ``c``
counted left-to-right.  Column sums give the x-breakpoints, row sums the
y-breakpoints, and entry ``U[r, c]`` drives the affine map onto the rectangle
in column ``c`` and row ``r``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MASS_TOL = 1e-12


class ValidationError(ValueError):
    """An input violates a documented invariant."""


class ConvergenceError(RuntimeError):
    """A fixed-point iteration did not reach its tolerance."""

    def __init__(self, message: str, gap: float, iterations: int):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations


@dataclass(frozen=True)
class TransformationMatrix:
    entries: np.ndarray

    def __post_init__(self):
        u = np.array(self.entries, dtype=float)
        if u.ndim != 2 or u.size == 0:
            raise ValidationError("transformation matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(u)):
            raise ValidationError("transformation matrix has non-finite entries")
        if np.any(u < 0):
            r, c = np.argwhere(u < 0)[0]
            raise ValidationError(f"negative entry at row {r + 1}, column {c + 1}")
        total = u.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValidationError(f"entries must sum to 1, got {total!r}")
        zero_rows = np.flatnonzero(u.sum(axis=1) == 0)
        if zero_rows.size:
            raise ValidationError(f"row {zero_rows[0] + 1} is all-zero")
        zero_cols = np.flatnonzero(u.sum(axis=0) == 0)
        if zero_cols.size:
            raise ValidationError(f"column {zero_cols[0] + 1} is all-zero")
        u.setflags(write=False)
        object.__setattr__(self, "entries", u)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @classmethod
    def uniform(cls, n: int) -> "TransformationMatrix":
        return cls(np.full((n, n), 1.0 / (n * n)))


@dataclass(frozen=True)
class AffineMap:
    """(x, y) -> (x_offset + x_scale * x, y_offset + y_scale * y)."""

    x_offset: float
    x_scale: float
    y_offset: float
    y_scale: float

    def __call__(self, point):
        p = np.asarray(point, dtype=float)
        return np.stack(
            [self.x_offset + self.x_scale * p[..., 0], self.y_offset + self.y_scale * p[..., 1]],
            axis=-1,
        )


@dataclass(frozen=True)
class IfsSystem:
    maps: tuple[AffineMap, ...]
    probs: np.ndarray
    col_breaks: np.ndarray | None = None
    row_breaks: np.ndarray | None = None
    # (row, column) of the generating matrix entry for each map, if any
    cells: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if len(self.maps) == 0 or probs.shape != (len(self.maps),):
            raise ValidationError("need one probability per map")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > MASS_TOL:
            raise ValidationError("map probabilities must be positive and sum to 1")
        for m in self.maps:
            for off, sc in ((m.x_offset, m.x_scale), (m.y_offset, m.y_scale)):
                if sc < 0 or off < -MASS_TOL or off + sc > 1 + MASS_TOL:
                    raise ValidationError(f"map {m} does not send the unit square into itself")
        probs.setflags(write=False)
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "probs", probs)

    @property
    def offsets(self) -> np.ndarray:
        return np.array([[m.x_offset, m.y_offset] for m in self.maps])

    @property
    def scales(self) -> np.ndarray:
        return np.array([[m.x_scale, m.y_scale] for m in self.maps])


def build_ifs(U: TransformationMatrix) -> IfsSystem:
    """One affine map per positive entry, with the entry as its probability."""
    u = U.entries
    a = np.concatenate([[0.0], np.cumsum(u.sum(axis=0))])
    b = np.concatenate([[0.0], np.cumsum(u.sum(axis=1))])
    # pin the last breakpoint so rounding cannot push an image outside [0, 1]
    a[-1] = b[-1] = 1.0
    maps, probs, cells = [], [], []
    for r, c in zip(*np.nonzero(u > 0)):
        maps.append(AffineMap(a[c], a[c + 1] - a[c], b[r], b[r + 1] - b[r]))
        probs.append(u[r, c])
        cells.append((int(r), int(c)))
    probs = np.asarray(probs)
    probs = probs / probs.sum()
    return IfsSystem(tuple(maps), probs, a, b, tuple(cells))


@dataclass(frozen=True)
class GridCopula:
    """Copula values ``values[p, q] = C(p/G, q/G)`` on a uniform grid."""

    grid_size: int
    values: np.ndarray
    margin_tol: float = 1e-9

    def __post_init__(self):
        G = int(self.grid_size)
        v = np.array(self.values, dtype=float)
        if G < 1 or v.shape != (G + 1, G + 1):
            raise ValidationError(f"values must have shape ({G + 1}, {G + 1})")
        report = copula_axiom_violations(v)
        if report["grounded"] > 0:
            raise ValidationError("copula is not grounded")
        if report["margins"] > self.margin_tol:
            raise ValidationError(f"margins deviate from uniform by {report['margins']:.3g}")
        if report["volume"] > 1e-12:
            raise ValidationError(f"negative cell volume {-report['volume']:.3g}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_size + 1)

    def cell_masses(self) -> np.ndarray:
        """G x G array of C-volumes; index ``[p, q]`` is cell ``[p/G,(p+1)/G] x [q/G,(q+1)/G]``."""
        return np.diff(np.diff(self.values, axis=0), axis=1)

    @classmethod
    def from_cell_masses(cls, masses, **kw) -> "GridCopula":
        m = np.asarray(masses, dtype=float)
        G = m.shape[0]
        vals = np.zeros((G + 1, G + 1))
        vals[1:, 1:] = m.cumsum(axis=0).cumsum(axis=1)
        return cls(G, vals, **kw)

    @classmethod
    def from_function(cls, func, G: int) -> "GridCopula":
        """Tabulate a closed-form copula such as ``lambda u, v: u * v``."""
        u = np.linspace(0.0, 1.0, G + 1)
        return cls(G, func(u[:, None], u[None, :]) * np.ones((G + 1, G + 1)))

    def to_csv(self, path) -> None:
        u = self.nodes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u", "v", "value"])
            for p in range(self.grid_size + 1):
                for q in range(self.grid_size + 1):
                    w.writerow([repr(float(u[p])), repr(float(u[q])), repr(float(self.values[p, q]))])


def copula_axiom_violations(values: np.ndarray) -> dict[str, float]:
    """Largest violation of each copula axiom (and the Frechet bounds) on the grid."""
    v = np.asarray(values, dtype=float)
    G = v.shape[0] - 1
    u = np.linspace(0.0, 1.0, G + 1)
    vol = np.diff(np.diff(v, axis=0), axis=1)
    lower = np.maximum(u[:, None] + u[None, :] - 1.0, 0.0)
    upper = np.minimum(u[:, None], u[None, :])
    return {
        "grounded": float(max(np.abs(v[0]).max(), np.abs(v[:, 0]).max())),
        "margins": float(max(np.abs(v[-1] - u).max(), np.abs(v[:, -1] - u).max())),
        "volume": float(max(0.0, -vol.min())),
        "frechet": float(max(0.0, (lower - v).max(), (v - upper).max())),
    }


def _interval_transfer(offset: float, scale: float, G: int) -> np.ndarray:
    """A[q, p]: share of cell p's (uniformly spread) mass landing in cell q under x -> offset + scale x."""
    edges = np.arange(G + 1) / G
    lo = offset + scale * edges[:-1]
    hi = offset + scale * edges[1:]
    if scale == 0:
        A = np.zeros((G, G))
        q = min(int(offset * G), G - 1)
        A[q, :] = 1.0
        return A
    overlap = np.clip(
        np.minimum(hi[None, :], edges[1:, None]) - np.maximum(lo[None, :], edges[:-1, None]), 0.0, None
    )
    return overlap / (hi - lo)[None, :]


def pushforward_step(masses: np.ndarray, ifs: IfsSystem) -> np.ndarray:
    """One application of mu -> sum_l p_l (mu pushed through map l) on cell masses."""
    G = masses.shape[0]
    out = np.zeros_like(masses)
    for p, m in zip(ifs.probs, ifs.maps):
        Ax = _interval_transfer(m.x_offset, m.x_scale, G)
        Ay = _interval_transfer(m.y_offset, m.y_scale, G)
        out += p * (Ax @ masses @ Ay.T)
    return out


def _cumulative(masses: np.ndarray) -> np.ndarray:
    return masses.cumsum(axis=0).cumsum(axis=1)


def invariant_copula(
    U: TransformationMatrix, G: int = 64, tol: float = 1e-9, max_iter: int = 10_000
) -> GridCopula:
    """Fixed point of the push-forward operator, iterated from uniform mass."""
    if G < 8:
        raise ValidationError("grid size must be at least 8")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    ifs = build_ifs(U)
    transfers = [
        (p, _interval_transfer(m.x_offset, m.x_scale, G), _interval_transfer(m.y_offset, m.y_scale, G))
        for p, m in zip(ifs.probs, ifs.maps)
    ]
    masses = np.full((G, G), 1.0 / G**2)
    cum = _cumulative(masses)
    gap = np.inf
    for it in range(1, max_iter + 1):
        nxt = sum(p * (Ax @ masses @ Ay.T) for p, Ax, Ay in transfers)
        nxt_cum = _cumulative(nxt)
        gap = float(np.abs(nxt_cum - cum).max())
        masses, cum = nxt, nxt_cum
        if gap < tol:
            return GridCopula.from_cell_masses(np.clip(masses, 0.0, None))
    raise ConvergenceError(
        f"invariant copula did not converge in {max_iter} iterations (last gap {gap:.3g})", gap, max_iter
    )


def empirical_copula(sample, G: int = 64) -> GridCopula:
    """Empirical copula of ``sample`` (n x 2), bilinearly extended and tabulated on a G-grid.

    Ranks use right-continuous empirical distribution functions, so tied
    coordinates share the larger rank.
    """
    pts = np.asarray(sample, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] != 2:
        raise ValidationError("sample must be a non-empty (n, 2) array")
    n = pts.shape[0]
    # integer ranks n*F_n(x_i), n*G_n(y_i)
    rx = np.searchsorted(np.sort(pts[:, 0]), pts[:, 0], side="right")
    ry = np.searchsorted(np.sort(pts[:, 1]), pts[:, 1], side="right")

    def bracket(ranks):
        nodes = np.union1d([0, n], ranks)
        target = np.arange(G + 1) * n  # p/G scaled by n*G
        scaled = nodes * G
        hi_idx = np.searchsorted(scaled, target, side="left")
        lo_idx = np.searchsorted(scaled, target, side="right") - 1
        lo, hi = nodes[lo_idx], nodes[hi_idx]
        width = (hi - lo) * G
        frac = np.where(width > 0, (target - lo * G) / np.where(width > 0, width, 1), 0.0)
        return lo, hi, frac

    ulo, uhi, ufrac = bracket(rx)
    vlo, vhi, vfrac = bracket(ry)
    su = np.union1d(ulo, uhi)
    sv = np.union1d(vlo, vhi)
    # H(a, b) = #{i : rx_i <= a, ry_i <= b} on the needed nodes only
    ia = np.searchsorted(su, rx, side="left")
    ib = np.searchsorted(sv, ry, side="left")
    keep = (ia < su.size) & (ib < sv.size)
    counts = np.zeros((su.size, sv.size))
    np.add.at(counts, (ia[keep], ib[keep]), 1.0)
    H = counts.cumsum(axis=0).cumsum(axis=1) / n

    def at(a, b):
        return H[np.searchsorted(su, a)[:, None], np.searchsorted(sv, b)[None, :]]

    fu, fv = ufrac[:, None], vfrac[None, :]
    vals = (
        (1 - fu) * (1 - fv) * at(ulo, vlo)
        + fu * (1 - fv) * at(uhi, vlo)
        + (1 - fu) * fv * at(ulo, vhi)
        + fu * fv * at(uhi, vhi)
    )
    vals[0, :] = 0.0
    vals[:, 0] = 0.0
    return GridCopula(G, vals)


def d_inf(C1: GridCopula, C2: GridCopula) -> float:
    if C1.grid_size != C2.grid_size:
        raise ValidationError(f"grid sizes differ: {C1.grid_size} vs {C2.grid_size}")
    return float(np.abs(C1.values - C2.values).max())


def c_volume(C: GridCopula, rect) -> float:
    """V_C of ``(u1, u2, v1, v2)``; every corner must sit on a grid node."""
    u1, u2, v1, v2 = (float(x) for x in rect)
    if u1 > u2 or v1 > v2:
        raise ValidationError("rectangle needs u1 <= u2 and v1 <= v2")
    idx = []
    for x in (u1, u2, v1, v2):
        k = x * C.grid_size
        if abs(k - round(k)) > 1e-9 or not 0 <= round(k) <= C.grid_size:
            raise ValidationError(f"corner coordinate {x} is not a grid node")
        idx.append(int(round(k)))
    p1, p2, q1, q2 = idx
    v = C.values
    return float(v[p2, q2] - v[p1, q2] - v[p2, q1] + v[p1, q1])


def independence_copula(G: int) -> GridCopula:
    return GridCopula.from_function(lambda u, v: u * v, G)


def comonotone_copula(G: int) -> GridCopula:
    return GridCopula.from_function(np.minimum, G)


def read_transformation_matrix(path) -> TransformationMatrix:
    """Load a matrix from JSON or plain text.

    JSON: ``{"orientation": "bottom_to_top", "rows": [[...], ...]}``.
    Text: an ``orientation: bottom_to_top`` line followed by one row per line
    (whitespace or comma separated).  ``top_to_bottom`` is also accepted and
    flipped on load.
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        orientation = doc.get("orientation")
        rows = doc.get("rows")
    else:
        orientation, rows = None, []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.lower().startswith("orientation"):
                orientation = line.split(":", 1)[1].strip()
                continue
            try:
                rows.append([float(x) for x in line.replace(",", " ").split()])
            except ValueError as exc:
                raise ValidationError(f"{path}: cannot parse row {line!r}") from exc
    return matrix_from_rows(rows, orientation, source=str(path))


def matrix_from_rows(rows, orientation, source: str = "matrix") -> TransformationMatrix:
    if orientation not in ("bottom_to_top", "top_to_bottom"):
        raise ValidationError(f"{source}: orientation must be 'bottom_to_top' or 'top_to_bottom'")
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValidationError(f"{source}: rows must be non-empty and of equal length")
    u = np.asarray(rows, dtype=float)
    if orientation == "top_to_bottom":
        u = u[::-1]
    return TransformationMatrix(u)

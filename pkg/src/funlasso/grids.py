"""Finite grids with measure weights, grid functions, and L1(mu) primitives.

The continuum parameter set is always represented by a finite grid carrying
strictly positive measure weights, so every integral below is a weighted sum
and the penalized estimator reduces to a measure-weighted LASSO.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "GridFunction",
    "ConeSpec",
    "OracleSpec",
    "build_uniform_grid",
    "weighted_l1_norm",
    "pairing",
    "canonical_subgradient",
    "dominant_set",
    "support",
    "grid_to_csv",
    "grid_from_csv",
]

# |w| may exceed 1 by float rounding (e.g. mollifier quadrature); anything
# beyond this is a genuine violation.
_UNIT_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Ordered design points in R^dim with per-point measure mass."""

    points: np.ndarray   # (n, dim)
    weights: np.ndarray  # (n,)
    dim: int = 1

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float))
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ValueError(f"points must have shape (n, {self.dim})")
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != pts.shape[0]:
            raise ValueError("weights length must match number of points")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("all measure weights must be strictly positive and finite")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if self.dim == 1:
            t = pts[:, 0]
            if np.any(np.diff(t) <= 0):
                raise ValueError("1-d grid points must be strictly increasing")
        else:
            # pairwise distinct; lexicographic row-major order is the caller's duty
            uniq = np.unique(pts, axis=0)
            if uniq.shape[0] != pts.shape[0]:
                raise ValueError("grid points must be pairwise distinct")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def coords(self) -> np.ndarray:
        """1-d coordinates (only for dim == 1)."""
        if self.dim != 1:
            raise ValueError("coords is defined for 1-d grids only")
        return self.points[:, 0]

    def restrict(self, idx) -> "Grid":
        """Sub-grid on the given (sorted) index set, keeping weights."""
        idx = np.asarray(idx, dtype=int)
        return Grid(self.points[idx], self.weights[idx], dim=self.dim)


@dataclass(frozen=True)
class GridFunction:
    """Real vector indexed by grid points."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function entries must be finite")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.size


def _values(g) -> np.ndarray:
    return g.values if isinstance(g, GridFunction) else np.asarray(g, dtype=float).ravel()


def _check_sizes(v: np.ndarray, grid: Grid, name: str = "function"):
    if v.shape[0] != grid.size:
        raise ValueError(f"{name} has {v.shape[0]} entries but the grid has {grid.size} points")


def build_uniform_grid(n_points: int, interval=(0.0, 1.0), measure_kind: str = "counting") -> Grid:
    """Equispaced 1-d grid on [lo, hi] with counting or Lebesgue-cell weights."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError("interval must satisfy lo < hi")
    pts = np.linspace(lo, hi, n_points) if n_points > 1 else np.array([lo])
    if measure_kind == "counting":
        w = np.ones(n_points)
    elif measure_kind == "lebesgue":
        w = np.full(n_points, (hi - lo) / n_points)
    else:
        raise ValueError(f"unknown measure kind {measure_kind!r}")
    return Grid(pts, w, dim=1)


def weighted_l1_norm(g, grid: Grid) -> float:
    """||g||_{L1(mu)} = sum_t mu_t |g_t|."""
    v = _values(g)
    _check_sizes(v, grid)
    return float(np.sum(grid.weights * np.abs(v)))


def pairing(f, g, grid: Grid) -> float:
    """<f, g> = sum_t mu_t f_t g_t."""
    fv, gv = _values(f), _values(g)
    _check_sizes(fv, grid, "f")
    _check_sizes(gv, grid, "g")
    return float(np.sum(grid.weights * fv * gv))


def support(lam) -> np.ndarray:
    """Indices where the slope is nonzero."""
    return np.flatnonzero(_values(lam) != 0.0)


def canonical_subgradient(lam, fill=None) -> GridFunction:
    """Subgradient of the L1 norm: sign(lambda) on the support, `fill` elsewhere.

    `fill` may be None (zeros), a scalar, or a vector; its entries must lie in
    [-1, 1] so the result is a valid subgradient.
    """
    lv = _values(lam)
    if fill is None:
        fv = np.zeros_like(lv)
    else:
        fv = np.broadcast_to(np.asarray(_values(fill), dtype=float), lv.shape).copy()
    if np.any(np.abs(fv) > 1.0 + _UNIT_TOL):
        raise ValueError("fill entries must lie in [-1, 1]")
    w = np.where(lv != 0.0, np.sign(lv), fv)
    return GridFunction(np.clip(w, -1.0, 1.0))


def dominant_set(w) -> np.ndarray:
    """Level set {t : |w_t| >= 1/2} as sorted indices (inclusive threshold)."""
    wv = _values(w)
    if np.any(np.abs(wv) > 1.0 + _UNIT_TOL):
        raise ValueError("subgradient entries must lie in [-1, 1]")
    return np.flatnonzero(np.abs(wv) >= 0.5)


@dataclass(frozen=True)
class ConeSpec:
    """Cone parameters: a subgradient w, budget b, and the dominant set of w."""

    w: GridFunction
    b: float  # nonnegative, math.inf allowed
    dominant: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("cone budget b must be >= 0")
        dom = dominant_set(self.w)
        if self.dominant is not None:
            got = np.asarray(self.dominant, dtype=int)
            if not np.array_equal(np.sort(got), dom):
                raise ValueError("dominant_set must be exactly the >=1/2 level set of |w|")
        object.__setattr__(self, "dominant", dom)


@dataclass(frozen=True)
class OracleSpec:
    """True regression model: slope, intercept, and noise law."""

    slope: GridFunction
    intercept: float = 0.0
    noise_sd: float = 0.0
    noise_kind: str = "gaussian"  # or "scaled-rademacher"

    def __post_init__(self):
        if not np.isfinite(self.noise_sd) or self.noise_sd < 0:
            raise ValueError("noise_sd must be finite and >= 0")
        if self.noise_kind not in ("gaussian", "scaled-rademacher"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if not isinstance(self.slope, GridFunction):
            object.__setattr__(self, "slope", GridFunction(self.slope))


def grid_to_csv(grid: Grid, path, values=None) -> None:
    """Write `index,coord_0..coord_{dim-1},weight[,value]` rows (UTF-8, '.' decimals)."""
    header = ["index"] + [f"coord_{k}" for k in range(grid.dim)] + ["weight"]
    vv = None
    if values is not None:
        vv = _values(values)
        _check_sizes(vv, grid, "values")
        header.append("value")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i in range(grid.size):
            row = [i] + [repr(float(c)) for c in grid.points[i]] + [repr(float(grid.weights[i]))]
            if vv is not None:
                row.append(repr(float(vv[i])))
            wr.writerow(row)


def grid_from_csv(path):
    """Inverse of grid_to_csv. Returns (Grid, GridFunction|None)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        ncoord = sum(1 for h in header if h.startswith("coord_"))
        has_value = header[-1] == "value"
        pts, wts, vals = [], [], []
        for row in rd:
            pts.append([float(x) for x in row[1:1 + ncoord]])
            wts.append(float(row[1 + ncoord]))
            if has_value:
                vals.append(float(row[2 + ncoord]))
    grid = Grid(np.array(pts), np.array(wts), dim=ncoord)
    return grid, (GridFunction(np.array(vals)) if has_value else None)

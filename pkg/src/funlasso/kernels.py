"""Covariance kernels, Gram matrices with jittered Cholesky, and the design pseudometric.

Kernel kinds: released Brownian motion (1 + s^t), Brownian motion (s^t),
Ornstein-Uhlenbeck (exp(-|s-t|)), stationary kernels given by a polynomially
decaying spectral density B*(1+|u|^2)^{-p}, and block kernels gluing inner
kernels on a partition with a cross-correlation scale.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn
from scipy.special import jv

from .grids import Grid, GridFunction

__all__ = [
    "KernelSpec",
    "BrownianReleased",
    "Brownian",
    "OrnsteinUhlenbeck",
    "StationarySpectral",
    "BlockKernel",
    "GramModel",
    "NonPsdError",
    "kernel_eval",
    "stationary_kernel_from_spectral",
    "gram_matrix",
    "pseudometric_dx",
    "dx_matrix",
    "kernel_spec_from_json",
    "kernel_spec_to_json",
    "gram_to_csv",
]

log = logging.getLogger("funlasso")

_JITTER_BASE = 1e-12  # relative to trace/N; escalates x10 up to the cap below
_JITTER_CAP = 1e-6


class NonPsdError(Exception):
    """Cholesky failed even at the jitter cap; carries the offending pivot index."""

    def __init__(self, pivot: int, message: str = ""):
        self.pivot = pivot
        super().__init__(message or f"matrix is not PSD (pivot {pivot} failed at jitter cap)")


@dataclass(frozen=True)
class KernelSpec:
    mean: np.ndarray | None = field(default=None, kw_only=True)

    @property
    def kind(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class BrownianReleased(KernelSpec):
    """Brownian motion released at zero: k(s,t) = 1 + min(s,t)."""

    @property
    def kind(self):
        return "brownian_released"


@dataclass(frozen=True)
class Brownian(KernelSpec):
    """Standard Brownian motion: k(s,t) = min(s,t)."""

    @property
    def kind(self):
        return "brownian"


@dataclass(frozen=True)
class OrnsteinUhlenbeck(KernelSpec):
    """Ornstein-Uhlenbeck: k(s,t) = exp(-rate*|s-t|) (unit stationary variance)."""

    rate: float = 1.0

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("mean-reversion rate must be positive")

    @property
    def kind(self):
        return "ornstein_uhlenbeck"


@dataclass(frozen=True)
class StationarySpectral(KernelSpec):
    """Stationary kernel with spectral density B*(1+|u|^2)^{-p} on R^dim."""

    p: float = 1.0
    amplitude: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.p <= self.dim / 2:
            raise ValueError("spectral exponent must satisfy p > dim/2 (integrability)")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")

    @property
    def kind(self):
        return "stationary_spectral"


@dataclass(frozen=True)
class BlockKernel(KernelSpec):
    """Blockwise kernel on index ranges with inter-block covariances scaled by cross_scale.

    K = (1 - c) * blockdiag(K_1..K_B) + c * K_shared, where K_shared is the
    shared inner kernel evaluated on the whole grid.  Within-block entries are
    then exactly the inner Gram blocks and inter-block entries are c*k(s,t);
    the convex combination keeps K PSD.  cross_scale > 0 requires a single
    shared inner spec.
    """

    partition: tuple = ()      # ((lo, hi), ...) half-open index ranges
    inner: tuple = ()          # one KernelSpec per block, or a single shared one
    cross_scale: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.cross_scale <= 1.0:
            raise ValueError("cross_scale must lie in [0, 1]")
        part = tuple((int(a), int(b)) for a, b in self.partition)
        if not part:
            raise ValueError("block kernel needs a nonempty partition")
        prev = 0
        for a, b in part:
            if a != prev or b <= a:
                raise ValueError("partition must be contiguous half-open ranges covering 0..N")
            prev = b
        inner = self.inner if isinstance(self.inner, tuple) else tuple(self.inner)
        if isinstance(self.inner, KernelSpec):
            inner = (self.inner,) * len(part)
        if len(inner) == 1 and len(part) > 1:
            inner = inner * len(part)
        if len(inner) != len(part):
            raise ValueError("need one inner kernel spec per block")
        if self.cross_scale > 0 and any(s != inner[0] for s in inner):
            raise ValueError("cross_scale > 0 requires a single shared inner kernel spec")
        object.__setattr__(self, "partition", part)
        object.__setattr__(self, "inner", inner)

    @property
    def kind(self):
        return "block"


def _tail_truncation(p: float, dim: int) -> float:
    """Smallest U with (1+U^2)^{-p} * U^dim < 1e-12 (geometric bracket + bisection)."""
    def f(u):
        return (1.0 + u * u) ** (-p) * u ** dim - 1e-12

    hi = 2.0
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e15:
            raise RuntimeError("spectral tail truncation did not converge")
    lo = hi / 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return hi


def stationary_kernel_from_spectral(p: float, B: float, dim: int, tau: float) -> float:
    """k(tau) = B * int_{R^dim} exp(i tau.u) (1+|u|^2)^{-p} du by adaptive quadrature.

    tau is the Euclidean lag |s-t|.  The integral is radial.  tau = 0 uses
    plain quadrature truncated where (1+U^2)^{-p} U^dim < 1e-12; oscillatory
    lags use infinite-range Fourier (dim = 1) or Bessel-zero-partitioned
    (dim >= 2) rules, whose cycle extrapolation integrates the full tail and
    so dominates any fixed truncation.  Relative accuracy target 1e-8.
    """
    if p <= dim / 2:
        raise ValueError("spectral exponent must satisfy p > dim/2")
    tau = abs(float(tau))
    dens = lambda r: (1.0 + r * r) ** (-p)
    if tau == 0.0:
        U = _tail_truncation(p, dim)
        surf = 2.0 if dim == 1 else 2.0 * math.pi ** (dim / 2) / gamma_fn(dim / 2)
        # geometric breakpoints keep the adaptive rule honest on the long tail
        pts = np.geomspace(1e-3, U, 40)[:-1]
        val, _ = integrate.quad(lambda r: r ** (dim - 1) * dens(r), 0.0, U,
                                points=pts, epsabs=1e-13, epsrel=1e-10, limit=400)
        out = B * surf * val
    elif dim == 1:
        if tau < 1e-5:
            # near-zero lags break the infinite-cycle rule; sum geometric
            # pieces out to a few cycles (the rest is below 2*dens(T)/tau)
            T = min(10.0 * math.pi / tau, _tail_truncation(p, dim))
            edges = np.concatenate([[0.0], np.geomspace(1.0, T, 30)])
            val = 0.0
            for a, b2 in zip(edges[:-1], edges[1:]):
                piece, _ = integrate.quad(dens, a, b2, weight="cos", wvar=tau,
                                          epsabs=1e-14, epsrel=1e-11, limit=200)
                val += piece
        else:
            import warnings
            with warnings.catch_warnings():
                # the last extrapolation cycles trip a roundoff warning at
                # tolerances this tight; accuracy is verified against closed forms
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, _ = integrate.quad(dens, 0.0, np.inf, weight="cos", wvar=tau,
                                        epsabs=1e-13, limit=400)
        out = 2.0 * B * val
    else:
        import mpmath
        nu = dim / 2 - 1
        f = lambda r: mpmath.besselj(nu, tau * r) * r ** (dim / 2) * (1 + r * r) ** (-p)
        val = mpmath.quadosc(f, [0, mpmath.inf],
                             zeros=lambda n: mpmath.besseljzero(nu, max(int(n), 1)) / tau)
        out = B * (2.0 * math.pi) ** (dim / 2) * tau ** (1 - dim / 2) * float(val)
    if not np.isfinite(out):
        raise RuntimeError("spectral quadrature returned a non-finite value")
    return float(out)


def kernel_eval(spec: KernelSpec, s, t) -> float:
    """Covariance k(s, t); symmetric in its arguments."""
    if isinstance(spec, BrownianReleased):
        return 1.0 + min(float(s), float(t))
    if isinstance(spec, Brownian):
        return min(float(s), float(t))
    if isinstance(spec, OrnsteinUhlenbeck):
        return math.exp(-spec.rate * abs(float(s) - float(t)))
    if isinstance(spec, StationarySpectral):
        tau = float(np.linalg.norm(np.atleast_1d(np.asarray(s, float) - np.asarray(t, float))))
        return stationary_kernel_from_spectral(spec.p, spec.amplitude, spec.dim, tau)
    if isinstance(spec, BlockKernel):
        raise ValueError("block kernels are index-structured; build the Gram matrix instead")
    raise TypeError(f"unknown kernel spec {type(spec).__name__}")


def _pairwise_lags(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _dense_gram(spec: KernelSpec, grid: Grid) -> np.ndarray:
    t = grid.points
    if isinstance(spec, (BrownianReleased, Brownian)):
        if grid.dim != 1:
            raise ValueError(f"{spec.kind} kernel is defined on 1-d grids")
        x = t[:, 0]
        K = np.minimum.outer(x, x)
        if isinstance(spec, BrownianReleased):
            K = 1.0 + K
        return K
    if isinstance(spec, OrnsteinUhlenbeck):
        return np.exp(-spec.rate * _pairwise_lags(t))
    if isinstance(spec, StationarySpectral):
        lags = _pairwise_lags(t)
        # one quadrature per distinct lag; rounding merges FP-tie lags on uniform grids
        key = np.round(lags, 12)
        uniq, inv = np.unique(key, return_inverse=True)
        vals = np.array([stationary_kernel_from_spectral(spec.p, spec.amplitude, spec.dim, u)
                         for u in uniq])
        return vals[inv].reshape(lags.shape)
    if isinstance(spec, BlockKernel):
        n = grid.size
        if spec.partition[-1][1] != n:
            raise ValueError("block partition must cover exactly the grid indices")
        K = np.zeros((n, n))
        for (a, b), inner in zip(spec.partition, spec.inner):
            K[a:b, a:b] = _dense_gram(inner, grid.restrict(np.arange(a, b)))
        c = spec.cross_scale
        if c > 0:
            K_shared = _dense_gram(spec.inner[0], grid)
            K = (1.0 - c) * K + c * K_shared  # within-block entries are unchanged
        return K
    raise TypeError(f"unknown kernel spec {type(spec).__name__}")


def _cholesky_with_jitter(K: np.ndarray):
    """Lower Cholesky of K + jitter*I under the escalation policy; returns (L, jitter)."""
    n = K.shape[0]
    tr = float(np.trace(K))
    if tr <= 0:
        if np.allclose(K, 0.0):
            return np.zeros_like(K), 0.0
        raise NonPsdError(int(np.argmin(np.diag(K))), "matrix has non-positive trace")
    base = _JITTER_BASE * tr / n
    cap = _JITTER_CAP * tr / n
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n) if jitter else K)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter = base if jitter == 0.0 else jitter * 10.0
            if jitter > cap * (1 + 1e-12):
                raise NonPsdError(_failing_pivot(K + cap * np.eye(n)))


def _failing_pivot(K: np.ndarray) -> int:
    """Index of the first nonpositive pivot of an (unpivoted) Cholesky sweep."""
    A = K.copy()
    n = A.shape[0]
    for i in range(n):
        if A[i, i] <= 0:
            return i
        piv = math.sqrt(A[i, i])
        A[i + 1:, i] /= piv
        A[i + 1:, i + 1:] -= np.outer(A[i + 1:, i], A[i + 1:, i])
    return n - 1


class GramModel:
    """Covariance of the design on a grid: K, mean, and a jittered Cholesky factor."""

    def __init__(self, grid: Grid, K: np.ndarray, mean: np.ndarray | None,
                 chol: np.ndarray, jitter: float, spec: KernelSpec | None = None):
        self.grid = grid
        self.K = K
        self.mean = np.zeros(grid.size) if mean is None else np.asarray(mean, float).ravel()
        if self.mean.shape[0] != grid.size:
            raise ValueError("mean vector length must match the grid")
        self.chol = chol
        self.jitter = float(jitter)
        self.spec = spec
        self._validate()
        for a in (self.K, self.mean, self.chol):
            a.setflags(write=False)
        self._mkm_chol = None  # lazy Cholesky of W K W for RKHS-norm solves

    def _validate(self):
        K = self.K
        if not np.allclose(K, K.T, atol=1e-12, rtol=0.0):
            raise ValueError("Gram matrix is not symmetric to 1e-12")
        n = K.shape[0]
        resid = np.max(np.abs(self.chol @ self.chol.T - (K + self.jitter * np.eye(n))))
        if resid > 1e-10:
            raise ValueError(f"Cholesky factor does not reproduce K+jitter*I (max err {resid:.2e})")

    @property
    def size(self) -> int:
        return self.grid.size

    def centered(self) -> bool:
        return not np.any(self.mean != 0.0)

    def weighted_quadratic(self) -> np.ndarray:
        """W K W with W = diag(mu): the quadratic form of Var(f_u)."""
        w = self.grid.weights
        return (w[:, None] * self.K) * w[None, :]

    def restrict(self, idx) -> "GramModel":
        """Sub-model on an index set (kernel restricted to those points)."""
        idx = np.asarray(idx, dtype=int)
        K = self.K[np.ix_(idx, idx)]
        L, jit = _cholesky_with_jitter(K)
        return GramModel(self.grid.restrict(idx), K, self.mean[idx], L, jit, spec=self.spec)


def gram_matrix(spec: KernelSpec, grid: Grid) -> GramModel:
    """Assemble K_{ij} = k(t_i, t_j) and its Cholesky factor under the jitter policy."""
    K = _dense_gram(spec, grid)
    K = 0.5 * (K + K.T)
    L, jitter = _cholesky_with_jitter(K)
    if jitter > 0:
        log.debug("gram_matrix applied jitter %.3e (trace %.3e, n=%d)", jitter, np.trace(K), grid.size)
    mean = spec.mean
    if mean is not None:
        mean = np.asarray(mean, dtype=float).ravel()
    return GramModel(grid, K, mean, L, jitter, spec=spec)


def pseudometric_dx(model: GramModel, i: int, j: int) -> float:
    """d_X(t_i, t_j) = sqrt(Var(X(t_i) - X(t_j))), clamped at 0 for tiny negatives."""
    K = model.K
    v = K[i, i] + K[j, j] - 2.0 * K[i, j]
    if v < -1e-12:
        raise NonPsdError(min(i, j), f"negative increment variance {v:.3e} (non-PSD signal)")
    return math.sqrt(max(v, 0.0))


def dx_matrix(model: GramModel) -> np.ndarray:
    """Full pseudometric matrix; validates against negative increment variances."""
    d = np.diag(model.K)
    v = d[:, None] + d[None, :] - 2.0 * model.K
    if v.min() < -1e-12:
        i, j = np.unravel_index(np.argmin(v), v.shape)
        raise NonPsdError(min(i, j), f"negative increment variance {v.min():.3e}")
    return np.sqrt(np.clip(v, 0.0, None))


_KINDS = {
    "brownian_released": BrownianReleased,
    "brownian": Brownian,
    "ornstein_uhlenbeck": OrnsteinUhlenbeck,
}


def kernel_spec_from_json(obj: dict | str) -> KernelSpec:
    """Parse a kernel spec from a JSON object with a `kind` discriminator."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    kind = obj.get("kind")
    mean = obj.get("mean")
    if mean is not None and not np.isscalar(mean):
        mean = np.asarray(mean, dtype=float)
    elif mean == 0:
        mean = None
    if kind == "ornstein_uhlenbeck":
        return OrnsteinUhlenbeck(rate=float(obj.get("rate", 1.0)), mean=mean)
    if kind in _KINDS:
        return _KINDS[kind](mean=mean)
    if kind == "stationary_spectral":
        return StationarySpectral(p=float(obj["p"]), amplitude=float(obj.get("amplitude", 1.0)),
                                  dim=int(obj.get("dim", 1)), mean=mean)
    if kind == "block":
        inner = obj["inner"]
        if isinstance(inner, dict):
            inner = [inner]
        return BlockKernel(partition=tuple(tuple(r) for r in obj["partition"]),
                           inner=tuple(kernel_spec_from_json(s) for s in inner),
                           cross_scale=float(obj.get("cross_scale", 0.0)), mean=mean)
    raise ValueError(f"unknown kernel kind {kind!r}")


def kernel_spec_to_json(spec: KernelSpec) -> dict:
    out = {"kind": spec.kind}
    if spec.mean is not None:
        out["mean"] = np.asarray(spec.mean).tolist()
    if isinstance(spec, OrnsteinUhlenbeck):
        out["rate"] = spec.rate
    if isinstance(spec, StationarySpectral):
        out.update(p=spec.p, amplitude=spec.amplitude, dim=spec.dim)
    if isinstance(spec, BlockKernel):
        out.update(partition=[list(r) for r in spec.partition],
                   inner=[kernel_spec_to_json(s) for s in spec.inner],
                   cross_scale=spec.cross_scale)
    return out


def gram_to_csv(model: GramModel, path) -> None:
    """Dense CSV export, one row per grid point."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["index"] + [f"k_{j}" for j in range(model.size)])
        for i in range(model.size):
            wr.writerow([i] + [repr(float(x)) for x in model.K[i]])

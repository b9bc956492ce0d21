"""RKHS norms, subgradient constructions, and the alignment coefficient.

The RKHS (dual) norm of w under the design covariance is
sqrt(w' W (W K W)^+ W w); on released-Brownian grids it has a discrete
Sobolev closed form, for Ornstein-Uhlenbeck a continuum closed form, and for
stationary designs a Fourier-Sobolev upper bound.  The alignment coefficient
restricts the dual norm's test functions to a cone whose mass off the
dominant set of w is budgeted; it is computed by proximal gradient with
Dykstra projections and certified through KKT multipliers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.linalg import cho_factor, cho_solve

from .grids import Grid, GridFunction, dominant_set, support
from .kernels import GramModel, _cholesky_with_jitter

__all__ = [
    "AlignmentResult",
    "RKHSNormInfinite",
    "AlignmentError",
    "rkhs_norm",
    "discrete_sobolev_norm_bm",
    "ou_rkhs_norm_closed",
    "fourier_sobolev_norm",
    "spike_subgradient",
    "alignment_coefficient",
]

log = logging.getLogger("funlasso")

_RANGE_TOL = 1e-6  # relative residual beyond which w is declared outside range(WKW)


class RKHSNormInfinite(Exception):
    """w has a component outside the numerical range of W K W."""


class AlignmentError(Exception):
    """Infeasible normalization or non-convergence of the inner convex program."""


def _vals(g) -> np.ndarray:
    return g.values if isinstance(g, GridFunction) else np.asarray(g, dtype=float).ravel()


def _weighted_form(model: GramModel):
    """(M, cho) with M = W K W and a cached jittered Cholesky factorization of M."""
    M = model.weighted_quadratic()
    if model._mkm_chol is None:
        L, jit = _cholesky_with_jitter(M)
        model._mkm_chol = (M, L, jit)
    return model._mkm_chol


def rkhs_norm(model: GramModel, w) -> float:
    """sqrt(w' W (W K W)^+ W w) via triangular solves against the Cholesky of W K W.

    Raises RKHSNormInfinite when the least-squares residual of the solve
    exceeds 1e-6 * ||w|| (w outside the numerical range: infinite norm).
    """
    wv = _vals(w)
    if wv.shape[0] != model.size:
        raise ValueError("w length must match the grid")
    nrm_w = float(np.linalg.norm(wv))
    if nrm_w == 0.0:
        return 0.0
    M, L, _ = _weighted_form(model)
    c = model.grid.weights * wv
    if not np.any(L.diagonal() > 0):  # zero covariance: only w = 0 is in the RKHS
        raise RKHSNormInfinite("covariance is zero; nonzero w has infinite RKHS norm")
    z = cho_solve((L, True), c)
    resid = float(np.linalg.norm(M @ z - c))
    if resid > _RANGE_TOL * nrm_w:
        raise RKHSNormInfinite(
            f"solve residual {resid:.3e} exceeds {_RANGE_TOL:g}*||w||; w is outside the RKHS")
    val2 = float(z @ c)
    return math.sqrt(max(val2, 0.0))


def discrete_sobolev_norm_bm(grid: Grid, w) -> float:
    """Squared RKHS norm on a released-Brownian grid (counting measure):

        w_1^2/(1+t_1) + sum_{j>=2} (w_j - w_{j-1})^2 / (t_j - t_{j-1}).
    """
    if grid.dim != 1:
        raise ValueError("discrete Sobolev norm is defined on 1-d grids")
    if not np.all(grid.weights == 1.0):
        raise ValueError("discrete Sobolev norm assumes the counting measure")
    t = grid.coords
    wv = _vals(w)
    if wv.shape[0] != t.shape[0]:
        raise ValueError("w length must match the grid")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("grid points must be strictly increasing")
    out = wv[0] ** 2 / (1.0 + t[0])
    if len(wv) > 1:
        out += float(np.sum(np.diff(wv) ** 2 / dt))
    return float(out)


def ou_rkhs_norm_closed(grid: Grid, w) -> float:
    """Squared Ornstein-Uhlenbeck RKHS norm of a function sampled on [0, 1]:

        (w(0)^2 + w(1)^2)/2 + (1/4) int_0^1 w^2 + int_0^1 (w')^2,

    with trapezoid quadrature and forward differences.  This closed form is
    the dual norm of the OU kernel with mean-reversion rate 1/2, i.e.
    exp(-|s-t|/2) (the general-rate norm is (w(0)^2+w(T)^2)/2 + (rate/2)
    int w^2 + (1/(2 rate)) int (w')^2).
    """
    if grid.dim != 1 or grid.size < 3:
        raise ValueError("need a 1-d grid with at least 3 points covering [0, 1]")
    t = grid.coords
    if abs(t[0]) > 1e-9 or abs(t[-1] - 1.0) > 1e-9:
        raise ValueError("grid must cover [0, 1]")
    wv = _vals(w)
    boundary = 0.5 * (wv[0] ** 2 + wv[-1] ** 2)
    l2 = float(np.trapezoid(wv * wv, t))
    deriv = float(np.sum(np.diff(wv) ** 2 / np.diff(t)))
    return boundary + 0.25 * l2 + deriv


def _lattice_shape(grid: Grid):
    """Axis coordinates of a full row-major lattice; validates completeness."""
    axes = [np.unique(grid.points[:, k]) for k in range(grid.dim)]
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != grid.size:
        raise ValueError("grid is not a full lattice")
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.dim)
    if not np.allclose(mesh, grid.points):
        raise ValueError("lattice points must be in row-major lexicographic order")
    steps = []
    for a in axes:
        d = np.diff(a)
        if len(d) and not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
            raise ValueError("lattice must be uniform along each axis")
        steps.append(d[0] if len(d) else 1.0)
    return shape, steps


def fourier_sobolev_norm(grid: Grid, w, p: float) -> float:
    """Squared Sobolev norm int (1+|xi|^2)^p |w_hat(xi)|^2 d xi from the DFT.

    w is treated as compactly supported on its uniform lattice, zero-padded x4
    per axis; the unitary-convention Fourier transform makes p = 0 reproduce
    the Riemann ||w||^2_{L2} exactly (Plancherel).
    """
    shape, steps = _lattice_shape(grid)
    wv = _vals(w).reshape(shape)
    padded_shape = tuple(4 * s for s in shape)
    wh = np.fft.fftn(wv, s=padded_shape, axes=tuple(range(grid.dim)))
    cell = float(np.prod(steps))
    # unitary continuous FT approximation: w_hat = cell * DFT / (2 pi)^{d/2}
    scale2 = cell ** 2 / (2.0 * math.pi) ** grid.dim
    freq2 = np.zeros(padded_shape)
    for ax, (m, h) in enumerate(zip(padded_shape, steps)):
        xi = 2.0 * math.pi * np.fft.fftfreq(m, d=h)
        sh = [1] * grid.dim
        sh[ax] = m
        freq2 = freq2 + (xi ** 2).reshape(sh)
    dxi = float(np.prod([2.0 * math.pi / (m * h) for m, h in zip(padded_shape, steps)]))
    return float(np.sum((1.0 + freq2) ** p * np.abs(wh) ** 2) * scale2 * dxi)


# --- mollifier: phi(x) = exp(1 - 1/(1-x^2)) on |x|<1, normalized to unit mass ---

def _bump_cdf_table(n: int = 4097):
    x = np.linspace(-1.0, 1.0, n)
    with np.errstate(divide="ignore", over="ignore"):
        phi = np.where(np.abs(x) < 1.0, np.exp(1.0 - 1.0 / np.clip(1.0 - x * x, 1e-300, None)), 0.0)
    cdf = integrate.cumulative_trapezoid(phi, x, initial=0.0)
    cdf /= cdf[-1]
    return x, cdf


_BUMP_X, _BUMP_CDF = _bump_cdf_table()


def _bump_cdf(y: np.ndarray) -> np.ndarray:
    return np.interp(y, _BUMP_X, _BUMP_CDF, left=0.0, right=1.0)


def spike_subgradient(grid: Grid, lam, style: str = "interpolating", r: float | None = None) -> GridFunction:
    """A low-RKHS-norm element of the L1 subdifferential at a spiky slope.

    interpolating: piecewise-linear between signed support points, decaying to
    0 at the grid boundaries.  mollified: per spike, sign * (phi_r convolved
    with the indicator of a 2r-ball), a smooth bump of radius 3r whose plateau
    covers the spike; spikes closer than 4r are rejected (bumps would overlap
    past the point where their sum stays within [-1, 1]).
    """
    if grid.dim != 1:
        raise ValueError("spike subgradients are implemented for 1-d grids")
    lv = _vals(lam)
    supp = support(lv)
    if supp.size == 0:
        raise ValueError("slope must be nonzero")
    t = grid.coords
    signs = np.sign(lv[supp])
    if style == "interpolating":
        knots_t = t[supp]
        knots_v = signs.astype(float)
        if supp[0] > 0:
            knots_t = np.concatenate([[t[0]], knots_t])
            knots_v = np.concatenate([[0.0], knots_v])
        if supp[-1] < grid.size - 1:
            knots_t = np.concatenate([knots_t, [t[-1]]])
            knots_v = np.concatenate([knots_v, [0.0]])
        w = np.interp(t, knots_t, knots_v)
        return GridFunction(np.clip(w, -1.0, 1.0))
    if style == "mollified":
        if r is None or r <= 0:
            raise ValueError("mollified style needs a radius r > 0")
        pos = t[supp]
        if supp.size > 1 and np.min(np.diff(pos)) < 4.0 * r:
            raise ValueError("mollified spikes closer than 4r overlap")
        w = np.zeros_like(t)
        for tj, sj in zip(pos, signs):
            d = t - tj
            # conv of the unit-mass bump (support r) with 1_{[tj-2r, tj+2r]}
            w += sj * (_bump_cdf((d + 2.0 * r) / r) - _bump_cdf((d - 2.0 * r) / r))
        return GridFunction(np.clip(w, -1.0, 1.0))
    raise ValueError(f"unknown subgradient style {style!r}")


@dataclass
class AlignmentResult:
    value: float
    maximizer: GridFunction
    b_used: float
    certificate: float  # KKT residual of the inner convex program (0 for closed forms)


def _prediction_form(model: GramModel) -> np.ndarray:
    """Quadratic form of ||f_u||^2_{L2(Pi)}: W K W, plus (Wm)(Wm)' when not centered."""
    M = model.weighted_quadratic()
    if not model.centered():
        log.warning("alignment coefficient on a non-centered model: using the second-moment form")
        c = model.grid.weights * model.mean
        M = M + np.outer(c, c)
    return M


def _project_hyperplane(u, c, cc):
    return u + (1.0 - c @ u) / cc * c


def _project_partial_l1(u, mu, off, budget):
    """Euclidean projection onto {sum_{t in off} mu_t |u_t| <= budget} (other coords free)."""
    if off.size == 0 or budget == math.inf:
        return u
    v = u[off]
    m = mu[off]
    if np.sum(m * np.abs(v)) <= budget:
        return u
    # KKT: v_t = soft(v0_t, nu*m_t); nu > 0 from the weighted-L1 equation, by bisection
    def excess(nu):
        return np.sum(m * np.maximum(np.abs(v) - nu * m, 0.0)) - budget
    hi = np.max(np.abs(v) / m) if budget >= 0 else 0.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    nu = 0.5 * (lo + hi)
    out = u.copy()
    out[off] = np.sign(v) * np.maximum(np.abs(v) - nu * m, 0.0)
    return out


def _dykstra(u, c, mu, off, budget, iters=200, tol=1e-13):
    """Dykstra alternating projections onto {c.u = 1} n {off-support weighted-L1 ball}."""
    cc = float(c @ c)
    p = np.zeros_like(u)
    q = np.zeros_like(u)
    x = u
    for _ in range(iters):
        y = _project_hyperplane(x + p, c, cc)
        p = x + p - y
        x_new = _project_partial_l1(y + q, mu, off, budget)
        q = y + q - x_new
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        x = x_new
    return _project_hyperplane(x, c, cc)  # end on the hyperplane: c.x = 1 exactly


def _inner_kkt(u, g, c, mu, off_mask, budget, slack_tol=1e-10):
    """Best-multiplier KKT residual for min u'Mu s.t. c'u = 1, off-support L1 <= budget."""
    off_active = np.sum(mu[off_mask] * np.abs(u[off_mask])) >= budget - slack_tol if budget < math.inf else False

    feas = abs(float(c @ u) - 1.0)
    if budget < math.inf:
        feas = max(feas, max(0.0, float(np.sum(mu[off_mask] * np.abs(u[off_mask])) - budget)))

    def residual(kappa, nu):
        r = g + kappa * c
        out = feas
        strict = ~off_mask  # coords in T_w: plain stationarity
        if strict.any():
            out = max(out, float(np.max(np.abs(r[strict]))))
        act = off_mask & (u != 0.0)
        if act.any():
            out = max(out, float(np.max(np.abs(r[act] + nu * mu[act] * np.sign(u[act])))))
        zer = off_mask & (u == 0.0)
        if zer.any():
            out = max(out, float(np.max(np.maximum(0.0, np.abs(r[zer]) - nu * mu[zer]))))
        return out

    # least-squares start for kappa from the equality-constrained coords
    strict = ~off_mask
    num = -(g[strict] @ c[strict]) if strict.any() else -(g @ c)
    den = (c[strict] @ c[strict]) if strict.any() else (c @ c)
    kappa0 = float(num / den) if den > 0 else 0.0
    nu0 = 0.0
    if off_active:
        act = off_mask & (u != 0.0)
        if act.any():
            nu0 = max(0.0, float(np.mean(-(g[act] + kappa0 * c[act]) * np.sign(u[act]) / mu[act])))
    best = (residual(kappa0, nu0), kappa0, nu0)
    res = optimize.minimize(lambda z: residual(z[0], max(z[1], 0.0) if off_active else 0.0),
                            x0=[kappa0, nu0], method="Nelder-Mead",
                            options={"maxiter": 400, "xatol": 1e-12, "fatol": 1e-14})
    cand = (residual(res.x[0], max(res.x[1], 0.0) if off_active else 0.0),
            float(res.x[0]), max(float(res.x[1]), 0.0))
    return min(best, cand)[0]


def alignment_coefficient(model: GramModel, w, b: float = 16.0, tol: float = 1e-8,
                          max_iters: int = 20000) -> AlignmentResult:
    """sup { <w,u>_mu : u in the cone C_w^(b), ||f_u||_{L2(Pi)} = 1 }.

    Computed as 1/sqrt(min u'Mu subject to <w,u>_mu = 1 and off-dominant-set
    weighted-L1 mass <= b), by proximal gradient with Dykstra projections and
    a certified KKT residual.  b = inf coincides with the RKHS norm; b = 0
    with the RKHS norm of the kernel restricted to the dominant set.
    """
    wv = _vals(w)
    if wv.shape[0] != model.size:
        raise ValueError("w length must match the grid")
    if b < 0:
        raise ValueError("cone budget b must be >= 0")
    if not np.any(wv != 0.0):
        raise AlignmentError("w = 0: the normalization <w,u> = 1 is infeasible")
    mu = model.grid.weights
    dom = dominant_set(wv)
    n = model.size

    if math.isinf(b):
        val = rkhs_norm(model, wv)
        u = _dual_maximizer(model, wv)
        return AlignmentResult(value=val, maximizer=GridFunction(u), b_used=b, certificate=0.0)
    if b == 0.0:
        if dom.size == 0:
            raise AlignmentError("b = 0 with an empty dominant set: no feasible u")
        sub = model.restrict(dom)
        val = rkhs_norm(sub, wv[dom])
        u_sub = _dual_maximizer(sub, wv[dom])
        u = np.zeros(n)
        u[dom] = u_sub
        return AlignmentResult(value=val, maximizer=GridFunction(u), b_used=0.0, certificate=0.0)

    M = _prediction_form(model)
    c = mu * wv
    off_mask = np.ones(n, dtype=bool)
    off_mask[dom] = False
    off = np.flatnonzero(off_mask)

    # feasible start supported where the cone is free
    u0 = np.zeros(n)
    base = dom if dom.size else np.arange(n)
    u0[base] = c[base]
    denom = float(c @ u0)
    if denom <= 0:
        raise AlignmentError("could not find a feasible starting direction with <w,u> > 0")
    u0 /= denom
    u0 = _project_partial_l1(u0, mu, off, b)
    u0 = _dykstra(u0, c, mu, off, b)

    L = max(float(np.linalg.eigvalsh(M)[-1]), 1e-300)
    step = 1.0 / (2.0 * 1.05 * L)
    u = u0
    f_curr = float(u @ M @ u)
    y = u.copy()
    t_mom = 1.0
    cert = math.inf
    for it in range(1, max_iters + 1):
        cand = _dykstra(y - step * 2.0 * (M @ y), c, mu, off, b)
        f_cand = float(cand @ M @ cand)
        if f_cand > f_curr + 1e-15 * max(1.0, f_curr):
            y = u.copy()
            t_mom = 1.0
            cand = _dykstra(y - step * 2.0 * (M @ y), c, mu, off, b)
            f_cand = float(cand @ M @ cand)
            if f_cand > f_curr + 1e-15 * max(1.0, f_curr):
                cand, f_cand = u, f_curr
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
        y = cand + ((t_mom - 1.0) / t_next) * (cand - u)
        u, f_curr, t_mom = cand, f_cand, t_next
        if it % 25 == 0 or it == max_iters:
            cert = _inner_kkt(u, 2.0 * (M @ u), c, mu, off_mask, b)
            if cert <= tol:
                break
    else:  # pragma: no cover
        pass
    if cert > tol:
        cert = _inner_kkt(u, 2.0 * (M @ u), c, mu, off_mask, b)
    if cert > tol:
        raise AlignmentError(f"inner program did not converge (KKT residual {cert:.3e} > {tol:g})")
    qmin = float(u @ M @ u)
    if qmin <= 0:
        raise AlignmentError("degenerate inner minimum: prediction norm collapsed to zero")
    value = 1.0 / math.sqrt(qmin)
    maximizer = u / math.sqrt(qmin)  # unit prediction norm, <w, maximizer> = value
    return AlignmentResult(value=value, maximizer=GridFunction(maximizer), b_used=float(b),
                           certificate=cert)


def _dual_maximizer(model: GramModel, wv: np.ndarray) -> np.ndarray:
    """u attaining sup <w,u> at unit prediction norm without cone constraints."""
    M, L, _ = _weighted_form(model)
    c = model.grid.weights * wv
    z = cho_solve((L, True), c)
    q = float(z @ M @ z)
    if q <= 0:
        return np.zeros_like(c)
    return z / math.sqrt(q)

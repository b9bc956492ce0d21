"""Penalized least squares on the grid: empirical and population problems.

Both problems are solved in the reparameterized coordinates theta = W lambda
(W = diag(mu)), where the measure-weighted penalty eps*||lambda||_{L1(mu)}
becomes the plain eps*||theta||_1 and the model term is X theta.  The solver
is FISTA with a monotone restart and a soft-threshold prox; optimality is
certified through the subdifferential residual, never through iteration
counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import Grid, GridFunction, OracleSpec, weighted_l1_norm
from .kernels import GramModel
from .sampling import RegressionSample

__all__ = [
    "LassoProblem",
    "LassoFit",
    "soft_threshold",
    "project_l1_ball",
    "objective_empirical",
    "fit_empirical",
    "fit_population",
    "kkt_residual",
    "penalized_approx_error",
    "population_risk",
]

DEFAULT_TOL = 1e-8


def default_max_iters(n_points: int) -> int:
    return 50 * n_points + 10_000


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def project_l1_ball(x: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {||x||_1 <= radius}."""
    a = np.abs(x)
    s = a.sum()
    if s <= radius:
        return x
    u = np.sort(a)[::-1]
    css = np.cumsum(u) - radius
    k = np.flatnonzero(u > css / np.arange(1, len(u) + 1))[-1]
    tau = css[k] / (k + 1.0)
    return soft_threshold(x, tau)


@dataclass(frozen=True)
class LassoProblem:
    """Empirical (sample-backed) or population (Gram-backed) penalized problem."""

    grid: Grid
    epsilon: float
    sample: RegressionSample | None = None
    gram: GramModel | None = None
    oracle: OracleSpec | None = None
    constraint_radius: float | None = None
    max_iters: int | None = None
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if (self.sample is None) == (self.gram is None):
            raise ValueError("exactly one of sample (empirical) or gram (population) is required")
        if self.gram is not None and self.oracle is None:
            raise ValueError("population mode needs the oracle")

    @property
    def is_population(self) -> bool:
        return self.gram is not None

    @classmethod
    def empirical(cls, sample: RegressionSample, grid: Grid, epsilon: float, **kw):
        return cls(grid=grid, epsilon=epsilon, sample=sample, **kw)

    @classmethod
    def population(cls, gram: GramModel, oracle: OracleSpec, epsilon: float, **kw):
        return cls(grid=gram.grid, epsilon=epsilon, gram=gram, oracle=oracle, **kw)


@dataclass
class LassoFit:
    slope: GridFunction
    intercept: float
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    epsilon: float
    objective_history: np.ndarray = field(repr=False, default=None)


def objective_empirical(lam, a: float, problem: LassoProblem) -> float:
    """(1/n) sum_i (Y_i - a - <lam, X_i>_mu)^2 + eps * ||lam||_{L1(mu)}."""
    if problem.sample is None:
        raise ValueError("objective_empirical needs an empirical problem")
    lv = lam.values if isinstance(lam, GridFunction) else np.asarray(lam, float).ravel()
    X, Y = problem.sample.X, problem.sample.Y
    if lv.shape[0] != X.shape[1]:
        raise ValueError("slope length must match the design columns")
    r = Y - a - X @ (problem.grid.weights * lv)
    return float(np.mean(r * r) + problem.epsilon * weighted_l1_norm(lv, problem.grid))


def _power_iteration_bound(matvec, n: int, iters: int = 20, safety: float = 1.05) -> float:
    """Largest-curvature estimate for the quadratic's Hessian, with a safety factor."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(1729)))
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v) or 1.0
    lam = 1.0
    for _ in range(iters):
        w = matvec(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 1.0  # zero quadratic: any step size works
        lam = nw
        v = w / nw
    return safety * lam


def _quadratic_pieces(problem: LassoProblem):
    """Return (hess_mv, lin, const, theta0) for the smooth part in theta coordinates.

    Empirical mode: smooth(theta) = (1/n)||Ytil - Xtil theta||^2
                                  = theta' A theta - 2 b'theta + c,
    with the intercept eliminated by centering.  Population mode:
    smooth(theta) = (theta - theta*)' K (theta - theta*) + sigma_xi^2.
    """
    if problem.sample is not None:
        X, Y = problem.sample.X, problem.sample.Y
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("NaN or inf in the sample data")
        n = X.shape[0]
        Xc = X - X.mean(axis=0)
        Yc = Y - Y.mean()
        A = (Xc.T @ Xc) / n
        b = (Xc.T @ Yc) / n
        c = float(Yc @ Yc) / n
        return (lambda v: A @ v), b, c, np.zeros(X.shape[1])
    gram, oracle = problem.gram, problem.oracle
    K = gram.K
    theta_star = gram.grid.weights * oracle.slope.values
    b = K @ theta_star
    c = float(theta_star @ b) + oracle.noise_sd ** 2
    return (lambda v: K @ v), b, c, np.zeros(gram.size)


def _fista(problem: LassoProblem):
    """Monotone-restart FISTA on the theta-reparameterized composite objective."""
    hess_mv, b, c, theta = _quadratic_pieces(problem)
    return _fista_core(hess_mv, b, c, theta, problem.grid, problem.epsilon,
                       problem.constraint_radius, problem.tol, problem.max_iters)


def _fista_quad(A: np.ndarray, b: np.ndarray, c: float, grid: Grid, epsilon: float,
                constraint_radius: float | None = None, tol: float = DEFAULT_TOL,
                max_iters: int | None = None, theta0: np.ndarray | None = None):
    """FISTA on a precomputed centered quadratic (for epsilon sweeps over one sample)."""
    if theta0 is None:
        theta0 = np.zeros(b.shape[0])
    return _fista_core(lambda v: A @ v, b, c, theta0.copy(), grid, epsilon,
                       constraint_radius, tol, max_iters)


def _fista_core(hess_mv, b, c, theta, grid: Grid, eps: float, radius, tol: float,
                max_iters: int | None):
    n_pts = theta.shape[0]
    max_iters = max_iters or default_max_iters(n_pts)

    L = _power_iteration_bound(hess_mv, n_pts)
    L = max(L, 1e-300)
    step = 1.0 / (2.0 * L)  # Hessian of the smooth part is 2A

    def smooth(v):
        return float(v @ hess_mv(v) - 2.0 * b @ v + c)

    def total(v):
        return smooth(v) + eps * float(np.abs(v).sum())

    def prox(v):
        out = soft_threshold(v, step * eps)
        if radius is not None:
            out = project_l1_ball(out, radius)
        return out

    mu = grid.weights

    def loop_kkt(v):
        # same residual as kkt_residual: the intercept term vanishes at the
        # closed-form a(lambda), so only the lambda-coordinate part remains
        g = mu * 2.0 * (hess_mv(v) - b)
        eff = eps + _ball_multiplier(v, g / mu, eps, radius)
        on = v != 0.0
        res = 0.0
        if on.any():
            res = float(np.max(np.abs(g[on] + eff * mu[on] * np.sign(v[on]))))
        if (~on).any():
            res = max(res, float(np.max(np.maximum(0.0, np.abs(g[~on]) - eff * mu[~on]))))
        return res

    # FISTA with gradient-scheme momentum restart; the monotone contract is
    # kept through the incumbent-best sequence (accepted iterates), which is
    # also what a non-converged solve returns.
    best = theta.copy()
    f_best = total(best)
    history = [f_best]
    y = theta.copy()
    t_mom = 1.0
    it = 0
    check_every = 10
    converged = False
    for it in range(1, max_iters + 1):
        z = prox(y - step * 2.0 * (hess_mv(y) - b))
        if float((y - z) @ (z - theta)) > 0.0:  # momentum points uphill: restart
            t_mom = 1.0
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
        y = z + ((t_mom - 1.0) / t_next) * (z - theta)
        theta, t_mom = z, t_next
        f_z = total(z)
        if f_z <= f_best:
            best, f_best = z, f_z
            history.append(f_best)
        if it % check_every == 0 or it == max_iters:
            if loop_kkt(theta) <= tol:
                converged = True
                break
    out = theta if converged else best
    return out, np.array(history), it


def _ball_multiplier(theta, g_theta, eps, radius) -> float:
    """Nonnegative multiplier for an active L1-ball constraint (0 when slack).

    With the ball binding, stationarity reads g + (eps+nu)*sign(theta) = 0 on
    the support; nu is estimated from the active coordinates by least squares
    and clamped at 0.
    """
    if radius is None:
        return 0.0
    if np.abs(theta).sum() < radius * (1.0 - 1e-9):
        return 0.0
    on = theta != 0.0
    if not on.any():
        return 0.0
    nu = float(np.mean(-g_theta[on] * np.sign(theta[on]))) - eps
    return max(nu, 0.0)


def _finish(problem: LassoProblem, theta: np.ndarray, history: np.ndarray, iters: int) -> LassoFit:
    w = problem.grid.weights
    lam = GridFunction(theta / w)
    if problem.sample is not None:
        X, Y = problem.sample.X, problem.sample.Y
        a = float(Y.mean() - X.mean(axis=0) @ theta)
        obj = objective_empirical(lam, a, problem)
    else:
        gram, oracle = problem.gram, problem.oracle
        ey = oracle.intercept + float(gram.mean @ (w * oracle.slope.values))
        a = ey - float(gram.mean @ theta)
        obj = (population_risk(gram, oracle, lam, a) + oracle.noise_sd ** 2
               + problem.epsilon * weighted_l1_norm(lam, problem.grid))
    fit = LassoFit(slope=lam, intercept=a, objective=obj, kkt_residual=np.inf,
                   iterations=iters, converged=False, epsilon=problem.epsilon,
                   objective_history=history)
    fit.kkt_residual = kkt_residual(fit, problem)
    fit.converged = fit.kkt_residual <= problem.tol
    return fit


def fit_empirical(problem: LassoProblem) -> LassoFit:
    """Solve the empirical problem; returns the best iterate with its KKT certificate."""
    if problem.sample is None:
        raise ValueError("fit_empirical needs an empirical problem")
    theta, history, iters = _fista(problem)
    return _finish(problem, theta, history, iters)


def fit_population(gram: GramModel, oracle: OracleSpec, epsilon: float,
                   constraint_radius: float | None = None,
                   max_iters: int | None = None, tol: float = DEFAULT_TOL) -> LassoFit:
    """Solve the population problem on the exact quadratic (intercept eliminated)."""
    problem = LassoProblem.population(gram, oracle, epsilon,
                                      constraint_radius=constraint_radius,
                                      max_iters=max_iters, tol=tol)
    theta, history, iters = _fista(problem)
    return _finish(problem, theta, history, iters)


def kkt_residual(fit: LassoFit, problem: LassoProblem) -> float:
    """Subdifferential residual at (slope, intercept), computed from scratch.

    With g_t the smooth-part gradient in lambda_t: on the support the residual
    is |g_t + eps*mu_t*sign(lambda_t)|, off the support max(0, |g_t| - eps*mu_t),
    plus |dF/da|.  An active L1-ball constraint contributes its multiplier
    through an effective epsilon.
    """
    lam = fit.slope.values
    mu = problem.grid.weights
    eps = problem.epsilon
    if problem.sample is not None:
        X, Y = problem.sample.X, problem.sample.Y
        r = Y - fit.intercept - X @ (mu * lam)
        g_theta = -(2.0 / X.shape[0]) * (X.T @ r)
        da = -2.0 * float(np.mean(r))
    else:
        gram, oracle = problem.gram, problem.oracle
        theta = mu * lam
        theta_star = mu * oracle.slope.values
        ey = oracle.intercept + float(gram.mean @ theta_star)
        gap = fit.intercept + float(gram.mean @ theta) - ey
        g_theta = 2.0 * (gram.K @ (theta - theta_star)) + 2.0 * gap * gram.mean
        da = 2.0 * gap
    eff = eps + _ball_multiplier(mu * lam, g_theta, eps, problem.constraint_radius)
    g = mu * g_theta  # d/d lambda_t = mu_t * d/d theta_t
    on = lam != 0.0
    res = abs(da)
    if on.any():
        res = max(res, float(np.max(np.abs(g[on] + eff * mu[on] * np.sign(lam[on])))))
    if (~on).any():
        res = max(res, float(np.max(np.maximum(0.0, np.abs(g[~on]) - eff * mu[~on]))))
    return res


def population_risk(gram: GramModel, oracle: OracleSpec, lam, a: float) -> float:
    """||f_{lam,a} - f*||^2_{L2(Pi)} computed exactly from the Gram model."""
    lv = lam.values if isinstance(lam, GridFunction) else np.asarray(lam, float).ravel()
    mu = gram.grid.weights
    dtheta = mu * (lv - oracle.slope.values)
    gap = a - oracle.intercept + float(gram.mean @ dtheta)
    return float(dtheta @ gram.K @ dtheta) + gap * gap


def penalized_approx_error(gram: GramModel, oracle: OracleSpec, epsilon: float,
                           tol: float = DEFAULT_TOL, constraint_radius=None) -> float:
    """Value of inf_{lam,a} [ ||f_{lam,a} - f*||^2 + eps*||lam||_1 ] at the population solution."""
    if epsilon == 0.0:
        return 0.0 if constraint_radius is None else _approx_err_at(
            gram, oracle, fit_population(gram, oracle, 0.0, constraint_radius=constraint_radius, tol=tol))
    fit = fit_population(gram, oracle, epsilon, tol=tol, constraint_radius=constraint_radius)
    return _approx_err_at(gram, oracle, fit)


def _approx_err_at(gram, oracle, fit) -> float:
    return population_risk(gram, oracle, fit.slope, fit.intercept) + \
        fit.epsilon * weighted_l1_norm(fit.slope, gram.grid)

"""Monte Carlo scenario harness: rate sweeps, spike separation, partitions,
stationary designs, and numerical verification of the deterministic
approximation-error inequality.

Every cell (n, epsilon, replicate) gets a counter-derived seed, so reports are
bit-reproducible and independent of scheduling.  Risk is evaluated exactly
from the Gram model; a Monte Carlo evaluator exists as a cross-check only.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .grids import (Grid, GridFunction, OracleSpec, build_uniform_grid,
                    canonical_subgradient, dominant_set, weighted_l1_norm)
from .kernels import GramModel, KernelSpec, gram_matrix, kernel_spec_from_json, kernel_spec_to_json
from .sampling import population_variance_y, sample_design, sample_response
from .solver import (LassoProblem, fit_empirical, fit_population, kkt_residual,
                     population_risk)
from .sparsity import alignment_coefficient, rkhs_norm, spike_subgradient
from .complexity import covering_profile, expected_sup_bound

__all__ = [
    "ExperimentConfig",
    "OracleConfig",
    "EpsilonRule",
    "ExperimentReport",
    "CellRow",
    "run_scenario",
    "fit_rate_slope",
    "verify_approx_theorem",
    "run_spike_separation",
    "make_oracle",
    "monte_carlo_risk",
]

log = logging.getLogger("funlasso")

SCENARIOS = ("rate_sweep", "spike_separation", "partition", "stationary_grid", "verify_approx")


@dataclass(frozen=True)
class OracleConfig:
    spikes: int = 0
    separation: float = 0.0
    magnitudes: float = 1.0
    dense: bool = False
    intercept: float = 0.0
    noise_sd: float = 0.0
    noise_kind: str = "gaussian"


@dataclass(frozen=True)
class EpsilonRule:
    kind: str = "sparse"          # fixed | sparse | slow
    value: float = 0.0            # used by `fixed`
    D: tuple = (0.05, 0.1, 0.25, 0.5, 1.0, 2.0)

    def epsilons(self, sigma_y: float, s_T: float, s_bar: float, n: int) -> list[float]:
        if self.kind == "fixed":
            return [float(self.value)]
        if self.kind == "sparse":
            return [float(d * sigma_y * s_T * math.sqrt(s_bar / n)) for d in self.D]
        if self.kind == "slow":
            return [float(d * sigma_y * s_T / math.sqrt(n)) for d in self.D]
        raise ValueError(f"unknown epsilon rule {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    kernel: KernelSpec
    n_points: int
    n_list: tuple
    epsilon_rule: EpsilonRule = EpsilonRule()
    oracle: OracleConfig = OracleConfig()
    replicates: int = 1
    seed: int = 0
    s_bar: float = 1.0
    interval: tuple = (0.0, 1.0)
    measure_kind: str = "counting"
    driver: str = "gaussian"
    separations: tuple = ()       # spike_separation sweep
    epsilons: tuple = ()          # verify_approx sweep
    n_triples: int = 100          # verify_approx candidates
    threads: int = 1
    tol: float = 1e-6             # KKT tolerance of the per-cell fits

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if len(self.n_list) == 0 or list(self.n_list) != sorted(self.n_list):
            raise ValueError("n_list must be nonempty and increasing")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")

    @classmethod
    def from_json(cls, obj: dict | str) -> "ExperimentConfig":
        if isinstance(obj, str):
            obj = json.loads(obj)
        obj = dict(obj)
        obj["kernel"] = kernel_spec_from_json(obj["kernel"])
        obj["n_list"] = tuple(obj["n_list"])
        if "epsilon_rule" in obj:
            er = dict(obj["epsilon_rule"])
            if "D" in er:
                er["D"] = tuple(er["D"])
            obj["epsilon_rule"] = EpsilonRule(**er)
        if "oracle" in obj:
            obj["oracle"] = OracleConfig(**obj["oracle"])
        for key in ("interval", "separations", "epsilons"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    def to_json(self) -> dict:
        out = asdict(self)
        out["kernel"] = kernel_spec_to_json(self.kernel)
        return out


@dataclass
class CellRow:
    scenario: str
    n: int
    epsilon: float
    replicate: int
    risk: float
    l1: float
    leakage: float
    iters: int
    converged: bool


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list
    summary: dict = field(default_factory=dict)

    def rows_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["scenario", "n", "epsilon", "replicate", "risk", "l1",
                         "leakage", "iters", "converged"])
            for r in self.rows:
                wr.writerow([r.scenario, r.n, repr(r.epsilon), r.replicate, repr(r.risk),
                             repr(r.l1), repr(r.leakage), r.iters, int(r.converged)])


def make_oracle(grid: Grid, cfg: OracleConfig) -> OracleSpec:
    """Spike oracle (alternating signs, `spikes` spikes `separation` apart,
    centered in the interval) or a dense oracle with entries magnitude/N."""
    n = grid.size
    lam = np.zeros(n)
    if cfg.dense:
        lam[:] = np.atleast_1d(cfg.magnitudes)[0] / n
    elif cfg.spikes > 0:
        t = grid.coords
        span = (cfg.spikes - 1) * cfg.separation
        if span > t[-1] - t[0] + 1e-12:
            raise ValueError("spikes do not fit in the interval at this separation")
        t0 = t[0] + 0.5 * ((t[-1] - t[0]) - span)
        mags = np.broadcast_to(np.atleast_1d(cfg.magnitudes), (cfg.spikes,))
        for k in range(cfg.spikes):
            idx = int(np.argmin(np.abs(t - (t0 + k * cfg.separation))))
            lam[idx] = mags[k] * (1.0 if k % 2 == 0 else -1.0)
    return OracleSpec(slope=GridFunction(lam), intercept=cfg.intercept,
                      noise_sd=cfg.noise_sd, noise_kind=cfg.noise_kind)


def _cell_seed(master: int, *tags: int) -> int:
    ss = np.random.SeedSequence((int(master),) + tuple(int(t) for t in tags))
    return int(ss.generate_state(1, np.uint64)[0])


def _empirical_pieces(X: np.ndarray, Y: np.ndarray):
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean()
    A = (Xc.T @ Xc) / n
    b = (Xc.T @ Yc) / n
    c = float(Yc @ Yc) / n
    return A, b, c


def _run_cells(config: ExperimentConfig, gram: GramModel, oracle: OracleSpec) -> list[CellRow]:
    """Simulate/fit/evaluate over the (n, epsilon, replicate) lattice."""
    from . import solver as _solver

    sigma_y = math.sqrt(population_variance_y(gram, oracle))
    s_T = expected_sup_bound(gram).s_T
    grid = gram.grid
    off = np.setdiff1d(np.arange(grid.size),
                       dominant_set(canonical_subgradient(oracle.slope)))

    def one_cell(args):
        i_n, n, rep = args
        seed = _cell_seed(config.seed, i_n, rep)
        X = sample_design(gram, n, driver=config.driver, seed=seed)
        Y = sample_response(X, grid, oracle, seed=seed)
        A, b, c = _empirical_pieces(X, Y)
        epsilons = config.epsilon_rule.epsilons(sigma_y, s_T, config.s_bar, n)
        # fit the path from sparse to dense, warm-starting each solve
        order = sorted(range(len(epsilons)), key=lambda k: -epsilons[k])
        slots = [None] * len(epsilons)
        theta = np.zeros(grid.size)
        for k in order:
            eps = epsilons[k]
            theta, history, iters = _solver._fista_quad(A, b, c, grid, eps,
                                                        tol=config.tol, theta0=theta)
            lam = GridFunction(theta / grid.weights)
            a_hat = float(Y.mean() - X.mean(axis=0) @ theta)
            prob = LassoProblem(grid=grid, epsilon=eps, sample=_SampleView(X, Y),
                                tol=config.tol)
            fit = _solver.LassoFit(slope=lam, intercept=a_hat, objective=history[-1],
                                   kkt_residual=np.inf, iterations=iters, converged=False,
                                   epsilon=eps, objective_history=history)
            fit.kkt_residual = kkt_residual(fit, prob)
            fit.converged = fit.kkt_residual <= prob.tol
            risk = population_risk(gram, oracle, lam, a_hat)
            leak = float(np.sum(grid.weights[off] * np.abs(lam.values[off]))) if off.size else 0.0
            slots[k] = CellRow(scenario=config.scenario, n=n, epsilon=eps, replicate=rep,
                               risk=risk, l1=weighted_l1_norm(lam, grid), leakage=leak,
                               iters=iters, converged=fit.converged)
        return slots

    cells = [(i_n, n, rep) for i_n, n in enumerate(config.n_list)
             for rep in range(config.replicates)]
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            chunks = list(pool.map(one_cell, cells))
    else:
        chunks = [one_cell(cell) for cell in cells]
    return [row for chunk in chunks for row in chunk]


class _SampleView:
    """Duck-typed minimal sample (X, Y) for problems built inside the harness."""

    def __init__(self, X, Y):
        self.X = X
        self.Y = Y


def fit_rate_slope(rows_or_pairs) -> tuple[float, float]:
    """Least-squares slope of log median-risk vs log n, with jackknife stderr."""
    if hasattr(rows_or_pairs, "__len__") and rows_or_pairs and isinstance(rows_or_pairs[0], CellRow):
        by_n = {}
        for r in rows_or_pairs:
            by_n.setdefault(r.n, []).append(r.risk)
        pairs = sorted((n, float(np.median(v))) for n, v in by_n.items())
    else:
        pairs = sorted((int(n), float(r)) for n, r in rows_or_pairs)
    if len(pairs) < 3:
        raise ValueError("need at least 3 n-values to fit a rate slope")
    x = np.log([p[0] for p in pairs])
    y = np.log([max(p[1], 1e-300) for p in pairs])

    def ols(xs, ys):
        xm, ym = xs.mean(), ys.mean()
        return float(np.sum((xs - xm) * (ys - ym)) / np.sum((xs - xm) ** 2))

    slope = ols(x, y)
    m = len(pairs)
    jack = np.array([ols(np.delete(x, i), np.delete(y, i)) for i in range(m)])
    stderr = math.sqrt((m - 1) / m * float(np.sum((jack - jack.mean()) ** 2)))
    return slope, stderr


def monte_carlo_risk(gram: GramModel, oracle: OracleSpec, lam, a: float,
                     n_draws: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """MC estimate of ||f_{lam,a} - f*||^2 from fresh design draws; (mean, stderr)."""
    X = sample_design(gram, n_draws, driver="gaussian", seed=seed)
    lv = lam.values if isinstance(lam, GridFunction) else np.asarray(lam, float).ravel()
    w = gram.grid.weights
    diff = (a - oracle.intercept) + X @ (w * (lv - oracle.slope.values))
    sq = diff * diff
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n_draws))


def verify_approx_theorem(gram: GramModel, oracle: OracleSpec, epsilon: float,
                          candidate_triples, b: float = 16.0, tol: float = 1e-8,
                          alignment_values=None) -> list[dict]:
    """Check, per candidate (lam, w, a), the approximation-error inequality

        ||f_pop - f*||^2 <= ||f_{lam,a} - f*||^2 + (1/4) eps^2 alignment(w)^2

    and the off-dominant-set leakage bound of the population solution,
    int_{off T_w} |lam_pop| dmu <= (4/eps) * RHS.  Returns margins per triple.
    alignment_values may carry precomputed alignment coefficients (they depend
    on w only, so epsilon sweeps can reuse them).
    """
    if gram.size > 64:
        raise ValueError("the verifier is meant for small grids (N <= 64)")
    fit = fit_population(gram, oracle, epsilon, tol=tol)
    lhs = population_risk(gram, oracle, fit.slope, fit.intercept)
    grid = gram.grid
    out = []
    for i, (lam, w, a) in enumerate(candidate_triples):
        if alignment_values is not None:
            align = alignment_values[i]
        else:
            align = alignment_coefficient(gram, w, b=b, tol=tol)
        rhs = population_risk(gram, oracle, lam, a) + 0.25 * epsilon ** 2 * align.value ** 2
        dom = dominant_set(w)
        off = np.setdiff1d(np.arange(grid.size), dom)
        leak = float(np.sum(grid.weights[off] * np.abs(fit.slope.values[off])))
        leak_bound = (4.0 / epsilon) * rhs if epsilon > 0 else math.inf
        out.append({
            "epsilon": epsilon,
            "lhs": lhs,
            "rhs": rhs,
            "margin": rhs - lhs,
            "leakage": leak,
            "leakage_bound": leak_bound,
            "leakage_margin": leak_bound - leak,
            "alignment": align.value,
            "ok": bool(rhs - lhs >= -1e-10 and leak_bound - leak >= -1e-10),
        })
    return out


def _random_triples(gram: GramModel, rng: np.random.Generator, count: int):
    """Random sparse slopes with valid subgradients and random intercepts."""
    n = gram.size
    triples = []
    for _ in range(count):
        k = int(rng.integers(1, max(2, n // 4)))
        lam = np.zeros(n)
        idx = rng.choice(n, size=k, replace=False)
        lam[idx] = rng.normal(0.0, 1.0, size=k)
        fill = rng.uniform(-1.0, 1.0, size=n)
        w = canonical_subgradient(lam, fill=fill)
        a = float(rng.normal(0.0, 1.0))
        triples.append((GridFunction(lam), w, a))
    return triples


def run_spike_separation(config: ExperimentConfig) -> ExperimentReport:
    """Sweep the spike separation, recording subgradient norms, alignment, and risks."""
    grid = build_uniform_grid(config.n_points, config.interval, config.measure_kind)
    gram = gram_matrix(config.kernel, grid)
    seps = config.separations or (1 / 64, 1 / 32, 1 / 16, 1 / 8, 1 / 4)
    rows, table = [], []
    for i_s, sep in enumerate(seps):
        ocfg = OracleConfig(spikes=config.oracle.spikes, separation=float(sep),
                            magnitudes=config.oracle.magnitudes,
                            intercept=config.oracle.intercept,
                            noise_sd=config.oracle.noise_sd,
                            noise_kind=config.oracle.noise_kind)
        oracle = make_oracle(grid, ocfg)
        w_interp = spike_subgradient(grid, oracle.slope, style="interpolating")
        w_canon = canonical_subgradient(oracle.slope)
        norm_interp = rkhs_norm(gram, w_interp)
        norm_canon = rkhs_norm(gram, w_canon)
        align = alignment_coefficient(gram, w_interp, b=16.0, tol=1e-6).value \
            if grid.size <= 256 else float("nan")
        sub_cfg = _with(config, scenario="spike_separation", seed=_cell_seed(config.seed, i_s))
        sub_rows = _run_cells(sub_cfg, gram, oracle)
        rows.extend(sub_rows)
        table.append({"separation": float(sep), "norm_interp": norm_interp,
                      "norm_canonical": norm_canon, "alignment": align,
                      "median_risk": float(np.median([r.risk for r in sub_rows]))})
    report = ExperimentReport(config=config, rows=rows)
    report.summary["separation_table"] = table
    return report


def _with(config: ExperimentConfig, **kw) -> ExperimentConfig:
    data = {f: getattr(config, f) for f in config.__dataclass_fields__}
    data.update(kw)
    return ExperimentConfig(**data)


def run_scenario(config: ExperimentConfig) -> ExperimentReport:
    """Dispatch a configured scenario and aggregate its report."""
    if config.scenario == "spike_separation":
        return run_spike_separation(config)

    grid = build_uniform_grid(config.n_points, config.interval, config.measure_kind)
    gram = gram_matrix(config.kernel, grid)

    if config.scenario == "verify_approx":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((config.seed, 99))))
        triples = _random_triples(gram, rng, config.n_triples)
        oracle = make_oracle(grid, config.oracle)
        rows, margins = [], []
        epsilons = config.epsilons or (0.01, 0.1, 1.0)
        for eps in epsilons:
            results = verify_approx_theorem(gram, oracle, float(eps), triples)
            fit = fit_population(gram, oracle, float(eps))
            for i, res in enumerate(results):
                margins.append(res)
                rows.append(CellRow(scenario=config.scenario, n=0, epsilon=float(eps),
                                    replicate=i, risk=res["lhs"],
                                    l1=weighted_l1_norm(fit.slope, grid),
                                    leakage=res["leakage"], iters=fit.iterations,
                                    converged=bool(res["ok"])))
        report = ExperimentReport(config=config, rows=rows)
        report.summary["margins"] = margins
        report.summary["all_ok"] = bool(all(m["ok"] for m in margins))
        return report

    oracle = make_oracle(grid, config.oracle)
    rows = _run_cells(config, gram, oracle)
    report = ExperimentReport(config=config, rows=rows)
    by_eps_index = {}
    n_eps = len(config.epsilon_rule.epsilons(1.0, 1.0, config.s_bar, config.n_list[0]))
    for j, row in enumerate(rows):
        by_eps_index.setdefault(j % n_eps, []).append(row)
    slopes = {}
    if len(config.n_list) >= 3:
        for k, sub in by_eps_index.items():
            slope, stderr = fit_rate_slope(sub)
            label = f"D={config.epsilon_rule.D[k]}" if config.epsilon_rule.kind != "fixed" else "fixed"
            slopes[label] = {"slope": slope, "stderr": stderr,
                             "median_final_risk": float(np.median(
                                 [r.risk for r in sub if r.n == config.n_list[-1]]))}
        report.summary["slopes"] = slopes
        best = min(slopes.items(), key=lambda kv: kv[1]["median_final_risk"])
        report.summary["best_on_oracle"] = best[0]
    sigma_y = math.sqrt(population_variance_y(gram, oracle))
    report.summary["sigma_y"] = sigma_y
    report.summary["s_T"] = expected_sup_bound(gram).s_T
    return report

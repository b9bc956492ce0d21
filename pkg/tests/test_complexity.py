import math

import numpy as np
import pytest

from funlasso.grids import Grid, build_uniform_grid, canonical_subgradient
from funlasso.kernels import (BlockKernel, BrownianReleased, GramModel, OrnsteinUhlenbeck,
                              StationarySpectral, _cholesky_with_jitter, dx_matrix,
                              gram_matrix)
from funlasso.sampling import sample_design
from funlasso.complexity import (approximate_dimension, covering_numbers, covering_profile,
                                 expected_sup_bound, gamma2_dudley, kolmogorov_width,
                                 local_dimensions, rip_beta_bound, rip_constant)

DUDLEY = 1.0 / (2.0 * math.sqrt(2.0) - 1.0)


def model_from_matrix(K: np.ndarray, weights=None) -> GramModel:
    n = K.shape[0]
    grid = Grid(np.arange(n, dtype=float), np.ones(n) if weights is None else weights)
    L, jit = _cholesky_with_jitter(K)
    return GramModel(grid, K, None, L, jit)


def rank_deficient_block(n: int, rank: int, rng) -> np.ndarray:
    V = rng.normal(size=(n, rank))
    A = V @ V.T
    d = np.sqrt(np.diag(A))
    return A / np.outer(d, d)  # unit variances, exact rank


@pytest.fixture(scope="module")
def bm32():
    return gram_matrix(BrownianReleased(), build_uniform_grid(32, (0, 1), "counting"))


def test_covering_large_eps_is_one(bm32):
    D = dx_matrix(bm32)
    diam = float(D.max())
    assert covering_numbers(bm32, [diam, diam * 2])[0][1] == 1


def test_covering_small_eps_is_n(bm32):
    assert covering_numbers(bm32, [0.0])[0][1] == 32


def test_covering_exact_leq_greedy():
    g = build_uniform_grid(10, (0, 1), "counting")
    m = gram_matrix(OrnsteinUhlenbeck(), g)
    diam = float(dx_matrix(m).max())
    for eps in (0.2 * diam, 0.5 * diam, 0.9 * diam):
        greedy = covering_numbers(m, [eps])[0][1]
        exact = covering_numbers(m, [eps], exact=True)[0][1]
        assert exact <= greedy


def test_covering_bm_entropy_slope():
    # d_X = sqrt|s-t| on released-BM grids: N(eps) ~ eps^{-2}
    g = build_uniform_grid(1024, (0, 1), "counting")
    m = gram_matrix(BrownianReleased(), g)
    eps = np.geomspace(0.05, 0.5, 12)
    counts = np.array([c for _, c in covering_numbers(m, eps)], dtype=float)
    slope = np.polyfit(np.log(eps), np.log(counts), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.3)


def test_gamma2_single_point():
    g = build_uniform_grid(1, (0, 1))
    m = GramModel(g, np.array([[1.0]]), None, np.array([[1.0]]), 0.0)
    profile = covering_profile(m)
    assert gamma2_dudley(profile, 1.0) == 0.0


def test_gamma2_crude_log_bound(bm32):
    profile = covering_profile(bm32)
    for delta in (0.1, 0.5, 1.0):
        assert gamma2_dudley(profile, delta) <= DUDLEY * delta * math.sqrt(math.log(32)) + 1e-12


def test_gamma2_polynomial_covering_slope():
    # synthetic table N(eps) = (A/eps)^V: gamma2(delta) ~ delta sqrt(V log(A/delta))
    A, V = 4.0, 2.0
    eps = np.geomspace(1e-4, A, 400)
    table = [(float(e), int(np.ceil((A / e) ** V))) for e in eps] + [(0.0, 10 ** 9)]
    deltas = np.geomspace(0.01, 1.0, 8)
    vals = np.array([gamma2_dudley(table, float(d)) for d in deltas])
    model = deltas * np.sqrt(V * np.log(4 * A / deltas))
    ratio = vals / model
    assert ratio.max() / ratio.min() < 1.6  # same growth law up to a constant


def test_gamma2_monotone_in_delta(bm32):
    profile = covering_profile(bm32)
    vals = [gamma2_dudley(profile, d) for d in np.linspace(0.05, 1.4, 10)]
    assert all(a <= b + 1e-12 for a, b in zip(vals[:-1], vals[1:]))


def test_gamma2_gap_rejected():
    with pytest.raises(ValueError):
        gamma2_dudley([(0.5, 3), (1.0, 1)], 1.0)  # no saturation row near 0


def test_sup_bound_deterministic_process():
    g = build_uniform_grid(4, (0, 1), "counting")
    m = GramModel(g, np.zeros((4, 4)), None, np.zeros((4, 4)), 0.0)
    assert expected_sup_bound(m).s_T == 0.0


def test_sup_bound_identity():
    m = model_from_matrix(np.eye(6))
    est = expected_sup_bound(m, L_const=1.0)
    profile = covering_profile(m)
    assert est.s_T == pytest.approx(1.0 + gamma2_dudley(profile, math.sqrt(2)), abs=1e-12)


def test_sup_bound_dominates_monte_carlo(bm32):
    est = expected_sup_bound(bm32, L_const=1.0)
    X = sample_design(bm32, 10_000, seed=100)
    sup = np.abs(X - bm32.mean).max(axis=1)
    mc, se = sup.mean(), sup.std(ddof=1) / 100.0
    assert mc + 4 * se <= est.s_T


def test_width_monotone_and_rank(bm32):
    vals = [kolmogorov_width(bm32, None, d) for d in range(0, 33)]
    assert all(a >= b - 1e-12 for a, b in zip(vals[:-1], vals[1:]))
    assert vals[32] <= 1e-8


def test_width_identity_is_one():
    m = model_from_matrix(np.eye(4))
    for d in (1, 2, 3):
        assert kolmogorov_width(m, None, d) == pytest.approx(1.0, abs=1e-12)
    assert kolmogorov_width(m, None, 4) == 0.0


def test_width_d0_is_max_sd(bm32):
    assert kolmogorov_width(bm32, None, 0) == pytest.approx(math.sqrt(2.0), abs=1e-12)
    assert kolmogorov_width(bm32, [0, 1], 0) < math.sqrt(2.0)


def test_width_restrict_validation(bm32):
    with pytest.raises(ValueError):
        kolmogorov_width(bm32, [], 1)


def test_width_stationary_decay_smoke():
    g = build_uniform_grid(128, (0, 16), "counting")
    m = gram_matrix(StationarySpectral(p=1.5, amplitude=1.0, dim=1), g)
    ds = np.array([8, 16, 32])
    w = np.array([kolmogorov_width(m, None, int(d)) for d in ds])
    slope = np.polyfit(np.log(ds), np.log(w), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.35)


def test_approximate_dimension_zero_slope(bm32):
    w = canonical_subgradient(np.zeros(32), fill=None).values
    assert approximate_dimension(w, np.zeros(32), 1.0, 100, bm32) == 0


def test_approximate_dimension_deterministic_restriction():
    K = np.zeros((4, 4))
    K[2:, 2:] = np.eye(2)
    m = model_from_matrix(K)
    lam = np.array([1.0, 1.0, 0.0, 0.0])
    w = canonical_subgradient(lam).values
    assert approximate_dimension(w, lam, 1.0, 50, m) == 0


def test_approximate_dimension_scan_scalings(bm32):
    lam = np.zeros(32)
    lam[[4, 12, 20]] = 1.0
    w = canonical_subgradient(lam).values
    d_small_n = approximate_dimension(w, lam, 1.0, 16, bm32)
    d_large_n = approximate_dimension(w, lam, 1.0, 4096, bm32)
    assert d_large_n <= d_small_n
    d_small_l1 = approximate_dimension(w, 0.2 * lam, 1.0, 256, bm32)
    d_large_l1 = approximate_dimension(w, 5.0 * lam, 1.0, 256, bm32)
    assert d_small_l1 <= d_large_l1


def test_local_dimensions_single_block_matches_global(bm32):
    lam = np.zeros(32)
    lam[[4, 12, 20]] = 1.0
    w = canonical_subgradient(lam).values
    glob = approximate_dimension(w, lam, 1.0, 64, bm32)
    loc = local_dimensions(w, lam, 1.0, 64, bm32, [(0, 32)])
    assert loc == [glob]


def test_local_dimensions_zero_slope(bm32):
    loc = local_dimensions(np.zeros(32), np.zeros(32), 1.0, 64, bm32, [(0, 16), (16, 32)])
    assert loc == [0, 0]


def test_local_dimensions_capped_by_block_rank():
    rng = np.random.default_rng(21)
    ranks = [1, 2, 1]
    blocks = [rank_deficient_block(4, r, rng) for r in ranks]
    K = np.zeros((12, 12))
    for j, B in enumerate(blocks):
        K[4 * j:4 * (j + 1), 4 * j:4 * (j + 1)] = B
    m = model_from_matrix(K)
    lam = np.zeros(12)
    lam[[0, 5, 9]] = [2.0, -1.0, 1.5]
    w = canonical_subgradient(lam, fill=0.6 * np.ones(12)).values
    loc = local_dimensions(w, lam, 0.05, 10_000, m, [(0, 4), (4, 8), (8, 12)])
    assert all(dj <= r for dj, r in zip(loc, ranks))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_prop_local_dims_dominate_global(seed):
    # block-diagonal designs: global approximate dimension <= sum of local ones
    rng = np.random.default_rng(seed)
    sizes = [4, 4, 4]
    ranks = [int(rng.integers(1, 4)) for _ in sizes]
    K = np.zeros((12, 12))
    at = 0
    for n_b, r in zip(sizes, ranks):
        K[at:at + n_b, at:at + n_b] = rank_deficient_block(n_b, r, rng)
        at += n_b
    m = model_from_matrix(K)
    lam = np.zeros(12)
    lam[rng.choice(12, size=4, replace=False)] = rng.normal(size=4)
    w = canonical_subgradient(lam, fill=rng.uniform(0.5, 0.9, 12)).values
    sigma_y = float(rng.uniform(0.2, 1.0))
    n = int(rng.integers(64, 8192))
    glob = approximate_dimension(w, lam, sigma_y, n, m)
    loc = local_dimensions(w, lam, sigma_y, n, m, [(0, 4), (4, 8), (8, 12)])
    assert glob <= sum(loc)


def test_rip_uncorrelated_blocks_zero():
    g = build_uniform_grid(9, (0, 1), "counting")
    spec = BlockKernel(partition=((0, 3), (3, 6), (6, 9)), inner=(OrnsteinUhlenbeck(),),
                       cross_scale=0.0)
    m = gram_matrix(spec, g)
    for d in (1, 2, 3):
        est = rip_constant(m, [(0, 3), (3, 6), (6, 9)], d, search_budget=100, seed=0)
        assert est.delta == 0.0


def test_rip_two_correlated_singletons():
    r = 0.35
    K = np.array([[1.0, r], [r, 1.0]])
    m = model_from_matrix(K)
    est = rip_constant(m, [(0, 1), (1, 2)], 2)
    assert est.exact
    assert est.delta == pytest.approx(r, abs=1e-12)


def test_rip_d1_is_zero():
    K = np.array([[1.0, 0.9], [0.9, 1.0]])
    m = model_from_matrix(K)
    assert rip_constant(m, [(0, 1), (1, 2)], 1).delta == 0.0


def test_rip_singleton_exact_max_over_subsets():
    rng = np.random.default_rng(31)
    A = rng.normal(size=(6, 6))
    K = A @ A.T
    d = np.sqrt(np.diag(K))
    R = K / np.outer(d, d)
    m = model_from_matrix(R)
    est = rip_constant(m, [(i, i + 1) for i in range(6)], 2)
    # oracle: max over pairs of |corr|
    best = max(abs(R[i, j]) for i in range(6) for j in range(i + 1, 6))
    assert est.delta == pytest.approx(best, abs=1e-12)


def test_rip_general_blocks_estimates_top_correlation():
    g = build_uniform_grid(4, (0, 1), "counting")
    spec = BlockKernel(partition=((0, 2), (2, 4)), inner=(OrnsteinUhlenbeck(),),
                       cross_scale=0.4)
    m = gram_matrix(spec, g)
    K = m.K
    # oracle: largest canonical correlation between the two blocks
    import scipy.linalg as sla
    K11, K22, K12 = K[:2, :2], K[2:, 2:], K[:2, 2:]
    W = sla.sqrtm(np.linalg.inv(K11)) @ K12 @ sla.sqrtm(np.linalg.inv(K22))
    true = float(np.linalg.svd(W, compute_uv=False)[0])
    est = rip_constant(m, [(0, 2), (2, 4)], 2, search_budget=400, seed=3)
    assert not est.exact
    assert est.delta <= true + 1e-9   # certified lower bound
    assert est.delta >= 0.9 * true    # and the search actually finds it


def test_rip_validation(bm32):
    with pytest.raises(ValueError):
        rip_constant(bm32, [(0, 16), (16, 32)], 3)


def test_beta_bound_formula_values():
    assert rip_beta_bound(0.0, 0.0, 1.0) == 1.0
    assert rip_beta_bound(0.1, 0.1, 1.0) == pytest.approx(1.1 / 0.71, rel=1e-12)
    gamma = 1.0
    at_boundary = rip_beta_bound(1 / (2 + gamma), 1 / (2 + gamma), gamma)
    assert math.isfinite(at_boundary) and at_boundary > 0
    assert rip_beta_bound(0.5, 0.3, 1.0) == math.inf
    with pytest.raises(ValueError):
        rip_beta_bound(1.2, 0.1, 1.0)


def test_beta_bound_monotone_in_deltas():
    vals = [rip_beta_bound(d, d, 0.5) for d in (0.0, 0.05, 0.1, 0.2)]
    assert all(v >= 1.0 for v in vals)
    assert all(a <= b for a, b in zip(vals[:-1], vals[1:]))

import numpy as np
import pytest

from funlasso.grids import GridFunction, OracleSpec, build_uniform_grid
from funlasso.kernels import BrownianReleased, OrnsteinUhlenbeck, gram_matrix
from funlasso.sampling import (RegressionSample, load_sample_binary, load_sample_csv,
                               population_variance_y, sample_design, sample_response,
                               save_sample_binary, save_sample_csv, simulate)


@pytest.fixture(scope="module")
def bm8():
    g = build_uniform_grid(8, (0, 1), "counting")
    return gram_matrix(BrownianReleased(), g)


def test_determinism_bit_exact(bm8):
    a = sample_design(bm8, 16, driver="gaussian", seed=42)
    b = sample_design(bm8, 16, driver="gaussian", seed=42)
    assert np.array_equal(a, b)
    c = sample_design(bm8, 16, driver="gaussian", seed=43)
    assert not np.array_equal(a, c)


def test_row_seeds_are_schedule_independent(bm8):
    full = sample_design(bm8, 10, seed=5)
    # drawing a larger batch must reproduce the smaller one row-for-row
    bigger = sample_design(bm8, 14, seed=5)
    assert np.array_equal(bigger[:10], full)


def test_rademacher_single_point():
    g = build_uniform_grid(1, (0, 1), "counting")
    m = gram_matrix(BrownianReleased(), g)
    X = sample_design(m, 64, driver="rademacher", seed=1)
    root = m.chol[0, 0]
    assert set(np.round(X.ravel(), 12)) <= {round(root, 12), round(-root, 12)}


def test_empirical_covariance_converges(bm8):
    n = 10_000
    X = sample_design(bm8, n, seed=123)
    emp = np.cov(X, rowvar=False, bias=True)
    err = np.linalg.norm(emp - bm8.K)
    assert err <= 5.0 / np.sqrt(n) * np.linalg.norm(bm8.K)


def test_column_means_clt(bm8):
    n = 10_000
    X = sample_design(bm8, n, seed=321)
    bound = 4.0 * np.sqrt(np.diag(bm8.K) / n)
    assert np.all(np.abs(X.mean(axis=0)) <= bound)


def test_response_noiseless_zero_slope(bm8):
    X = sample_design(bm8, 12, seed=9)
    oracle = OracleSpec(slope=GridFunction(np.zeros(8)), intercept=2.5, noise_sd=0.0)
    Y = sample_response(X, bm8.grid, oracle, seed=9)
    np.testing.assert_array_equal(Y, np.full(12, 2.5))


def test_response_single_spike_linearity(bm8):
    X = sample_design(bm8, 12, seed=10)
    lam = np.zeros(8)
    lam[3] = 2.0
    oracle = OracleSpec(slope=GridFunction(lam), intercept=1.0, noise_sd=0.0)
    Y = sample_response(X, bm8.grid, oracle, seed=10)
    np.testing.assert_allclose(Y - 1.0, bm8.grid.weights[3] * 2.0 * X[:, 3], atol=1e-12)


def test_variance_decomposition(bm8):
    lam = np.array([0.5, 0, 0, -1.0, 0, 0, 0.25, 0])
    oracle = OracleSpec(slope=GridFunction(lam), intercept=0.3, noise_sd=0.7)
    s = simulate(bm8, oracle, 10_000, seed=77)
    target = population_variance_y(bm8, oracle)
    assert np.var(s.Y) == pytest.approx(target, rel=0.10)


def test_scaled_rademacher_noise(bm8):
    lam = np.zeros(8)
    oracle = OracleSpec(slope=GridFunction(lam), intercept=0.0, noise_sd=0.5,
                        noise_kind="scaled-rademacher")
    Y = sample_response(np.zeros((40, 8)), bm8.grid, oracle, seed=3)
    assert set(np.round(Y, 12)) == {0.5, -0.5}


def test_noise_independent_of_driver_reuse(bm8):
    # same master seed: noise is drawn from its own stream, not the design's
    lam = np.zeros(8)
    oracle = OracleSpec(slope=GridFunction(lam), intercept=0.0, noise_sd=1.0)
    X = sample_design(bm8, 2000, seed=55)
    Y = sample_response(X, bm8.grid, oracle, seed=55)
    corr = np.corrcoef(X[:, 0], Y)[0, 1]
    assert abs(corr) < 0.1


def test_binary_roundtrip(tmp_path, bm8):
    oracle = OracleSpec(slope=GridFunction(np.ones(8)), intercept=0.1, noise_sd=0.2)
    s = simulate(bm8, oracle, 25, seed=8)
    path = tmp_path / "sample.bin"
    save_sample_binary(s, path)
    raw = path.read_bytes()
    assert raw[:5] == b"FLXS1"
    assert int.from_bytes(raw[5:13], "little") == 25
    assert int.from_bytes(raw[13:21], "little") == 8
    s2 = load_sample_binary(path)
    assert np.array_equal(s2.X, s.X)
    assert np.array_equal(s2.Y, s.Y)


def test_csv_roundtrip(tmp_path, bm8):
    oracle = OracleSpec(slope=GridFunction(np.ones(8)), intercept=0.0, noise_sd=0.0)
    s = simulate(bm8, oracle, 6, seed=8)
    xp, yp = tmp_path / "s.x.csv", tmp_path / "s.y.csv"
    save_sample_csv(s, xp, yp)
    assert xp.read_text().splitlines()[0] == "replicate,i,t_index,x"
    assert yp.read_text().splitlines()[0] == "replicate,i,y"
    s2 = load_sample_csv(xp, yp)
    np.testing.assert_allclose(s2.X, s.X, rtol=0, atol=0)
    np.testing.assert_allclose(s2.Y, s.Y, rtol=0, atol=0)


def test_sample_shape_validation():
    with pytest.raises(ValueError):
        RegressionSample(X=np.zeros((3, 2)), Y=np.zeros(4), seed=0)

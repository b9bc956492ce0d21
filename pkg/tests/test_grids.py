import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from funlasso.grids import (Grid, GridFunction, ConeSpec, OracleSpec, build_uniform_grid,
                            canonical_subgradient, dominant_set, grid_from_csv,
                            grid_to_csv, pairing, support, weighted_l1_norm)


def test_uniform_grid_counting():
    g = build_uniform_grid(3, (0, 1), "counting")
    np.testing.assert_allclose(g.coords, [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(g.weights, [1.0, 1.0, 1.0])


def test_uniform_grid_single_cell():
    g = build_uniform_grid(1, (0, 1), "lebesgue")
    np.testing.assert_allclose(g.coords, [0.0])
    np.testing.assert_allclose(g.weights, [1.0])


def test_uniform_grid_lebesgue_weights():
    g = build_uniform_grid(4, (0, 2), "lebesgue")
    np.testing.assert_allclose(g.weights, 0.5)


def test_grid_validation():
    with pytest.raises(ValueError):
        build_uniform_grid(0, (0, 1))
    with pytest.raises(ValueError):
        build_uniform_grid(3, (1, 1))
    with pytest.raises(ValueError):
        Grid(np.array([0.0, 0.5, 0.5]), np.ones(3))
    with pytest.raises(ValueError):
        Grid(np.array([0.0, 0.5, 1.0]), np.array([1.0, -1.0, 1.0]))


def test_weighted_l1_norm_basics():
    g = build_uniform_grid(3, (0, 1), "counting")
    assert weighted_l1_norm([1, -1, 1], g) == 3.0
    assert weighted_l1_norm([0, 0, 0], g) == 0.0
    g2 = Grid(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    assert weighted_l1_norm([2, 0], g2) == 1.0


def test_weighted_l1_size_mismatch():
    g = build_uniform_grid(3, (0, 1))
    with pytest.raises(ValueError):
        weighted_l1_norm([1.0, 2.0], g)


def test_pairing_values():
    g = build_uniform_grid(2, (0, 1), "counting")
    assert pairing([1, 1], [1, 1], g) == 2.0
    assert pairing([1, 0], [0, 1], g) == 0.0
    g2 = Grid(np.array([0.0, 1.0]), np.array([1.0, 0.5]))
    assert pairing([1, 2], [3, 4], g2) == 7.0


def test_canonical_subgradient_sign_pattern():
    w = canonical_subgradient([0.0, 2.0, -3.0])
    np.testing.assert_array_equal(w.values, [0.0, 1.0, -1.0])
    w0 = canonical_subgradient([0.0, 0.0])
    np.testing.assert_array_equal(w0.values, [0.0, 0.0])
    w2 = canonical_subgradient([1.0, 0.0, 1.0], fill=[0.0, 0.4, 0.0])
    np.testing.assert_array_equal(w2.values, [1.0, 0.4, 1.0])
    with pytest.raises(ValueError):
        canonical_subgradient([1.0, 0.0], fill=[0.0, 1.5])


def test_dominant_set_threshold():
    np.testing.assert_array_equal(dominant_set([1.0, 0.5, 0.49, -1.0]), [0, 1, 3])
    assert dominant_set([0.0, 0.0]).size == 0
    np.testing.assert_array_equal(dominant_set([-0.5]), [0])
    with pytest.raises(ValueError):
        dominant_set([1.2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12),
       st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12),
       st.floats(-100, 100))
def test_l1_norm_triangle_and_homogeneity(a, b, scale):
    n = min(len(a), len(b))
    a, b = np.array(a[:n]), np.array(b[:n])
    g = build_uniform_grid(n, (0, 1), "lebesgue") if n > 1 else build_uniform_grid(1)
    na, nb, nab = weighted_l1_norm(a, g), weighted_l1_norm(b, g), weighted_l1_norm(a + b, g)
    assert nab <= na + nb + 1e-9 * (1 + na + nb)
    ns = weighted_l1_norm(scale * a, g)
    assert ns == pytest.approx(abs(scale) * na, rel=1e-12, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=10),
       st.lists(st.floats(-1, 1), min_size=1, max_size=10))
def test_subgradient_pairing_identity(lam, fill):
    n = min(len(lam), len(fill))
    lam, fill = np.array(lam[:n]), np.array(fill[:n])
    g = build_uniform_grid(n, (0, 2)) if n > 1 else build_uniform_grid(1)
    w = canonical_subgradient(lam, fill=fill)
    assert pairing(w, lam, g) == pytest.approx(weighted_l1_norm(lam, g), abs=1e-12 * (1 + np.abs(lam).sum()))


def test_dominant_set_contains_support():
    rng = np.random.default_rng(7)
    lam = rng.normal(size=20) * (rng.random(20) < 0.4)
    w = canonical_subgradient(lam)
    assert set(support(lam)) <= set(dominant_set(w).tolist())


def test_cone_spec_dominant_is_derived():
    w = GridFunction([1.0, 0.3, -0.6])
    cone = ConeSpec(w=w, b=2.0)
    np.testing.assert_array_equal(cone.dominant, [0, 2])
    with pytest.raises(ValueError):
        ConeSpec(w=w, b=-1.0)


def test_oracle_spec_validation():
    with pytest.raises(ValueError):
        OracleSpec(slope=GridFunction([1.0]), noise_sd=-1.0)
    with pytest.raises(ValueError):
        OracleSpec(slope=GridFunction([1.0]), noise_kind="cauchy")


def test_grid_csv_roundtrip(tmp_path):
    g = Grid(np.array([0.0, 0.25, 1.0]), np.array([1.0, 2.0, 0.5]))
    vals = GridFunction([1.5, -2.0, 0.0])
    path = tmp_path / "grid.csv"
    grid_to_csv(g, path, values=vals)
    g2, v2 = grid_from_csv(path)
    np.testing.assert_array_equal(g2.coords, g.coords)
    np.testing.assert_array_equal(g2.weights, g.weights)
    np.testing.assert_array_equal(v2.values, vals.values)
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "index,coord_0,weight,value"

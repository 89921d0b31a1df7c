import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kickmix.errors import ConfigurationError, DomainError
from kickmix.harmonics import (
    DIRECT_LIMIT,
    Truncation,
    _fft_analyze,
    _fft_gradients,
    _fft_synthesize,
    _make_grid,
    analyze,
    check_coeffs,
    from_real_coords,
    make_grid,
    random_coeffs,
    real_coords,
    synthesize,
    synthesize_gradients,
)

from tests.oracles import Y10, scipy_field


def test_grid_sizes():
    g = make_grid(Truncation(4))
    assert (g.n_lat, g.n_lon) == (5, 9)
    assert abs(g.weights.sum() - 2.0) < 1e-13
    d = make_grid(Truncation(4), dealiased=True)
    assert d.n_lat >= 7 and d.n_lon >= 13


def test_truncation_rejects_small_degree():
    with pytest.raises(ConfigurationError):
        Truncation(1)
    with pytest.raises(ConfigurationError):
        make_grid(1)


def test_canonical_order_and_dimension():
    t = Truncation(3)
    n, m, part = t.canonical_index
    assert t.dimension == 15 == n.size
    assert list(zip(n[:6], m[:6], part[:6])) == [(1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 0, 0), (2, 1, 0), (2, 1, 1)]
    assert list(t.basis_eigenvalues[:4]) == [2.0, 2.0, 2.0, 6.0]
    assert np.all(np.diff(t.basis_eigenvalues) >= 0)


def test_y10_synthesis_and_analysis():
    t = Truncation(6)
    g = make_grid(t)
    c = t.zeros()
    c[1, 0] = 1.0
    f = synthesize(c, g)
    assert np.max(np.abs(f - Y10 * g.nodes[:, None])) <= 1e-12
    back = analyze(Y10 * g.nodes[:, None] * np.ones(g.n_lon), g)
    expected = t.zeros()
    expected[1, 0] = 1.0
    assert np.max(np.abs(back - expected)) <= 1e-12


@pytest.mark.parametrize("n_max", [4, 8, 16])
def test_synthesis_matches_scipy(n_max):
    t = Truncation(n_max)
    g = make_grid(t)
    c = random_coeffs(t, np.random.default_rng(n_max))
    assert np.max(np.abs(synthesize(c, g) - scipy_field(c, g.nodes, g.longitudes))) <= 1e-12


def test_zero_and_linearity():
    t = Truncation(5)
    g = make_grid(t)
    assert np.all(synthesize(t.zeros(), g) == 0)
    rng = np.random.default_rng(1)
    a, b = random_coeffs(t, rng), random_coeffs(t, rng)
    assert np.max(np.abs(synthesize(a + b, g) - synthesize(a, g) - synthesize(b, g))) <= 1e-13


def test_constant_field_rejected():
    g = make_grid(Truncation(4))
    with pytest.raises(DomainError):
        analyze(np.ones(g.shape), g)


def test_non_finite_or_out_of_band_rejected():
    t = Truncation(3)
    c = t.zeros()
    c[1, 0] = np.nan
    with pytest.raises(DomainError):
        check_coeffs(c)
    c = t.zeros()
    c[1, 2] = 1.0
    with pytest.raises(DomainError):
        check_coeffs(c)


@pytest.mark.parametrize("n_max", [4, 8, 16])
def test_parseval(n_max):
    t = Truncation(n_max)
    g = make_grid(t, dealiased=True)
    c = random_coeffs(t, np.random.default_rng(n_max), (3,))
    f = synthesize(c, g)
    lhs = g.integrate(f**2)
    rhs = np.einsum("bnm,nm->b", np.abs(c) ** 2, t.weights)
    assert np.max(np.abs(lhs - rhs) / rhs) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(n_max=st.integers(2, 20), seed=st.integers(0, 2**32 - 1), dealiased=st.booleans())
def test_roundtrip_property(n_max, seed, dealiased):
    t = Truncation(n_max)
    g = make_grid(t, dealiased)
    c = random_coeffs(t, np.random.default_rng(seed))
    assert np.max(np.abs(analyze(synthesize(c, g), g) - c)) <= 1e-12
    f = synthesize(c, g)
    assert np.max(np.abs(synthesize(analyze(f, g), g) - f)) <= 1e-12 * np.max(np.abs(f))


@settings(max_examples=25, deadline=None)
@given(n_max=st.integers(2, 12), seed=st.integers(0, 2**32 - 1))
def test_real_coords_roundtrip_and_isometry(n_max, seed):
    t = Truncation(n_max)
    c = random_coeffs(t, np.random.default_rng(seed))
    x = real_coords(c)
    assert np.max(np.abs(from_real_coords(x, t) - c)) <= 1e-14
    assert abs(np.sum(x**2) - np.sum(t.weights * np.abs(c) ** 2)) <= 1e-12 * np.sum(x**2)


def test_product_is_alias_free_on_dealiased_grid():
    # oracle: the same product analysed on a grid of twice the resolution
    t = Truncation(8)
    rng = np.random.default_rng(3)
    a, b = random_coeffs(t, rng), random_coeffs(t, rng)
    g = make_grid(t, dealiased=True)
    fine = make_grid(Truncation(32))
    pad = lambda c: np.pad(c, ((0, 24), (0, 24)))
    coarse = analyze(synthesize(a, g) * synthesize(b, g), g, check_mean=False)
    ref = analyze(synthesize(pad(a), fine) * synthesize(pad(b), fine), fine, check_mean=False)[:9, :9]
    ref[0, 0] = 0
    assert np.max(np.abs(coarse - ref)) <= 1e-12


def test_gradient_of_y10():
    t = Truncation(5)
    g = make_grid(t)
    c = t.zeros()
    c[1, 0] = 1.0
    d_lat, d_lon = synthesize_gradients(c, g)
    assert np.max(np.abs(d_lat - Y10 * g.cos_lat[:, None])) <= 1e-12
    assert np.max(np.abs(d_lon)) <= 1e-12


def test_zonal_input_has_no_longitude_gradient():
    t = Truncation(7)
    g = make_grid(t)
    c = t.zeros()
    c[1:, 0] = np.random.default_rng(4).standard_normal(7)
    assert np.max(np.abs(synthesize_gradients(c, g)[1])) <= 1e-12


def test_gradient_of_y21_against_finite_differences():
    # central differences of scipy's closed form; d_lon is divided by cos(lat)
    t = Truncation(4)
    g = make_grid(t)
    c = t.zeros()
    c[2, 1] = 0.4 + 0.9j
    d_lat, d_lon = synthesize_gradients(c, g)
    lat = np.arcsin(g.nodes)
    h = 1e-5
    fd_lat = (scipy_field(c, np.sin(lat + h), g.longitudes) - scipy_field(c, np.sin(lat - h), g.longitudes)) / (2 * h)
    fd_lon = (scipy_field(c, g.nodes, g.longitudes + h) - scipy_field(c, g.nodes, g.longitudes - h)) / (2 * h)
    assert np.max(np.abs(d_lat - fd_lat)) <= 1e-6
    assert np.max(np.abs(d_lon - fd_lon / g.cos_lat[:, None])) <= 1e-6


@pytest.mark.parametrize("n_max", [8, 16])
def test_dense_and_fft_paths_agree(n_max):
    g = _make_grid(n_max, True)
    assert g.n_lon < DIRECT_LIMIT and g._dense is not None
    c = random_coeffs(g.truncation, np.random.default_rng(5), (2,))
    f = synthesize(c, g)
    assert np.max(np.abs(f - _fft_synthesize(c, g))) <= 1e-13
    dl, dn = synthesize_gradients(c, g)
    fl, fn = _fft_gradients(c, g)
    assert max(np.max(np.abs(dl - fl)), np.max(np.abs(dn - fn))) <= 1e-12
    assert np.max(np.abs(analyze(f, g) - _fft_analyze(f, g, n_max))) <= 1e-13


def test_fft_path_used_for_large_grids():
    g = make_grid(Truncation(24), dealiased=True)
    assert g.n_lon >= DIRECT_LIMIT and g._dense is None
    c = random_coeffs(g.truncation, np.random.default_rng(6))
    assert np.max(np.abs(analyze(synthesize(c, g), g) - c)) <= 1e-12

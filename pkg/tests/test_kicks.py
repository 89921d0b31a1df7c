import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from kickmix.errors import ConfigurationError, DomainError
from kickmix.harmonics import Truncation
from kickmix.kicks import (
    DENSITIES,
    BigKickParams,
    KickLaw,
    build_big_kick_law,
    coordinate_tv_distance,
    density_cdf,
    density_pdf,
    law_with_amplitude,
    mass_near_zero,
    sample_density,
    sample_kick,
    sample_maximal_coupling_1d,
    zero_law,
)
from kickmix.rng import substream
from kickmix.sphere_ops import h_coords, norm_h

T = Truncation(6)


def overlap_tv(density, s):
    # 1 - int min(p, q), by adaptive quadrature with the kinks as break points
    f = lambda x: min(density_pdf(density, x), density_pdf(density, x - s))  # noqa: E731
    pts = sorted({-1.0, 1.0, s - 1, s + 1, s / 2, 0.0, s})
    return 1.0 - integrate.quad(f, -1.0, 1.0 + s, points=pts[1:-1], limit=200, epsabs=1e-13)[0]


@pytest.mark.parametrize("density", DENSITIES)
def test_density_normalised_and_cdf_consistent(density):
    assert abs(integrate.quad(lambda x: density_pdf(density, x), -1, 1)[0] - 1) <= 1e-12
    for x in (-0.7, -0.1, 0.3, 0.9):
        mass = integrate.quad(lambda y: density_pdf(density, y), -1, min(x, 0.0))[0]
        if x > 0:
            mass += integrate.quad(lambda y: density_pdf(density, y), 0.0, x)[0]
        assert abs(mass - density_cdf(density, x)) <= 1e-12
    assert mass_near_zero(density, 1e-9) > 0


@pytest.mark.parametrize("density", DENSITIES)
def test_inverse_cdf_sampler(density):
    x = sample_density(density, substream(0, 1).random(100_000))
    assert np.all(np.abs(x) <= 1)
    assert stats.kstest(x, lambda v: density_cdf(density, v)).statistic <= 0.01


@pytest.mark.parametrize("density", DENSITIES)
@pytest.mark.parametrize("s", [0.0, 0.1, 0.5, 1.0, 1.7, 2.0])
def test_tv_closed_form_against_quadrature(density, s):
    assert abs(coordinate_tv_distance(density, s) - overlap_tv(density, s)) <= 1e-9


def test_uniform_tv_examples():
    assert coordinate_tv_distance("uniform", 0.0) == 0
    assert coordinate_tv_distance("uniform", 2.0) == 1
    assert coordinate_tv_distance("uniform", 0.6) == pytest.approx(0.3)
    with pytest.raises(DomainError):
        coordinate_tv_distance("uniform", 2.5)


def test_zero_shift_always_coalesces():
    x, y, same = sample_maximal_coupling_1d("triangular", 0.0, substream(1), size=10_000)
    assert np.all(same) and np.all(x == y)


def test_uniform_coalescence_rate_and_marginals():
    x, y, same = sample_maximal_coupling_1d("uniform", 0.5, substream(2), size=100_000)
    assert abs(same.mean() - 0.75) <= 0.005
    assert stats.kstest(x, lambda v: density_cdf("uniform", v)).statistic <= 0.01
    assert stats.kstest(y, lambda v: density_cdf("uniform", v - 0.5)).statistic <= 0.01
    assert np.all(x[same] == y[same]) and np.all(x[~same] != y[~same])


@pytest.mark.parametrize("density", DENSITIES)
@pytest.mark.parametrize("s", [0.1, 0.5, 1.0])
def test_maximal_coupling_optimality(density, s):
    n = 100_000
    x, y, same = sample_maximal_coupling_1d(density, s, substream(3, int(10 * s)), size=n)
    tv = coordinate_tv_distance(density, s)
    sigma = math.sqrt(tv * (1 - tv) / n)
    assert abs(np.mean(x != y) - tv) <= 3 * sigma
    assert stats.kstest(y, lambda v: density_cdf(density, v - s)).statistic <= 0.01


def test_negative_shift():
    x, y, _ = sample_maximal_coupling_1d("truncated-quadratic", -0.8, substream(4), size=50_000)
    assert stats.kstest(y, lambda v: density_cdf("truncated-quadratic", v + 0.8)).statistic <= 0.01


def test_zero_law_gives_zero_kick():
    k = sample_kick(law_with_amplitude(0.0, 5, "uniform", T), substream(5))
    assert np.all(k.eta == 0)
    assert np.all(sample_kick(zero_law(T), substream(5)).eta == 0)


def test_first_coordinate_mean():
    law = KickLaw(np.array([1.0]), "uniform", T)
    rng = substream(6)
    coords = h_coords(law.coords_to_state(law.draw_coords(rng, (100_000,))))[:, 0]
    assert abs(coords.mean()) <= 3 * (1 / math.sqrt(3)) / math.sqrt(100_000)


@settings(max_examples=20, deadline=None)
@given(
    b=st.lists(st.floats(0, 3), min_size=1, max_size=48),
    density=st.sampled_from(DENSITIES),
    seed=st.integers(0, 2**32 - 1),
)
def test_kick_norm_bound(b, density, seed):
    law = KickLaw(np.array(b), density, T)
    assert abs(law.b0 - sum(x * x for x in b)) <= 1e-14 * max(1.0, law.b0)
    eta = law.coords_to_state(law.draw_coords(np.random.default_rng(seed), (200,)))
    assert np.all(norm_h(eta) <= math.sqrt(law.b0) * (1 + 1e-12))


def test_kicks_are_seed_deterministic():
    law = law_with_amplitude(0.3, 10, "triangular", T)
    a = sample_kick(law, substream(7, 1, 2)).eta
    b = sample_kick(law, substream(7, 1, 2)).eta
    c = sample_kick(law, substream(7, 1, 3)).eta
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_law_validation():
    with pytest.raises(ConfigurationError):
        KickLaw(np.array([-1.0]), "uniform", T)
    with pytest.raises(ConfigurationError):
        KickLaw(np.ones(T.dimension + 1), "uniform", T)
    with pytest.raises(ConfigurationError):
        KickLaw(np.ones(2), "gaussian", T)


def test_big_kick_examples():
    law = build_big_kick_law(BigKickParams(1, 3, math.sqrt(2.0)), "uniform", T)
    assert np.allclose(law.b, [2 * math.sqrt(2.0), 0.05, 0.05], rtol=1e-15)
    law = build_big_kick_law(BigKickParams(2, 4, 0.0), "uniform", T)
    assert np.all(law.b == 0.05)
    # the second canonical direction is degree 1, so lambda_2 = 2
    law = build_big_kick_law(BigKickParams(2, 2, 1.0), "uniform", T)
    assert law.b[1] == pytest.approx(2 / math.sqrt(2.0))
    law = build_big_kick_law(BigKickParams(5, 5, 1.0), "uniform", T)
    assert law.b[4] == pytest.approx(2 / math.sqrt(6.0))
    with pytest.raises(ConfigurationError):
        build_big_kick_law(BigKickParams(3, 2, 1.0), "uniform", T)

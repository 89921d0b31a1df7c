import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kickmix.coupling import random_ball
from kickmix.dynamics import (
    Solver,
    SolverConfig,
    absorbing_radius,
    evolve,
    record_trajectory,
    rossby_haurwitz,
    step,
)
from kickmix.errors import BlowUpError, ConfigurationError, DomainError
from kickmix.forcing import make_zonal_force, periodic_table_force, zero_force
from kickmix.harmonics import Truncation, make_grid, random_coeffs, synthesize
from kickmix.sphere_ops import norm_h, sobolev_norm, zonal_velocity

from tests.oracles import scipy_field


def single_mode(trunc, n, m, value=1.0):
    c = trunc.zeros()
    c[n, m] = value
    return c


def rotated_field(c, n, t, nu, omega, grid):
    # the mode turns rigidly in longitude by 2 Omega t / (n (n+1)) and decays at nu n (n+1)
    lam = n * (n + 1)
    return math.exp(-nu * lam * t) * scipy_field(c, grid.nodes, grid.longitudes + 2 * omega * t / lam)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolverConfig(0.5, 1.0, 8, dt=-1.0)
    with pytest.raises(ConfigurationError):
        SolverConfig(0.5, 1.0, 8, dt=0.1)
    with pytest.raises(ConfigurationError):
        SolverConfig(0.0, 1.0, 8)
    with pytest.raises(ConfigurationError):
        SolverConfig(0.5, 1.0, 8, integrator="euler")


def test_zero_state_stays_zero():
    cfg = SolverConfig(0.5, 1.0, 6)
    t = cfg.truncation
    assert np.all(step(t.zeros(), 0.0, cfg) == 0)
    assert np.all(evolve(t.zeros(), 0.0, 1.0, cfg) == 0)


@pytest.mark.parametrize("integrator", ["etdrk2", "ifrk2"])
def test_single_mode_heat_decay(integrator):
    cfg = SolverConfig(0.3, 0.0, 6, dt=1e-3, integrator=integrator)
    psi0 = single_mode(cfg.truncation, 2, 1, 0.7 - 0.2j)
    out = evolve(psi0, 0.0, 1.0, cfg)
    expected = norm_h(psi0) * math.exp(-6 * 0.3)
    assert abs(norm_h(out) - expected) / expected <= 1e-8


@pytest.mark.parametrize("integrator", ["etdrk2", "ifrk2"])
def test_rossby_haurwitz_against_rotated_field(integrator):
    nu, omega = 0.1, 1.0
    cfg = SolverConfig(nu, omega, 6, dt=1e-3, integrator=integrator)
    c = single_mode(cfg.truncation, 2, 1, 0.5 + 0.5j)
    g = make_grid(cfg.truncation)
    out = synthesize(evolve(c, 0.0, 1.0, cfg), g)
    ref = rotated_field(c, 2, 1.0, nu, omega, g)
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) <= 1e-6


def test_closed_form_helper_agrees_with_rotation():
    t = Truncation(5)
    c = single_mode(t, 3, 2, 1.0 - 0.4j)
    g = make_grid(t)
    got = synthesize(rossby_haurwitz(c, 0.8, 0.2, 1.5), g)
    assert np.max(np.abs(got - rotated_field(c, 3, 0.8, 0.2, 1.5, g))) <= 1e-12


def test_evolve_identity_and_semigroup():
    cfg = SolverConfig(0.5, 1.0, 8, dt=0.01)
    s = Solver(cfg)
    x = random_coeffs(cfg.truncation, np.random.default_rng(0), slope=1.0)
    assert np.all(s.evolve(x, 0.3, 0.3) == x)
    two = s.evolve(x, 0.0, 2.0)
    composed = s.evolve(s.evolve(x, 0.0, 1.0), 1.0, 2.0)
    assert norm_h(two - composed) <= 1e-9 * norm_h(x)
    with pytest.raises(DomainError):
        s.evolve(x, 1.0, 0.0)


def test_partial_final_step():
    s = Solver(SolverConfig(0.5, 0.0, 4, dt=0.03))
    steps = s.step_times(0.0, 0.1)
    assert len(steps) == 4
    assert abs(sum(h for _, h in steps) - 0.1) <= 1e-15


def test_steady_zonal_force():
    cfg = SolverConfig(0.5, 1.0, 8, dt=0.05)
    f = make_zonal_force(lambda t: 1.0, lambda t: 0.0, cfg.nu, cfg.truncation)
    u0 = zonal_velocity(1.0, cfg.truncation)
    out = Solver(cfg, f).evolve(u0, 0.0, 1.0)
    assert norm_h(out - u0) <= 1e-9
    # the force is nu lambda_1 curl(sin(lat) n)
    assert norm_h(f.stream(0.3) - 2 * cfg.nu * u0) <= 1e-15


def test_zonal_force_tracks_sine():
    cfg = SolverConfig(0.5, 1.0, 4, dt=2e-4)
    f = make_zonal_force(np.sin, np.cos, cfg.nu, cfg.truncation)
    out = Solver(cfg, f).evolve(zonal_velocity(0.0, cfg.truncation), 0.0, 1.0)
    assert norm_h(out - zonal_velocity(math.sin(1.0), cfg.truncation)) <= 1e-8


def test_zero_g_gives_zero_force():
    t = Truncation(4)
    f = make_zonal_force(lambda s: 0.0, lambda s: 0.0, 0.5, t)
    assert f.sup_norm_h == 0
    assert np.all(f.stream(1.7) == 0)


def test_absorbing_radius():
    cfg = SolverConfig(0.5, 1.0, 4)
    t = cfg.truncation
    assert absorbing_radius(zero_force(t), cfg).radius_h == 0
    # g' + nu lambda_1 g = 1 / |curl(sin(lat) n)|_H makes |f|_H = 1
    g = 1.0 / (float(norm_h(zonal_velocity(1.0, t))) * 2 * cfg.nu)
    f = make_zonal_force(lambda s: g, lambda s: 0.0, cfg.nu, t)
    assert abs(f.sup_norm_h - 1.0) <= 1e-14
    assert abs(absorbing_radius(f, cfg).radius_h - math.sqrt(2.0)) <= 1e-14
    f2 = make_zonal_force(lambda s: 2 * g, lambda s: 0.0, cfg.nu, t)
    assert abs(absorbing_radius(f2, cfg).radius_h - 2 * math.sqrt(2.0)) <= 1e-13


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), omega=st.floats(0, 3))
def test_energy_decays_without_force(seed, omega):
    cfg = SolverConfig(0.4, omega, 6, dt=0.02)
    s = Solver(cfg)
    psi = random_ball(cfg.truncation, np.random.default_rng(seed), 1, 3.0)[0]
    for i in range(20):
        nxt = s.step(psi, i * cfg.dt)
        bound = math.exp(-2 * cfg.nu * 2.0 * cfg.dt) * norm_h(psi) ** 2
        assert norm_h(nxt) ** 2 - bound <= 1e-9 * max(bound, 1e-300)
        psi = nxt


def test_zonal_data_stays_zonal():
    cfg = SolverConfig(0.5, 1.0, 8, dt=0.05)
    f = make_zonal_force(np.sin, np.cos, cfg.nu, cfg.truncation)
    psi = cfg.truncation.zeros()
    psi[1:, 0] = np.random.default_rng(1).standard_normal(8)
    out = Solver(cfg, f).evolve(psi, 0.0, 2.0)
    assert np.max(np.abs(out[:, 1:])) <= 1e-12


def test_small_force_pairs_contract():
    cfg = SolverConfig(0.5, 1.0, 8, dt=0.05)
    pattern = random_coeffs(cfg.truncation, np.random.default_rng(2), slope=1.0)
    # well under nu^2 sqrt(lambda_1) / k with k about 0.15
    f = periodic_table_force(pattern, 1.0, 5.0, 50, 20.0)
    s = Solver(cfg, f)
    pairs = random_ball(cfg.truncation, np.random.default_rng(3), 20, 1.0)
    u, v = pairs[:10], pairs[10:]
    gap = norm_h(u - v)
    for k in range(8):
        u, v = s.evolve(u, k * 0.5, (k + 1) * 0.5), s.evolve(v, k * 0.5, (k + 1) * 0.5)
        new = norm_h(u - v)
        assert np.all(new < gap)
        gap = new


def test_blow_up_is_reported():
    cfg = SolverConfig(0.01, 0.0, 8, dt=0.05)
    psi = 1e6 * random_coeffs(cfg.truncation, np.random.default_rng(4))
    with pytest.raises(BlowUpError):
        Solver(cfg).evolve(psi, 0.0, 5.0)


def test_trajectory_csv(tmp_path):
    cfg = SolverConfig(0.5, 1.0, 4, dt=0.05)
    psi = random_coeffs(cfg.truncation, np.random.default_rng(5))
    traj = record_trajectory(Solver(cfg), psi, 0.0, 1.0, 0.25, n_low=3)
    assert traj.times.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    path = tmp_path / "traj.csv"
    traj.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "norm_H", "norm_V", "norm_H2", "energy_low_N", "coeffs_snapshot_ref"]
    assert float(rows[3][1]) == float(traj.norm_h[2])
    assert float(rows[1][3]) == float(sobolev_norm(psi, 2.0))

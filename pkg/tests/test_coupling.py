import math

import numpy as np
import pytest

from kickmix.coupling import (
    CoupledEnsemble,
    CouplingStrategy,
    KickedProcess,
    advance,
    advance_coupled,
    advance_ensemble,
    clopper_pearson,
    coupling_contraction,
    random_ball,
    stress_pairs,
    verify_condition_1,
    verify_condition_2,
    verify_squeezing,
)
from kickmix.dynamics import Solver, SolverConfig
from kickmix.errors import ConfigurationError, DomainError
from kickmix.forcing import make_zonal_force, zero_force
from kickmix.harmonics import random_coeffs
from kickmix.kicks import KickLaw, law_with_amplitude, zero_law
from kickmix.rng import substream
from kickmix.sphere_ops import norm_h, zonal_velocity

CFG = SolverConfig(0.5, 1.0, 6, dt=0.05)
T = CFG.truncation


def process(b=0.1, n_kick=8, density="uniform", force=None):
    law = law_with_amplitude(b, n_kick, density, T) if b else zero_law(T)
    return KickedProcess(Solver(CFG, force), law)


def zonal_process(b):
    f = make_zonal_force(lambda t: 1.0, lambda t: 0.0, CFG.nu, T)
    return KickedProcess(Solver(CFG, f), KickLaw(np.full(8, b), "uniform", T))


def test_process_validation():
    with pytest.raises(ConfigurationError):
        KickedProcess(Solver(CFG), zero_law(T), period=2.0)
    with pytest.raises(ConfigurationError):
        KickedProcess(Solver(CFG), zero_law(SolverConfig(0.5, 1.0, 4).truncation))


def test_zero_law_chain_is_the_flow():
    p = process(0.0)
    psi = random_coeffs(T, np.random.default_rng(0))
    assert np.array_equal(advance(p, psi, 2, substream(1)), p.solver.evolve(psi, 2.0, 3.0))


def test_kick_is_bounded_and_added_after_flow():
    p = process(0.2)
    psi = random_coeffs(T, np.random.default_rng(1))
    eta = advance(p, psi, 0, substream(2)) - p.flow(psi, 0)
    assert 0 < norm_h(eta) <= math.sqrt(p.law.b0) * (1 + 1e-12)


def test_ensemble_independent_of_threads():
    # bits are fixed by the chunk size; other chunkings agree to roundoff
    p = process(0.3)
    psi = random_coeffs(T, np.random.default_rng(3), (10,))
    a = advance_ensemble(p, psi, 0, seed=4, threads=1, chunk=3)
    assert np.array_equal(a, advance_ensemble(p, psi, 0, seed=4, threads=4, chunk=3))
    b = advance_ensemble(p, psi, 0, seed=4, threads=4, chunk=7)
    assert np.max(norm_h(a - b)) <= 1e-14


def test_strategy_validation():
    with pytest.raises(ConfigurationError):
        CouplingStrategy("greedy")
    with pytest.raises(ConfigurationError):
        CouplingStrategy("maximal_low_mode", n_couple=4, d0=0.0)
    with pytest.raises(ConfigurationError):
        CouplingStrategy("maximal_low_mode", n_couple=0, d0=0.1)


def test_synchronized_equal_states_stay_equal():
    p = process(0.3)
    u = random_coeffs(T, np.random.default_rng(5))
    ens = CoupledEnsemble.from_pair(u, u, 20)
    for _ in range(3):
        ens = advance_coupled(p, ens, CouplingStrategy("synchronized"), seed=6)
    # batched transforms may round equal rows differently at the last bit
    assert np.all(ens.history[-1] <= 1e-14)


def test_maximal_coupling_with_zero_gap_coalesces():
    p = process(0.3)
    u = random_coeffs(T, np.random.default_rng(7))
    ens = CoupledEnsemble.from_pair(u, u, 20)
    ens = advance_coupled(p, ens, CouplingStrategy("maximal_low_mode", n_couple=8, d0=0.1), seed=8)
    assert np.all(ens.history[-1] <= 1e-14)
    assert np.all(ens.coupling) and np.all(ens.waiting_run == 0)


def test_waiting_clock_counts_far_pairs():
    p = process(0.1)
    rng = np.random.default_rng(9)
    u, v = random_ball(T, rng, 2, 5.0)
    ens = CoupledEnsemble.from_pair(u, v, 10)
    strategy = CouplingStrategy("maximal_low_mode", n_couple=8, d0=1e-6)
    for _ in range(2):
        ens = advance_coupled(p, ens, strategy, seed=10)
    assert np.all(ens.waiting_run == 2) and np.all(ens.waiting_total == 2)
    assert len(ens.pair(0).history) == 3 and ens.pair(0).regime == "waiting"


def test_clopper_pearson():
    lo, hi = clopper_pearson(0, 100)
    assert lo == 0 and abs(hi - (1 - 0.025 ** (1 / 100))) <= 1e-12
    lo, hi = clopper_pearson(50, 100)
    assert lo < 0.5 < hi
    assert clopper_pearson(100, 100)[1] == 1
    with pytest.raises(DomainError):
        clopper_pearson(0, 0)


def test_stress_pairs_on_sphere():
    v, w = stress_pairs(T, 2.0, np.random.default_rng(11))
    assert v.shape[0] == w.shape[0] == 16
    assert np.allclose(norm_h(v), 2.0) and np.allclose(norm_h(w), 2.0)


def test_condition_1_small_kicks_reach_small_distance():
    # zonal-stable flow with tiny kicks: pairs in the ball come within 0.1
    p = zonal_process(0.01)
    rep = verify_condition_1(p, 0.1, 1.0, 100, [1, 2, 4], seed=12, n_random=2)
    assert rep.success and rep.l <= 4 and rep.x_hat >= 0.5
    assert rep.ci[0] > 0 and rep.to_json()["estimates"]["l"] == rep.l


def test_condition_1_rejects_bad_input():
    p = zonal_process(0.01)
    with pytest.raises(DomainError):
        verify_condition_1(p, 0.0, 1.0, 100, [1], seed=0)
    with pytest.raises(ConfigurationError):
        verify_condition_1(p, 0.1, 1.0, 10, [1], seed=0)


def test_condition_2_synchronized_never_fails():
    # with shared noise the gap is the deterministic one, which contracts here
    p = zonal_process(0.1)
    rep = verify_condition_2(p, CouplingStrategy("synchronized"), [0.01, 0.02], 1.0, 200, seed=13)
    assert rep.p_hat == [0.0, 0.0] and rep.satisfied


def test_squeezing_full_dimension_is_zero():
    p = zonal_process(0.1)
    rep = verify_squeezing(p, [1, 4, T.dimension], 1.0, 20, seed=14)
    assert rep.gamma_hat[-1] == 0 and rep.monotone
    assert rep.eigen_next[0] == 2.0 and rep.eigen_next[-1] == math.inf
    with pytest.raises(ConfigurationError):
        verify_squeezing(p, [8, 4], 1.0, 5, seed=0)


def test_contraction_report_shape():
    p = zonal_process(0.1)
    out = coupling_contraction(p, CouplingStrategy("maximal_low_mode", n_couple=8, d0=0.05), 1.0, 100, 2, seed=15)
    assert sorted(out) == [1, 2]
    assert all(0 <= v["p_hat"] <= 1 and v["ci"][0] <= v["p_hat"] <= v["ci"][1] for v in out.values())


def test_zonal_solution_is_fixed_by_zero_kicks():
    f = make_zonal_force(lambda t: 1.0, lambda t: 0.0, CFG.nu, T)
    p = KickedProcess(Solver(CFG, f), zero_law(T))
    u = zonal_velocity(1.0, T)
    assert norm_h(advance(p, u, 0, substream(0)) - u) <= 1e-9
    assert zero_force(T).is_zero

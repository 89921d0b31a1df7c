"""Kicked Markov chain ``u^{k+1} = S_{k+1,k} u^k + eta_{k+1}`` and coupled pairs.

Randomness is addressed by ``(seed, trajectory id, side, step)``: side 0 and
side 1 hold the kick coordinates of the two chains of a pair and side 2 the
maximal-coupling draws. Ensembles are always processed in fixed chunks of
trajectories so that the arithmetic, and hence every output bit, is the same
for any number of worker threads.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from kickmix.dynamics import Solver
from kickmix.errors import ConfigurationError, DomainError
from kickmix.harmonics import check_coeffs
from kickmix.kicks import (
    KickLaw,
    sample_density,
    sample_maximal_coupling_batch,
)
from kickmix.rng import CHUNK, parallel_map, substream, uniform_rows
from kickmix.sphere_ops import from_h_coords, h_coords, norm_h, project_high

SIDE_ONE, SIDE_TWO, SIDE_COUPLING = 0, 1, 2

STRATEGIES = ("independent", "synchronized", "maximal_low_mode")
WAITING = ("independent", "synchronized")

# distances computed as norms of differences carry roundoff, so a pair placed
# at exactly d0 must not drop out of the coupling regime
REGIME_RTOL = 1e-12


@dataclasses.dataclass(frozen=True, eq=False)
class KickedProcess:
    """Flow over ``[k, k + 1]`` followed by one kick (period fixed at 1)."""

    solver: Solver
    law: KickLaw
    period: float = 1.0

    def __post_init__(self):
        if self.period != 1.0:
            raise ConfigurationError(f"the kick period is fixed at 1, got {self.period}")
        if self.law.truncation != self.solver.trunc:
            raise ConfigurationError("kick law and solver use different truncations")

    @property
    def truncation(self):
        return self.solver.trunc

    def flow(self, psi: np.ndarray, k: int) -> np.ndarray:
        return self.solver.evolve(psi, float(k), float(k + 1))

    def kick_coords(self, seed: int, ids: Sequence[int], side: int, step: int) -> np.ndarray:
        """Kick coordinates ``zeta`` for each id, shape ``(len(ids), n_kick)``."""
        u = uniform_rows(seed, ids, side, step, size=self.law.n_kick)
        return sample_density(self.law.density, u)


def advance(process: KickedProcess, psi: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """One step of the chain for a single state (or a batch sharing ``rng``)."""
    flowed = process.flow(check_coeffs(psi), k)
    if process.law.is_zero:
        return flowed
    zeta = process.law.draw_coords(rng, flowed.shape[:-2])
    return flowed + process.law.coords_to_state(zeta)


def advance_ensemble(
    process: KickedProcess,
    psi: np.ndarray,
    k: int,
    seed: int,
    ids: Optional[Sequence[int]] = None,
    side: int = SIDE_ONE,
    threads: int = 1,
    chunk: int = CHUNK,
) -> np.ndarray:
    """Advance a batch ``(n, ...)`` of independent chains; chain ``i`` uses stream ``(ids[i], side, k + 1)``."""
    psi = check_coeffs(psi)
    n = psi.shape[0]
    ids = np.arange(n) if ids is None else np.asarray(ids)

    def work(part: range) -> np.ndarray:
        flowed = process.flow(psi[part.start : part.stop], k)
        if process.law.is_zero:
            return flowed
        zeta = process.kick_coords(seed, ids[part.start : part.stop], side, k + 1)
        return flowed + process.law.coords_to_state(zeta)

    return np.concatenate(parallel_map(work, n, threads, chunk))


@dataclasses.dataclass(frozen=True)
class CouplingStrategy:
    """How the two chains of a pair share randomness.

    ``maximal_low_mode`` couples pairs within ``d0`` of each other: the first
    ``n_couple`` kick coordinates are maximally coupled given the gap of the
    flowed states, the rest are shared. Pairs farther apart than ``d0`` wait,
    using independent (or, optionally, shared) kicks.
    """

    kind: str
    n_couple: int = 0
    d0: float = 0.0
    l_d0: Optional[int] = None
    waiting: str = "independent"

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        if self.waiting not in WAITING:
            raise ConfigurationError(f"waiting must be one of {WAITING}, got {self.waiting!r}")
        if self.kind == "maximal_low_mode":
            if self.d0 <= 0:
                raise ConfigurationError(f"d0 must be > 0, got {self.d0}")
            if self.n_couple < 1:
                raise ConfigurationError(f"n_couple must be >= 1, got {self.n_couple}")


@dataclasses.dataclass(frozen=True)
class CoupledPair:
    u1: np.ndarray
    u2: np.ndarray
    k: int
    regime: str
    history: tuple[float, ...]


@dataclasses.dataclass
class CoupledEnsemble:
    """``n`` coupled pairs at step ``k``.

    ``waiting_run`` counts consecutive waiting steps since the last time the
    pair was within ``d0`` (the clock resets per approach); ``waiting_total``
    counts all waiting steps since the start.
    """

    u1: np.ndarray
    u2: np.ndarray
    ids: np.ndarray
    k: int = 0
    history: list = dataclasses.field(default_factory=list)
    coupling: Optional[np.ndarray] = None
    waiting_run: Optional[np.ndarray] = None
    waiting_total: Optional[np.ndarray] = None
    fallbacks: Optional[np.ndarray] = None

    def __post_init__(self):
        self.u1 = check_coeffs(self.u1)
        self.u2 = check_coeffs(self.u2)
        if self.u1.shape != self.u2.shape or self.u1.ndim != 3:
            raise ConfigurationError("u1 and u2 must both have shape (n, n_max + 1, n_max + 1)")
        n = self.u1.shape[0]
        self.ids = np.asarray(self.ids, dtype=np.int64)
        zeros = np.zeros(n, dtype=np.int64)
        if self.coupling is None:
            self.coupling = np.zeros(n, dtype=bool)
        for name in ("waiting_run", "waiting_total", "fallbacks"):
            if getattr(self, name) is None:
                setattr(self, name, zeros.copy())
        if not self.history:
            self.history = [self.distances()]

    @classmethod
    def from_pair(cls, u1: np.ndarray, u2: np.ndarray, n_pairs: int, first_id: int = 0) -> "CoupledEnsemble":
        u1 = np.broadcast_to(check_coeffs(u1), (n_pairs,) + u1.shape[-2:]).copy()
        u2 = np.broadcast_to(check_coeffs(u2), (n_pairs,) + u2.shape[-2:]).copy()
        return cls(u1, u2, np.arange(first_id, first_id + n_pairs))

    def __len__(self) -> int:
        return self.u1.shape[0]

    def distances(self) -> np.ndarray:
        return norm_h(self.u1 - self.u2)

    def pair(self, i: int) -> CoupledPair:
        return CoupledPair(
            self.u1[i],
            self.u2[i],
            self.k,
            "coupling" if self.coupling[i] else "waiting",
            tuple(float(h[i]) for h in self.history),
        )


def _coupled_coords(
    process: KickedProcess,
    strategy: CouplingStrategy,
    flowed1: np.ndarray,
    flowed2: np.ndarray,
    in_coupling: np.ndarray,
    seed: int,
    ids: np.ndarray,
    step: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    law = process.law
    z1 = process.kick_coords(seed, ids, SIDE_ONE, step)
    if strategy.kind == "synchronized":
        return z1, z1.copy(), np.zeros(len(ids), dtype=np.int64)
    z2 = process.kick_coords(seed, ids, SIDE_TWO, step)
    fallbacks = np.zeros(len(ids), dtype=np.int64)
    if strategy.kind == "independent":
        return z1, z2, fallbacks
    if strategy.waiting == "synchronized":
        z2[~in_coupling] = z1[~in_coupling]
    rows = np.flatnonzero(in_coupling)
    if rows.size == 0:
        return z1, z2, fallbacks
    n_c = min(strategy.n_couple, law.n_kick)
    b = law.b[:n_c]
    active = b > 0
    gap = h_coords(flowed2[rows] - flowed1[rows])[:, :n_c]
    for r, gi in zip(rows, gap):
        z2[r, n_c:] = z1[r, n_c:]
        shift = np.zeros(n_c)
        shift[active] = gi[active] / b[active]
        ok = active & (np.abs(shift) < 2.0)
        fallbacks[r] = int(np.count_nonzero(active & ~ok))
        if not np.any(ok):
            continue
        rng = substream(seed, int(ids[r]), SIDE_COUPLING, step)
        x, y, _ = sample_maximal_coupling_batch(law.density, shift[ok], rng)
        z1[r, :n_c][ok] = x
        z2[r, :n_c][ok] = y - shift[ok]
    return z1, z2, fallbacks


def advance_coupled(
    process: KickedProcess,
    ens: CoupledEnsemble,
    strategy: CouplingStrategy,
    seed: int,
    threads: int = 1,
    chunk: int = CHUNK,
) -> CoupledEnsemble:
    """One coupled step for every pair; returns a new ensemble at step ``k + 1``."""
    k = ens.k
    dist = ens.history[-1]
    if strategy.kind == "maximal_low_mode":
        in_coupling = dist <= strategy.d0 * (1.0 + REGIME_RTOL)
    else:
        in_coupling = np.zeros(len(ens), dtype=bool)

    def work(part: range):
        sl = slice(part.start, part.stop)
        both = process.flow(np.concatenate([ens.u1[sl], ens.u2[sl]]), k)
        f1, f2 = both[: len(part)], both[len(part) :]
        if process.law.is_zero:
            return f1, f2, np.zeros(len(part), dtype=np.int64)
        z1, z2, fb = _coupled_coords(process, strategy, f1, f2, in_coupling[sl], seed, ens.ids[sl], k + 1)
        return f1 + process.law.coords_to_state(z1), f2 + process.law.coords_to_state(z2), fb

    parts = parallel_map(work, len(ens), threads, chunk)
    u1 = np.concatenate([p[0] for p in parts])
    u2 = np.concatenate([p[1] for p in parts])
    fb = np.concatenate([p[2] for p in parts])
    waiting = ~in_coupling
    out = CoupledEnsemble(
        u1,
        u2,
        ens.ids,
        k + 1,
        history=list(ens.history),
        coupling=in_coupling,
        waiting_run=np.where(waiting, ens.waiting_run + 1, 0),
        waiting_total=ens.waiting_total + waiting,
        fallbacks=ens.fallbacks + fb,
    )
    out.history.append(out.distances())
    return out


# ---------------------------------------------------------------- verifiers


def clopper_pearson(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval."""
    if trials <= 0:
        raise DomainError("need at least one trial")
    alpha = 1.0 - level
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lo, hi


def random_directions(trunc, rng: np.random.Generator, n: int, n_modes: Optional[int] = None) -> np.ndarray:
    """Stream functions of ``n`` uniformly random unit vectors of H (optionally in the first modes)."""
    dim = trunc.dimension if n_modes is None else n_modes
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return from_h_coords(x, trunc)


def random_ball(trunc, rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    """Uniform samples from the ball of radius ``radius`` in H."""
    r = radius * rng.random(n) ** (1.0 / trunc.dimension)
    return r[:, None, None] * random_directions(trunc, rng, n)


def stress_pairs(trunc, radius: float, rng: np.random.Generator, n_random: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Eight fixed extreme pairs on the sphere of radius ``radius`` plus random ones.

    The fixed pairs are antipodal along ``e_1 .. e_4``, orthogonal pairs
    ``(e_1, e_2)`` and ``(e_1, e_4)``, a low/high pair and an antipodal
    equal-weight pattern across the kicked modes.
    """
    dim = trunc.dimension
    e = np.eye(dim)
    flat = np.ones(dim) / math.sqrt(dim)
    alt = np.where(np.arange(dim) % 2 == 0, 1.0, -1.0) / math.sqrt(dim)
    first = [e[0], e[1], e[2], e[3], e[0], e[0], e[0], flat]
    second = [-e[0], -e[1], -e[2], -e[3], e[1], e[3], e[dim - 1], alt]
    v = radius * from_h_coords(np.array(first), trunc)
    w = radius * from_h_coords(np.array(second), trunc)
    if n_random:
        dirs = random_directions(trunc, rng, 2 * n_random)
        v = np.concatenate([v, radius * dirs[:n_random]])
        w = np.concatenate([w, radius * dirs[n_random:]])
    return v, w


@dataclasses.dataclass
class Condition1Report:
    """Hit rates ``P{|u^l(v) - u^l(w)| <= d}`` over the stress set.

    The estimate at each ``l`` is the minimum over stress pairs, so it is a
    lower bound over the stress set only, not over the whole ball.
    """

    l: Optional[int]
    x_hat: float
    ci: tuple[float, float]
    l_grid: list
    rates: dict
    d: float
    radius: float
    trials: int
    seed: int
    noise: str

    @property
    def success(self) -> bool:
        return self.l is not None

    def to_json(self) -> dict:
        return {
            "condition": "controllability",
            "parameters": {"d": self.d, "R": self.radius, "l_grid": self.l_grid, "noise": self.noise},
            "estimates": {"l": self.l, "x_hat": self.x_hat, "rates": self.rates},
            "confidence_intervals": {"x_hat": list(self.ci)},
            "trials": self.trials,
            "seed": self.seed,
            "bound": "lower bound over the stress set",
        }


def verify_condition_1(
    process: KickedProcess,
    d: float,
    radius: float,
    trials: int,
    l_grid: Sequence[int],
    seed: int,
    n_random: int = 8,
    noise: str = "independent",
    threads: int = 1,
) -> Condition1Report:
    """Smallest ``l`` in ``l_grid`` whose worst stress-pair hit rate has a positive lower 95% bound."""
    if d <= 0 or radius <= 0:
        raise DomainError("d and R must be > 0")
    if trials < 100:
        raise ConfigurationError(f"trials must be >= 100, got {trials}")
    if noise not in WAITING:
        raise ConfigurationError(f"noise must be one of {WAITING}")
    l_grid = sorted(int(x) for x in l_grid)
    trunc = process.truncation
    v, w = stress_pairs(trunc, radius, substream(seed, 0, 9), n_random)
    n_pairs = v.shape[0]
    u1 = np.repeat(v, trials, axis=0)
    u2 = np.repeat(w, trials, axis=0)
    ens = CoupledEnsemble(u1, u2, np.arange(u1.shape[0]))
    strategy = CouplingStrategy("independent" if noise == "independent" else "synchronized")
    hits = {}
    for step in range(max(l_grid) + 1):
        if step in l_grid:
            ok = (ens.history[-1] <= d).reshape(n_pairs, trials).sum(axis=1)
            hits[step] = ok
        if step < max(l_grid):
            ens = advance_coupled(process, ens, strategy, seed, threads)
    rates = {l: [float(h / trials) for h in hits[l]] for l in l_grid}
    chosen, x_hat, ci = None, 0.0, (0.0, 0.0)
    for l in l_grid:
        worst = int(np.min(hits[l]))
        lo, hi = clopper_pearson(worst, trials)
        if lo > 0:
            chosen, x_hat, ci = l, worst / trials, (lo, hi)
            break
    if chosen is None:
        worst = int(np.min(hits[l_grid[-1]]))
        x_hat, ci = worst / trials, clopper_pearson(worst, trials)
    return Condition1Report(chosen, x_hat, ci, l_grid, rates, d, radius, trials, seed, noise)


@dataclasses.dataclass
class Condition2Report:
    d_grid: list
    p_hat: list
    c_hat: list
    c_ci: list
    fallbacks: list
    d0: float
    trials: int
    seed: int

    @property
    def c_sup(self) -> float:
        return float(max(self.c_hat))

    @property
    def c_sup_upper(self) -> float:
        return float(max(hi for _, hi in self.c_ci))

    @property
    def satisfied(self) -> bool:
        """Whether the estimated ``C d0`` is at most 1/32."""
        return self.c_sup * self.d0 <= 1.0 / 32.0

    def to_json(self) -> dict:
        return {
            "condition": "coupling",
            "parameters": {"d_grid": self.d_grid, "d0": self.d0},
            "estimates": {
                "p_hat": self.p_hat,
                "C_hat": self.c_hat,
                "C_sup": self.c_sup,
                "C_sup_times_d0": self.c_sup * self.d0,
                "fallbacks": self.fallbacks,
                "satisfied": self.satisfied,
            },
            "confidence_intervals": {"C_hat": [list(c) for c in self.c_ci]},
            "trials": self.trials,
            "seed": self.seed,
        }


def verify_condition_2(
    process: KickedProcess,
    strategy: CouplingStrategy,
    d_grid: Sequence[float],
    radius: float,
    trials: int,
    seed: int,
    threads: int = 1,
    step: int = 0,
) -> Condition2Report:
    """``P{|V_1 - V_2| >= d/2}`` after one coupled step from pairs at distance exactly ``d``.

    The first state of each pair is uniform in the ball of radius ``radius``
    and the second lies at distance ``d`` in a uniformly random direction.
    The coupled kernel is applied regardless of ``d0``.
    """
    if any(d <= 0 for d in d_grid):
        raise DomainError("the d grid must be positive")
    trunc = process.truncation
    forced = dataclasses.replace(strategy, d0=max(max(d_grid), strategy.d0)) if strategy.kind == "maximal_low_mode" else strategy
    p_hat, c_hat, c_ci, fbs = [], [], [], []
    for i, d in enumerate(d_grid):
        rng = substream(seed, 1, i)
        base = random_ball(trunc, rng, trials, radius)
        other = base + d * random_directions(trunc, rng, trials)
        ens = CoupledEnsemble(base, other, np.arange(trials) + i * trials)
        ens = advance_coupled(process, ens, forced, seed, threads)
        fails = int(np.count_nonzero(ens.history[-1] >= d / 2))
        lo, hi = clopper_pearson(fails, trials)
        p_hat.append(fails / trials)
        c_hat.append(fails / trials / d)
        c_ci.append((lo / d, hi / d))
        fbs.append(int(ens.fallbacks.sum()))
    return Condition2Report(list(map(float, d_grid)), p_hat, c_hat, c_ci, fbs, strategy.d0, trials, seed)


@dataclasses.dataclass
class SqueezingReport:
    n_grid: list
    gamma_hat: list
    eigen_next: list
    monotone: bool
    skipped: int

    def ratio(self, i: int, j: int) -> float:
        return self.gamma_hat[j] / self.gamma_hat[i]

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def verify_squeezing(
    process: KickedProcess,
    n_grid: Sequence[int],
    radius: float,
    trials: int,
    seed: int,
    k: int = 0,
    rel_band: float = 1e-9,
) -> SqueezingReport:
    """``max |(I - P_N)(S u - S v)|_H / |u - v|_H`` over random pairs in the ball, per N."""
    n_grid = [int(n) for n in n_grid]
    if n_grid != sorted(n_grid):
        raise ConfigurationError("N grid must be ascending")
    trunc = process.truncation
    rng = substream(seed, 2)
    u = random_ball(trunc, rng, trials, radius)
    v = random_ball(trunc, rng, trials, radius)
    diff0 = norm_h(u - v)
    keep = diff0 > 0
    skipped = int(np.count_nonzero(~keep))
    u, v, diff0 = u[keep], v[keep], diff0[keep]
    flowed = process.flow(np.concatenate([u, v]), k)
    diff = flowed[: len(u)] - flowed[len(u) :]
    gammas = []
    for n in n_grid:
        if n >= trunc.dimension:
            gammas.append(0.0)
        else:
            gammas.append(float(np.max(norm_h(project_high(diff, n)) / diff0)))
    lam = trunc.basis_eigenvalues
    nxt = [float(lam[n]) if n < trunc.dimension else math.inf for n in n_grid]
    monotone = all(b <= a * (1 + rel_band) for a, b in zip(gammas, gammas[1:]))
    return SqueezingReport(n_grid, gammas, nxt, monotone, skipped)


def coupling_contraction(
    process: KickedProcess,
    strategy: CouplingStrategy,
    radius: float,
    n_pairs: int,
    k_max: int,
    seed: int,
    r: int = 0,
    threads: int = 1,
) -> dict:
    """Fraction of pairs with ``|U_1^k - U_2^k| <= 2^{-k-r} d0`` starting at distance ``2^{-r} d0``."""
    trunc = process.truncation
    rng = substream(seed, 3)
    d = strategy.d0 * 2.0**-r
    base = random_ball(trunc, rng, n_pairs, radius)
    ens = CoupledEnsemble(base, base + d * random_directions(trunc, rng, n_pairs), np.arange(n_pairs))
    out = {}
    for k in range(1, k_max + 1):
        ens = advance_coupled(process, ens, strategy, seed, threads)
        hit = int(np.count_nonzero(ens.history[-1] <= strategy.d0 * 2.0 ** (-k - r)))
        p = hit / n_pairs
        out[k] = {"p_hat": p, "sigma": math.sqrt(max(p * (1 - p), 1e-300) / n_pairs), "ci": clopper_pearson(hit, n_pairs)}
    return out

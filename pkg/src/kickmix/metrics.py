"""Two-sided estimates of the dual-Lipschitz distance between laws.

For measures on H,

    |mu_1 - mu_2|_L* = sup { |int f dmu_1 - int f dmu_2| : |f|_inf <= 1, Lip(f) <= 1 }.

The supremum is not computable, so it is bracketed: a fixed dictionary of
admissible test functions gives a lower bound, and any coupling ``(U_1, U_2)``
of the two laws gives the upper bound ``E min(2, |U_1 - U_2|_H)``.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

import numpy as np

from kickmix.coupling import CoupledEnsemble, CouplingStrategy, KickedProcess, advance_coupled
from kickmix.errors import ConfigurationError, DomainError
from kickmix.harmonics import check_coeffs, truncation_of
from kickmix.sphere_ops import h_coords, norm_h, project_low

FLOOR = 1e-12
ORDER_ATOL = 1e-12


@dataclasses.dataclass(frozen=True)
class EmpiricalMeasure:
    samples: np.ndarray
    k: int = 0

    def __post_init__(self):
        s = check_coeffs(self.samples)
        if s.ndim != 3 or s.shape[0] < 1:
            raise DomainError("an empirical measure needs at least one sample")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self), 1.0 / len(self))


@dataclasses.dataclass(frozen=True)
class TestDictionary:
    """Clamped coordinate and low-mode energy functionals around ``anchor``.

    ``f(x) = clamp(<x - anchor, +-e_j>_H, -1, 1)`` for ``j < n_coords`` and
    ``f(x) = clamp(scale |P_N (x - anchor)|_H, 0, 1)`` for each ``(N, scale)``
    with ``scale <= 1``. Every functional has sup norm and Lipschitz constant
    at most 1.
    """

    anchor: np.ndarray
    n_coords: int
    energy_modes: tuple[int, ...] = ()
    energy_scales: tuple[float, ...] = ()

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.n_coords < 0:
            raise ConfigurationError("n_coords must be >= 0")
        if len(self.energy_modes) != len(self.energy_scales):
            raise ConfigurationError("one scale per energy functional")
        if any(not 0 < s <= 1 for s in self.energy_scales):
            raise ConfigurationError("energy scales must lie in (0, 1] to keep Lip <= 1")
        if len(self) == 0:
            raise ConfigurationError("the test dictionary is empty")

    def __len__(self) -> int:
        return 2 * self.n_coords + len(self.energy_modes)

    @classmethod
    def standard(cls, anchor: np.ndarray, n_couple: int) -> "TestDictionary":
        """``2 n_couple`` coordinate functionals and four energy functionals."""
        dim = truncation_of(anchor).dimension
        modes = tuple(min(m, dim) for m in (n_couple, n_couple, 2 * n_couple, dim))
        return cls(anchor, n_couple, modes, (1.0, 0.5, 1.0, 1.0))

    def evaluate(self, samples: np.ndarray) -> np.ndarray:
        """Functional values, shape ``(n_samples, len(self))``."""
        x = check_coeffs(samples) - self.anchor
        cols = []
        if self.n_coords:
            c = np.clip(h_coords(x)[..., : self.n_coords], -1.0, 1.0)
            cols += [c, -c]
        for n, s in zip(self.energy_modes, self.energy_scales):
            cols.append(np.clip(s * norm_h(project_low(x, n)), 0.0, 1.0)[..., None])
        return np.concatenate(cols, axis=-1)


def dual_lipschitz_lower(m1: EmpiricalMeasure, m2: EmpiricalMeasure, dictionary: TestDictionary) -> float:
    """``max_f |mean_{m1} f - mean_{m2} f|`` over the dictionary."""
    if truncation_of(m1.samples) != truncation_of(m2.samples):
        raise ConfigurationError("measures use different truncations")
    a = dictionary.evaluate(m1.samples).mean(axis=0)
    b = dictionary.evaluate(m2.samples).mean(axis=0)
    return float(np.max(np.abs(a - b)))


def coupling_upper(distances: np.ndarray) -> float:
    """``mean min(2, d)`` over the coupled pairs' distances."""
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise DomainError("no pairs")
    return float(np.mean(np.minimum(2.0, d)))


def coupling_upper_pairs(ens: CoupledEnsemble) -> float:
    return coupling_upper(ens.history[-1])


@dataclasses.dataclass
class MixingFit:
    k_values: np.ndarray
    lower_estimates: Optional[np.ndarray]
    upper_estimates: np.ndarray
    c_fit: float
    big_c_fit: float
    r_squared: float
    floored: bool = False
    lower_fit: Optional["MixingFit"] = None
    ordered: Optional[bool] = None

    @property
    def mixing(self) -> bool:
        return self.c_fit > 0

    def summary(self) -> dict:
        out = {
            "C_fit": self.big_c_fit,
            "c_fit": self.c_fit,
            "r2": self.r_squared,
            "floored": self.floored,
        }
        if self.ordered is not None:
            out["lower_le_upper"] = self.ordered
        if self.lower_fit is not None:
            out["lower"] = self.lower_fit.summary()
        return out


def fit_exponential(k_values: Sequence[float], values: Sequence[float]) -> MixingFit:
    """Least squares of ``log(value)`` against ``k``; ``value ~ C exp(-c k)``."""
    k = np.asarray(k_values, dtype=float)
    v = np.asarray(values, dtype=float)
    if k.shape != v.shape or k.ndim != 1:
        raise DomainError("k and values must be 1-D of equal length")
    usable = np.isfinite(v) & (v >= 0)
    if np.count_nonzero(usable) < 4:
        raise DomainError(f"need at least 4 usable points, got {np.count_nonzero(usable)}")
    k, v = k[usable], v[usable]
    floored = bool(np.any(v < FLOOR))
    y = np.log(np.maximum(v, FLOOR))
    slope, intercept = np.polyfit(k, y, 1)
    resid = y - (slope * k + intercept)
    flat = bool(np.ptp(y) == 0)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if flat else 1.0 - float(np.sum(resid**2)) / ss_tot
    c = 0.0 if flat else -float(slope)
    return MixingFit(k, None, v, c, math.exp(intercept), r2, floored)


def mixing_experiment(
    process: KickedProcess,
    strategy: CouplingStrategy,
    u0: np.ndarray,
    v0: np.ndarray,
    k_max: int,
    n_pairs: int,
    seed: int,
    threads: int = 1,
    n_dictionary: Optional[int] = None,
    first_id: int = 0,
) -> MixingFit:
    """Coupled chains from ``(u0, v0)``; brackets the distance between the two laws at each k.

    The dictionary is anchored at the pooled sample mean at each step, which
    keeps its functionals away from saturation.
    """
    if n_pairs < 100:
        raise ConfigurationError(f"n_pairs must be >= 100, got {n_pairs}")
    if k_max < 4:
        raise ConfigurationError(f"k_max must be >= 4, got {k_max}")
    n_dict = n_dictionary or max(strategy.n_couple, 1)
    ens = CoupledEnsemble.from_pair(u0, v0, n_pairs, first_id)
    ks, lower, upper = [], [], []
    for k in range(1, k_max + 1):
        ens = advance_coupled(process, ens, strategy, seed, threads)
        anchor = 0.5 * (ens.u1.mean(axis=0) + ens.u2.mean(axis=0))
        dictionary = TestDictionary.standard(anchor, n_dict)
        ks.append(k)
        lower.append(dual_lipschitz_lower(EmpiricalMeasure(ens.u1, k), EmpiricalMeasure(ens.u2, k), dictionary))
        upper.append(coupling_upper_pairs(ens))
    lower_a, upper_a = np.array(lower), np.array(upper)
    fit = fit_exponential(ks, upper_a)
    fit.lower_estimates = lower_a
    fit.ordered = bool(np.all(lower_a <= upper_a + ORDER_ATOL))
    try:
        fit.lower_fit = fit_exponential(ks, lower_a)
    except DomainError:
        fit.lower_fit = None
    return fit


def bootstrap_stderr(values: np.ndarray, rng: np.random.Generator, n_boot: int = 200) -> float:
    """Bootstrap standard error of ``coupling_upper`` over pairs."""
    v = np.minimum(2.0, np.asarray(values, dtype=float))
    idx = rng.integers(0, v.size, size=(n_boot, v.size))
    return float(np.std(v[idx].mean(axis=1), ddof=1))

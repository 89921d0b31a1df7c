"""Deterministic forcing models, stored as the stream function of the force field."""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np

from kickmix.errors import ConfigurationError, DomainError
from kickmix.harmonics import Truncation, truncation_of
from kickmix.sphere_ops import ZONAL_PSI_10, norm_h

KINDS = ("zero", "zonal_from_g", "almost_zonal", "general_bounded")

TimeFunction = Callable[[float], float]


@dataclasses.dataclass(frozen=True, eq=False)
class ForcingModel:
    """A bounded force ``f(t)`` in H.

    ``stream(t)`` returns the stream function of ``f(t)``. For
    ``general_bounded`` the table is sampled and held: ``f(t) = table[i]``
    for ``times[i] <= t < times[i + 1]``, and the last entry holds forever.
    """

    kind: str
    truncation: Truncation
    sup_norm_h: float
    g: Optional[TimeFunction] = None
    g_prime: Optional[TimeFunction] = None
    nu: float = 0.0
    perturbation: Optional[np.ndarray] = None
    delta: float = 0.0
    times: Optional[np.ndarray] = None
    table: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown force kind {self.kind!r}; choose from {KINDS}")

    @property
    def held(self) -> bool:
        """Whether the integrator should freeze the force over a step."""
        return self.kind == "general_bounded"

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def zonal_amplitude(self, t: float) -> float:
        """Coefficient of ``curl(sin(lat) n)`` in the zonal part of ``f(t)``."""
        if self.kind not in ("zonal_from_g", "almost_zonal"):
            return 0.0
        lam1 = 2.0
        return float(self.g_prime(t) + self.nu * lam1 * self.g(t))

    def stream(self, t: float) -> np.ndarray:
        trunc = self.truncation
        if self.kind == "zero":
            return trunc.zeros()
        if self.kind == "general_bounded":
            i = int(np.searchsorted(self.times, t, side="right")) - 1
            return self.table[max(i, 0)]
        psi = trunc.zeros()
        psi[1, 0] = self.zonal_amplitude(t) * ZONAL_PSI_10
        if self.kind == "almost_zonal":
            psi = psi + self.delta * self.perturbation
        return psi

    def zonal_solution(self, t: float) -> np.ndarray:
        """Stream function of ``g(t) curl(sin(lat) n)`` (zonal kinds only)."""
        if self.kind != "zonal_from_g":
            raise ConfigurationError(f"force kind {self.kind!r} has no closed-form zonal solution")
        psi = self.truncation.zeros()
        psi[1, 0] = self.g(t) * ZONAL_PSI_10
        return psi

    def sampled_sup(self, horizon: float = 20.0, samples: int = 4001) -> float:
        ts = np.linspace(0.0, horizon, samples)
        return float(max(norm_h(self.stream(t)) for t in ts))


def zero_force(trunc: Truncation) -> ForcingModel:
    return ForcingModel("zero", trunc, 0.0)


def _sampled_bound(fn: TimeFunction, horizon: float, samples: int, name: str) -> float:
    ts = np.linspace(0.0, horizon, samples)
    vals = np.abs(np.array([fn(t) for t in ts], dtype=float))
    if not np.all(np.isfinite(vals)):
        raise DomainError(f"{name} is not finite on [0, {horizon}]")
    half = samples // 2
    early, late = vals[: half + 1].max(), vals[half:].max()
    if late > 1.5 * early + 1e-12:
        raise DomainError(f"{name} appears unbounded (max grows from {early:.3g} to {late:.3g})")
    return float(vals.max())


def make_zonal_force(
    g: TimeFunction,
    g_prime: TimeFunction,
    nu: float,
    trunc: Truncation,
    horizon: float = 50.0,
    samples: int = 20001,
) -> ForcingModel:
    """Force whose exact solution is ``g(t) curl(sin(lat) n)``.

    ``f(t) = (g'(t) + nu lambda_1 g(t)) curl(sin(lat) n)``. Boundedness of g
    and g' is checked by sampling on ``[0, horizon]``; the recorded sup norm
    is the sampled maximum of ``|f(t)|_H``.
    """
    if nu <= 0:
        raise DomainError(f"nu must be > 0, got {nu}")
    _sampled_bound(g, horizon, samples, "g")
    _sampled_bound(g_prime, horizon, samples, "g'")
    amp = _sampled_bound(lambda t: g_prime(t) + 2.0 * nu * g(t), horizon, samples, "forcing amplitude")
    unit = float(norm_h(_unit_zonal(trunc)))
    return ForcingModel("zonal_from_g", trunc, amp * unit, g=g, g_prime=g_prime, nu=nu)


def _unit_zonal(trunc: Truncation) -> np.ndarray:
    psi = trunc.zeros()
    psi[1, 0] = ZONAL_PSI_10
    return psi


def make_almost_zonal_force(
    base: ForcingModel,
    perturbation: np.ndarray,
    delta: float,
    horizon: float = 50.0,
    samples: int = 5001,
) -> ForcingModel:
    """``base`` plus ``delta`` times a fixed pattern normalised to unit H norm."""
    if base.kind != "zonal_from_g":
        raise ConfigurationError("almost-zonal forces perturb a zonal_from_g force")
    if delta < 0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    p = np.asarray(perturbation, dtype=complex)
    if truncation_of(p) != base.truncation:
        raise ConfigurationError("perturbation truncation differs from the base force")
    size = float(norm_h(p))
    if size == 0:
        raise DomainError("perturbation pattern is zero")
    p = p / size
    force = dataclasses.replace(base, kind="almost_zonal", perturbation=p, delta=float(delta))
    sup = force.sampled_sup(horizon, samples)
    return dataclasses.replace(force, sup_norm_h=sup)


def make_table_force(times: np.ndarray, table: np.ndarray) -> ForcingModel:
    """Sample-and-hold force from a time-indexed table of stream functions."""
    times = np.asarray(times, dtype=float)
    table = np.asarray(table, dtype=complex)
    if times.ndim != 1 or table.shape[0] != times.size or times.size == 0:
        raise ConfigurationError("times and table must have matching leading length >= 1")
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("table times must be strictly increasing")
    if not np.all(np.isfinite(table)):
        raise DomainError("force table contains non-finite values")
    trunc = truncation_of(table)
    sup = float(np.max(norm_h(table)))
    return ForcingModel("general_bounded", trunc, sup, times=times, table=table)


def periodic_table_force(
    pattern: np.ndarray,
    amplitude: float,
    period: float,
    n_table: int = 64,
    horizon: float = 100.0,
) -> ForcingModel:
    """``amplitude * cos(2 pi t / period) * pattern`` (pattern normalised), held per table slot."""
    p = np.asarray(pattern, dtype=complex)
    p = p / float(norm_h(p))
    dt = period / n_table
    times = np.arange(0.0, horizon, dt)
    scale = amplitude * np.cos(2.0 * np.pi * times / period)
    return make_table_force(times, scale[:, None, None] * p[None])

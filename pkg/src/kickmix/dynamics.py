"""Deterministic solution operator of the rotating 2D Navier-Stokes equations.

The solver evolves the vorticity ``omega = lap(psi)`` of

    d omega/dt + J(psi, omega + 2 Omega sin(lat)) = nu lap(omega) + curl_n f,

where ``J(psi, 2 Omega sin(lat)) = 2 Omega d psi/d lon``. States are stream
function coefficient arrays with arbitrary leading batch axes. The viscous
term is integrated exactly; advection, Coriolis and forcing are explicit.

Two second-order exponential integrators are available:

``etdrk2``
    Cox-Matthews exponential time differencing. Steady states of the linear
    part with constant forcing are reproduced exactly.
``ifrk2``
    Integrating-factor Heun.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import math
from pathlib import Path
from typing import Optional

import numpy as np

from kickmix.errors import BlowUpError, ConfigurationError, DomainError
from kickmix.forcing import ForcingModel, zero_force
from kickmix.harmonics import Truncation, check_coeffs, truncation_of
from kickmix.sphere_ops import jacobian, norm_h, norm_v, project_low, sobolev_norm

INTEGRATORS = ("etdrk2", "ifrk2")
MAX_DT = 0.05


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    nu: float
    omega: float
    n_max: int
    dt: float = 1e-2
    integrator: str = "etdrk2"

    def __post_init__(self):
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ConfigurationError(f"nu must be a finite number > 0, got {self.nu}")
        if not (self.omega >= 0 and math.isfinite(self.omega)):
            raise ConfigurationError(f"omega must be a finite number >= 0, got {self.omega}")
        if not 0 < self.dt <= MAX_DT:
            raise ConfigurationError(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        Truncation(self.n_max)

    @property
    def truncation(self) -> Truncation:
        return Truncation(self.n_max)


def _phi(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``phi1 = (e^z - 1)/z`` and ``phi2 = (e^z - 1 - z)/z^2`` with small-z series."""
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    phi1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120, np.expm1(zs) / zs)
    phi2 = np.where(
        small,
        0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720,
        (np.expm1(zs) - zs) / zs**2,
    )
    return phi1, phi2


class Solver:
    """Solution operator ``S_{t,s}`` for one configuration and force."""

    def __init__(self, cfg: SolverConfig, force: Optional[ForcingModel] = None):
        self.cfg = cfg
        self.trunc = cfg.truncation
        self.force = force if force is not None else zero_force(self.trunc)
        if self.force.truncation != self.trunc:
            raise ConfigurationError(
                f"force truncation {self.force.truncation.n_max} differs from solver {cfg.n_max}"
            )
        self._lam = self.trunc.eigenvalues
        self._coriolis = 2.0 * cfg.omega * 1j * self.trunc.order * self.trunc.mask

    @functools.lru_cache(maxsize=8)
    def _factors(self, h: float):
        z = -self.cfg.nu * self._lam * h
        phi1, phi2 = _phi(z)
        return np.exp(z), h * phi1, h * phi2

    def _forcing(self, t: float) -> np.ndarray:
        return -self._lam * self.force.stream(t)

    def tendency(self, omega: np.ndarray, t: float) -> np.ndarray:
        """Explicit part ``-J(psi, omega) - 2 Omega d psi/d lon + curl_n f(t)``."""
        psi = np.divide(-omega, self._lam, out=np.zeros_like(omega), where=self._lam > 0)
        out = -jacobian(psi, omega) - self._coriolis * psi
        if not self.force.is_zero:
            out = out + self._forcing(t)
        return out

    def _step_vorticity(self, w: np.ndarray, t: float, h: float) -> np.ndarray:
        e, hphi1, hphi2 = self._factors(h)
        t2 = t if self.force.held else t + h
        n1 = self.tendency(w, t)
        if self.cfg.integrator == "etdrk2":
            a = e * w + hphi1 * n1
            return a + hphi2 * (self.tendency(a, t2) - n1)
        star = e * (w + h * n1)
        return e * w + 0.5 * h * (e * n1 + self.tendency(star, t2))

    def step(self, psi: np.ndarray, t: float, h: Optional[float] = None) -> np.ndarray:
        """Advance the stream function by one step of length ``h`` (default ``dt``)."""
        h = self.cfg.dt if h is None else float(h)
        w = -self._lam * check_coeffs(psi)
        with np.errstate(over="ignore", invalid="ignore"):
            w = self._step_vorticity(w, t, h)
        if not np.all(np.isfinite(w)):
            raise BlowUpError(t + h)
        return np.divide(-w, self._lam, out=np.zeros_like(w), where=self._lam > 0)

    def step_times(self, s: float, t: float) -> list[tuple[float, float]]:
        """(start, length) of each step from ``s`` to ``t``, with a final partial step."""
        if t < s:
            raise DomainError(f"evolve needs t >= s, got s={s}, t={t}")
        dt = self.cfg.dt
        n_full = int(math.floor((t - s) / dt + 1e-9))
        steps = [(s + i * dt, dt) for i in range(n_full)]
        rest = t - (s + n_full * dt)
        if rest > 1e-12 * max(1.0, abs(t)):
            steps.append((s + n_full * dt, rest))
        return steps

    def evolve(self, psi: np.ndarray, s: float, t: float) -> np.ndarray:
        """``S_{t,s} psi``."""
        psi = check_coeffs(psi)
        if truncation_of(psi) != self.trunc:
            raise ConfigurationError("state truncation differs from the solver")
        steps = self.step_times(s, t)
        if not steps:
            return psi.copy()
        w = -self._lam * psi
        with np.errstate(over="ignore", invalid="ignore"):
            for t0, h in steps:
                w = self._step_vorticity(w, t0, h)
                if not np.all(np.isfinite(w)):
                    raise BlowUpError(t0 + h)
        return np.divide(-w, self._lam, out=np.zeros_like(w), where=self._lam > 0)


def evolve(psi: np.ndarray, s: float, t: float, cfg: SolverConfig, force: Optional[ForcingModel] = None):
    return Solver(cfg, force).evolve(psi, s, t)


def step(psi: np.ndarray, t: float, cfg: SolverConfig, force: Optional[ForcingModel] = None):
    return Solver(cfg, force).step(psi, t)


@dataclasses.dataclass(frozen=True)
class AbsorbingEstimate:
    radius_h: float
    source: str = "sup|f|_H / (nu sqrt(lambda_1)), the large-time radius of the H energy bound"


def absorbing_radius(force: ForcingModel, cfg: SolverConfig) -> AbsorbingEstimate:
    lam1 = float(force.truncation.basis_eigenvalues[0])
    return AbsorbingEstimate(force.sup_norm_h / (cfg.nu * math.sqrt(lam1)))


def rossby_haurwitz(psi0: np.ndarray, t: float, nu: float, omega: float) -> np.ndarray:
    """Closed-form evolution of a single-degree state without forcing.

    Each coefficient evolves as ``exp(-nu lambda t) exp(i 2 Omega m t / lambda)``.
    """
    trunc = truncation_of(psi0)
    lam = trunc.eigenvalues
    lam_safe = np.where(lam > 0, lam, 1.0)
    phase = np.exp(-nu * lam * t + 1j * 2.0 * omega * trunc.order * t / lam_safe)
    return np.where(trunc.mask, psi0 * phase, 0.0)


@dataclasses.dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    n_low: int

    @property
    def norm_h(self) -> np.ndarray:
        return norm_h(self.states)

    @property
    def norm_v(self) -> np.ndarray:
        return norm_v(self.states)

    @property
    def norm_h2(self) -> np.ndarray:
        return sobolev_norm(self.states, 2.0)

    @property
    def energy_low(self) -> np.ndarray:
        return norm_h(project_low(self.states, self.n_low)) ** 2

    def write_csv(self, path: Path, snapshot_refs: Optional[list[str]] = None) -> None:
        refs = snapshot_refs or [""] * len(self.times)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "norm_H", "norm_V", "norm_H2", "energy_low_N", "coeffs_snapshot_ref"])
            for row in zip(self.times, self.norm_h, self.norm_v, self.norm_h2, self.energy_low, refs):
                w.writerow([repr(float(x)) for x in row[:5]] + [row[5]])


def record_trajectory(
    solver: Solver,
    psi0: np.ndarray,
    s: float,
    t: float,
    sample_every: float,
    n_low: int = 8,
) -> Trajectory:
    """States at ``s, s + sample_every, ...`` up to ``t``; the state batch axes are kept."""
    if sample_every <= 0:
        raise ConfigurationError(f"sample_every must be > 0, got {sample_every}")
    n = int(math.floor((t - s) / sample_every + 1e-9))
    times = s + sample_every * np.arange(n + 1)
    states = [check_coeffs(psi0).copy()]
    for a, b in zip(times[:-1], times[1:]):
        states.append(solver.evolve(states[-1], float(a), float(b)))
    return Trajectory(times, np.stack(states), n_low)

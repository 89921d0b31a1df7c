"""Pathwise checks of the energy estimates and of exponential stability.

Every check evaluates an inequality on sampled trajectories and reports the
smallest slack (right side minus left side); constants that are only known
to exist are fitted and reported.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np
from scipy import optimize

from kickmix.dynamics import Solver, Trajectory, record_trajectory
from kickmix.errors import ConfigurationError
from kickmix.forcing import ForcingModel
from kickmix.harmonics import truncation_of
from kickmix.rng import substream
from kickmix.sphere_ops import norm_h, norm_v

SLACK_RTOL = 1e-9
TRANSIENT = 0.2


@dataclasses.dataclass
class Check:
    holds: bool
    min_slack: float
    detail: dict = dataclasses.field(default_factory=dict)

    def to_json(self) -> dict:
        return {"holds": self.holds, "min_slack": self.min_slack, **self.detail}


def _check(lhs: np.ndarray, rhs: np.ndarray, **detail) -> Check:
    scale = max(float(np.max(np.abs(rhs))), float(np.max(np.abs(lhs))), 1e-300)
    slack = rhs - lhs
    return Check(bool(np.all(slack >= -SLACK_RTOL * scale)), float(np.min(slack)), detail)


def _cumulative_trapezoid(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Integral of ``y`` from ``t[0]`` to ``t[i]`` along axis 0."""
    dt = np.diff(t)
    shape = (-1,) + (1,) * (y.ndim - 1)
    inc = 0.5 * (y[1:] + y[:-1]) * dt.reshape(shape)
    return np.concatenate([np.zeros_like(y[:1]), np.cumsum(inc, axis=0)])


@dataclasses.dataclass
class EnergyReport:
    checks: dict

    @property
    def holds(self) -> bool:
        return all(c.holds for c in self.checks.values())

    def to_json(self) -> dict:
        return {name: c.to_json() for name, c in self.checks.items()}


def verify_energy_estimates(
    traj: Trajectory,
    nu: float,
    force: ForcingModel,
    paired: Optional[Trajectory] = None,
    k_trilinear: Optional[float] = None,
) -> EnergyReport:
    """Evaluate the energy inequalities along ``traj`` (and the difference ``traj - paired``).

    ``traj.states`` has shape ``(n_times, batch, ...)`` or ``(n_times, ...)``;
    times start at ``t0 = traj.times[0]``. Integrals use the trapezoid rule,
    which overestimates the convex, decaying integrands involved.
    """
    t = np.asarray(traj.times, dtype=float)
    tau = t - t[0]
    states = traj.states
    lam1 = float(truncation_of(states).basis_eigenvalues[0])
    f2 = force.sup_norm_h**2
    shape = (-1,) + (1,) * (states.ndim - 3)
    tau_b = tau.reshape(shape)
    h2 = norm_h(states) ** 2
    v2 = norm_v(states) ** 2
    h0, v0 = h2[0], v2[0]
    decay = np.exp(-lam1 * nu * tau_b)
    checks = {}

    rhs = h0 * decay + f2 / (nu**2 * lam1) * (1.0 - decay)
    checks["h_contraction"] = _check(h2, rhs)

    # sharp form from d|u|/dt <= -nu lambda_1 |u| + |f|, exact for degree-1 data without force
    sharp = np.sqrt(h0) * decay + force.sup_norm_h / (nu * lam1) * (1.0 - decay)
    checks["h_contraction_sharp"] = _check(np.sqrt(h2), sharp)

    integral = nu * _cumulative_trapezoid(v2, t)
    checks["h1_integral"] = _check(integral, h0 + tau_b / nu * f2)

    rhs = v0 * decay + f2 / (nu**2 * lam1) * (1.0 - decay)
    checks["h1_contraction"] = _check(v2, rhs)

    late = tau >= 0.5
    if np.count_nonzero(late) >= 1:
        x = (np.broadcast_to(h0, h2.shape) * decay)[late].ravel()
        y = np.full_like(x, f2)
        z = v2[late].ravel()
        k_fit, c1_fit = _fit_two_constants(x, y, z)
        checks["h1_from_h"] = _check(z, k_fit * x + c1_fit * y, K=k_fit, C1=c1_fit, finite=bool(math.isfinite(k_fit) and math.isfinite(c1_fit)))

    if paired is not None:
        if paired.states.shape != states.shape:
            raise ConfigurationError("paired trajectory must match the sampled states")
        w = states - paired.states
        w2 = norm_h(w) ** 2
        if k_trilinear is None:
            raise ConfigurationError("the difference bound needs a trilinear constant")
        k = k_trilinear
        expo = -nu * lam1 * tau_b + k**2 / nu**3 * f2 + k**2 / nu**2 * h0
        checks["difference_growth"] = _check(w2, w2[0] * np.exp(expo), k=k)
        after = tau >= 1.0
        if np.count_nonzero(after):
            w0 = np.sqrt(w2[0])
            wv = norm_v(w)[after]
            ratio = np.divide(wv, w0, out=np.zeros_like(wv), where=w0 > 0)
            c_fit = float(np.max(ratio))
            checks["h1_difference"] = _check(wv, c_fit * np.broadcast_to(w0, wv.shape), C=c_fit, finite=math.isfinite(c_fit))
    return EnergyReport(checks)


def _fit_two_constants(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> tuple[float, float]:
    """Smallest ``K + C1`` (non-negative) with ``K x + C1 y >= z`` for all samples."""
    if not np.any(y > 0):
        k = float(np.max(np.divide(z, x, out=np.zeros_like(z), where=x > 0)))
        return k, 0.0
    res = optimize.linprog(
        c=[1.0, 1.0],
        A_ub=-np.stack([x, y], axis=1),
        b_ub=-z,
        bounds=[(0, None), (0, None)],
        method="highs",
    )
    if not res.success:
        return math.inf, math.inf
    # tiny relative headroom so the fitted envelope is not violated by LP roundoff
    return float(res.x[0]) * (1 + 1e-9), float(res.x[1]) * (1 + 1e-9)


@dataclasses.dataclass
class DecayFit:
    alpha: float
    r_squared: float


def fit_decay_rate(t: np.ndarray, norms: np.ndarray, transient: float = TRANSIENT) -> Optional[DecayFit]:
    """Rate ``alpha`` in ``norm ~ C exp(-alpha t)`` after discarding the first ``transient`` fraction."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(norms, dtype=float)
    start = int(math.floor(transient * t.size))
    t, y = t[start:], y[start:]
    ok = y > 0
    if np.count_nonzero(ok) < 3:
        return None
    t, ly = t[ok], np.log(y[ok])
    slope, intercept = np.polyfit(t, ly, 1)
    resid = ly - (slope * t + intercept)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss == 0 else 1.0 - float(np.sum(resid**2)) / ss
    return DecayFit(-float(slope), r2)


@dataclasses.dataclass
class StabilityReport:
    case: str
    alphas: list
    alphas_squared: list
    skipped: int
    threshold_squared: Optional[float]
    violations: int
    times: np.ndarray = dataclasses.field(repr=False)
    norms: np.ndarray = dataclasses.field(repr=False)

    @property
    def min_alpha(self) -> float:
        return min(self.alphas) if self.alphas else math.nan

    @property
    def min_alpha_squared(self) -> float:
        return min(self.alphas_squared) if self.alphas_squared else math.nan

    @property
    def stable(self) -> bool:
        if self.violations or not self.alphas:
            return False
        if self.threshold_squared is None:
            return True
        return self.min_alpha_squared >= self.threshold_squared

    def to_json(self) -> dict:
        return {
            "case": self.case,
            "min_alpha": self.min_alpha,
            "min_alpha_squared": self.min_alpha_squared,
            "threshold_squared": self.threshold_squared,
            "alphas": self.alphas,
            "skipped": self.skipped,
            "violations": self.violations,
            "stable": self.stable,
        }


def verify_exponential_stability(
    solver: Solver,
    trials: int,
    radius: float = 1.0,
    t_end: float = 5.0,
    sample_every: float = 0.1,
    seed: int = 0,
    tolerance: float = 0.05,
    pairs: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> StabilityReport:
    """Fit the decay rate of differences of solutions.

    For a ``zonal_from_g`` force each trial perturbs the exact zonal solution
    by a random element of the ball of radius ``radius`` and the squared
    perturbation norm must decay at least at ``(1 - tolerance) 2 nu lambda_1``.
    Otherwise random pairs in the ball are compared and only decay is checked.
    """
    from kickmix.coupling import random_ball

    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    force = solver.force
    trunc = solver.trunc
    nu = solver.cfg.nu
    lam1 = float(trunc.basis_eigenvalues[0])
    rng = substream(seed, 4)
    zonal = force.kind == "zonal_from_g"
    if pairs is not None:
        u0, v0 = pairs
    elif zonal:
        base = force.zonal_solution(0.0)
        v0 = np.broadcast_to(base, (trials,) + base.shape).copy()
        u0 = v0 + random_ball(trunc, rng, trials, radius)
    else:
        u0 = random_ball(trunc, rng, trials, radius)
        v0 = random_ball(trunc, rng, trials, radius)
    n = u0.shape[0]
    if zonal and pairs is None:
        traj = record_trajectory(solver, u0, 0.0, t_end, sample_every)
        ref = np.stack([force.zonal_solution(float(s)) for s in traj.times])[:, None]
        diff = traj.states - ref
    else:
        traj = record_trajectory(solver, np.concatenate([u0, v0]), 0.0, t_end, sample_every)
        diff = traj.states[:, :n] - traj.states[:, n:]
    norms = norm_h(diff)
    alphas, alphas_sq, skipped, violations = [], [], 0, 0
    for i in range(n):
        if norms[0, i] == 0:
            skipped += 1
            continue
        fit = fit_decay_rate(traj.times, norms[:, i])
        fit_sq = fit_decay_rate(traj.times, norms[:, i] ** 2)
        if fit is None or fit_sq is None:
            # collapsed to exactly zero: decayed, rate unbounded
            alphas.append(math.inf)
            alphas_sq.append(math.inf)
            continue
        if fit.alpha <= 0:
            violations += 1
        alphas.append(fit.alpha)
        alphas_sq.append(fit_sq.alpha)
    threshold = (1.0 - tolerance) * 2.0 * nu * lam1 if zonal else None
    return StabilityReport(
        "zonal" if zonal else force.kind, alphas, alphas_sq, skipped, threshold, violations, traj.times, norms
    )

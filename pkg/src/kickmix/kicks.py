"""Random bounded kicks ``eta = sum_j b_j zeta_j e_j`` and 1D maximal couplings.

``e_j`` is the H-orthonormal eigenbasis in canonical order and each ``zeta_j``
has a density on ``[-1, 1]`` from one of three closed-form families:

``uniform``              ``p(x) = 1/2``
``triangular``           ``p(x) = 1 - |x|``
``truncated-quadratic``  ``p(x) = 3/4 (1 - x^2)``

All three are of bounded variation and positive at 0, and their total
variation distances to shifted copies have closed forms.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from kickmix.errors import ConfigurationError, DomainError
from kickmix.harmonics import Truncation
from kickmix.sphere_ops import from_h_coords

DENSITIES = ("uniform", "triangular", "truncated-quadratic")

DEFAULT_B_MIN = 0.05


def _check_density(density: str) -> None:
    if density not in DENSITIES:
        raise ConfigurationError(f"unknown density {density!r}; choose from {DENSITIES}")


def density_pdf(density: str, x: np.ndarray) -> np.ndarray:
    _check_density(density)
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) <= 1.0
    if density == "uniform":
        p = np.full_like(x, 0.5)
    elif density == "triangular":
        p = 1.0 - np.abs(x)
    else:
        p = 0.75 * (1.0 - x * x)
    return np.where(inside, p, 0.0)


def density_cdf(density: str, x: np.ndarray) -> np.ndarray:
    _check_density(density)
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    if density == "uniform":
        return 0.5 * (x + 1.0)
    if density == "triangular":
        return np.where(x < 0, 0.5 * (1 + x) ** 2, 1.0 - 0.5 * (1 - x) ** 2)
    return 0.5 + 0.75 * x - 0.25 * x**3


def sample_density(density: str, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF transform of uniforms ``u`` in ``[0, 1)``."""
    _check_density(density)
    u = np.asarray(u, dtype=float)
    if density == "uniform":
        return 2.0 * u - 1.0
    if density == "triangular":
        return np.where(u < 0.5, np.sqrt(2.0 * u) - 1.0, 1.0 - np.sqrt(2.0 * (1.0 - u)))
    # root in [-1, 1] of x^3 - 3x + 2 (2u - 1) = 0
    return 2.0 * np.sin(np.arcsin(np.clip(2.0 * u - 1.0, -1.0, 1.0)) / 3.0)


def mass_near_zero(density: str, eps: float) -> float:
    """``P(|zeta| < eps)``, positive for every ``eps > 0``."""
    e = min(eps, 1.0)
    return float(density_cdf(density, e) - density_cdf(density, -e))


def coordinate_tv_distance(density: str, shift: float) -> float:
    """Total variation distance between ``p`` and ``p(. - shift)``."""
    _check_density(density)
    s = abs(float(shift))
    if s > 2.0 + 1e-12:
        raise DomainError(f"|shift| must be <= 2, got {shift}")
    s = min(s, 2.0)
    if density == "uniform":
        return s / 2.0
    if density == "triangular":
        return 1.0 - (1.0 - s / 2.0) ** 2
    return 0.75 * s - s**3 / 16.0


def sample_maximal_coupling_1d(
    density: str,
    shift: float,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Maximal coupling of ``x ~ p`` and ``y ~ p(. - shift)``.

    With probability ``1 - TV`` a common value is drawn from the normalised
    overlap ``min(p, q)``; otherwise ``x`` and ``y`` are drawn from the
    normalised residuals ``p - min`` and ``q - min``, which have disjoint
    supports up to a null set. Returns ``(x, y, coalesced)``; scalars when
    ``size`` is None.
    """
    shift = np.asarray(shift, dtype=float)
    scalar = size is None and shift.ndim == 0
    n = 1 if size is None else int(size)
    shifts = np.broadcast_to(shift, (n,)) if shift.ndim == 0 else shift
    x, y, same = sample_maximal_coupling_batch(density, shifts, rng)
    if scalar:
        return float(x[0]), float(y[0]), bool(same[0])
    return x, y, same


def sample_maximal_coupling_batch(density: str, shifts: np.ndarray, rng: np.random.Generator):
    """Vectorised maximal coupling, one pair per entry of ``shifts``."""
    _check_density(density)
    shifts = np.asarray(shifts, dtype=float)
    if np.any(np.abs(shifts) > 2.0 + 1e-12):
        raise DomainError("|shift| must be <= 2")
    tv = np.array([coordinate_tv_distance(density, s) for s in shifts])
    same = rng.random(shifts.size) >= tv
    x = np.empty(shifts.size)
    y = np.empty(shifts.size)

    # overlap: x ~ p, accept with min(p, q)/p
    idx = np.flatnonzero(same)
    if idx.size:
        s = shifts[idx]
        common = _overlap_draw(density, s, rng)
        x[idx] = common
        y[idx] = common
    idx = np.flatnonzero(~same)
    if idx.size:
        s = shifts[idx]
        x[idx] = _residual_draw(density, s, rng, shifted=False)
        y[idx] = _residual_draw(density, s, rng, shifted=True)
    return x, y, same


def _overlap_draw(density: str, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(s.shape)
    pending = np.arange(s.size)
    while pending.size:
        sh = s[pending]
        v = sample_density(density, rng.random(pending.size))
        p = density_pdf(density, v)
        q = density_pdf(density, v - sh)
        acc = rng.random(pending.size) * p < np.minimum(p, q)
        out[pending[acc]] = v[acc]
        pending = pending[~acc]
    return out


def _residual_draw(density: str, s: np.ndarray, rng: np.random.Generator, shifted: bool) -> np.ndarray:
    """Draw from ``(p - min(p, q)) / TV`` (or the same with the roles swapped)."""
    out = np.empty(s.shape)
    pending = np.arange(s.size)
    while pending.size:
        sh = s[pending]
        v = sample_density(density, rng.random(pending.size))
        if shifted:
            v = v + sh
            p = density_pdf(density, v - sh)
            q = density_pdf(density, v)
        else:
            p = density_pdf(density, v)
            q = density_pdf(density, v - sh)
        acc = rng.random(pending.size) * p < p - np.minimum(p, q)
        out[pending[acc]] = v[acc]
        pending = pending[~acc]
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class KickLaw:
    """Kick amplitudes ``b_j`` over the canonical basis and one density family."""

    b: np.ndarray
    density: str
    truncation: Truncation

    def __post_init__(self):
        _check_density(self.density)
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 1:
            raise ConfigurationError("b must be one-dimensional")
        if b.size > self.truncation.dimension:
            raise ConfigurationError(
                f"{b.size} amplitudes exceed the basis dimension {self.truncation.dimension}"
            )
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ConfigurationError("amplitudes b_j must be finite and >= 0")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @property
    def n_kick(self) -> int:
        return int(self.b.size)

    @property
    def b0(self) -> float:
        return float(np.sum(self.b**2))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.b > 0)

    def coords_to_state(self, zeta: np.ndarray) -> np.ndarray:
        """``sum_j b_j zeta_j e_j`` as a stream function, batched over leading axes."""
        return from_h_coords(self.b * zeta, self.truncation)

    def draw_coords(self, rng: np.random.Generator, batch: tuple[int, ...] = ()) -> np.ndarray:
        return sample_density(self.density, rng.random(batch + (self.n_kick,)))


@dataclasses.dataclass(frozen=True)
class KickSample:
    eta: np.ndarray
    coordinates: np.ndarray


def zero_law(trunc: Truncation, density: str = "uniform") -> KickLaw:
    return KickLaw(np.zeros(0), density, trunc)


def sample_kick(law: KickLaw, rng: np.random.Generator) -> KickSample:
    zeta = law.draw_coords(rng)
    return KickSample(law.coords_to_state(zeta), zeta)


@dataclasses.dataclass(frozen=True)
class BigKickParams:
    m: int
    n: int
    d: float


def build_big_kick_law(
    params: BigKickParams,
    density: str,
    trunc: Truncation,
    b_min: float = DEFAULT_B_MIN,
) -> KickLaw:
    """Smallest amplitudes with ``b_1 >= 2D``, ``b_j >= 2D / sqrt(lambda_j)`` for ``j <= M``.

    ``lambda_j`` is the eigenvalue of the j-th canonical basis element, so
    ``lambda_1 = lambda_2 = lambda_3 = 2``. Coordinates ``M < j <= N`` get
    ``b_min``, as do binding coordinates when ``D = 0``.
    """
    if not 1 <= params.m <= params.n:
        raise ConfigurationError(f"need 1 <= M <= N, got M={params.m}, N={params.n}")
    if params.n > trunc.dimension:
        raise ConfigurationError(f"N={params.n} exceeds the basis dimension {trunc.dimension}")
    if params.d < 0:
        raise DomainError(f"D must be >= 0, got {params.d}")
    if b_min <= 0:
        raise ConfigurationError(f"b_min must be > 0, got {b_min}")
    lam = trunc.basis_eigenvalues[: params.n]
    b = np.full(params.n, float(b_min))
    bound = 2.0 * params.d / np.sqrt(lam[: params.m])
    bound[0] = 2.0 * params.d
    if params.d > 0:
        b[: params.m] = bound
    return KickLaw(b, density, trunc)


def law_with_amplitude(amplitude: float, n_kick: int, density: str, trunc: Truncation) -> KickLaw:
    """Equal amplitudes on the first ``n_kick`` basis directions."""
    return KickLaw(np.full(n_kick, float(amplitude)), density, trunc)

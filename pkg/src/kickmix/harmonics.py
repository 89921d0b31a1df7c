"""Scalar spherical-harmonic transforms on a Gauss-Legendre grid.

Coefficient arrays have shape ``(..., n_max + 1, n_max + 1)`` and are indexed
``[..., n, m]``. Only ``1 <= n <= n_max`` and ``0 <= m <= n`` are meaningful;
the degree-0 row and the ``m > n`` triangle are kept at zero. Negative orders
are implied by conjugate symmetry, so a real field is

    psi = sum_n c[n, 0] P[n, 0] + sum_{m > 0} 2 Re(c[n, m] P[n, m] e^{i m lon}).

``P[n, m]`` is fully normalised with the Condon-Shortley phase, so that
``Y[n, m] = P[n, m](sin lat) e^{i m lon}`` has unit L2 norm on the unit
sphere. In this convention ``Y[1, 0] = sqrt(3 / 4 pi) sin(lat)``.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from typing import Optional

import numpy as np

from kickmix.errors import ConfigurationError, DomainError

CONVENTION = "orthonormal-condon-shortley"

MAX_DEGREE = 512
# below this many longitudes the transforms are dense matrix products
DIRECT_LIMIT = 64
_MEAN_TOL = 1e-10


@dataclasses.dataclass(frozen=True)
class Truncation:
    """Triangular truncation at degree ``n_max`` (mean-zero fields only)."""

    n_max: int

    def __post_init__(self):
        if not isinstance(self.n_max, (int, np.integer)) or isinstance(self.n_max, bool):
            raise ConfigurationError(f"n_max must be an integer, got {self.n_max!r}")
        if self.n_max < 2:
            raise ConfigurationError(f"n_max must be >= 2, got {self.n_max}")
        if self.n_max > MAX_DEGREE:
            raise ConfigurationError(f"n_max must be <= {MAX_DEGREE}, got {self.n_max}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_max + 1, self.n_max + 1)

    @functools.cached_property
    def degree(self) -> np.ndarray:
        return np.arange(self.n_max + 1)[:, None] * np.ones(self.n_max + 1, dtype=int)[None, :]

    @functools.cached_property
    def order(self) -> np.ndarray:
        return np.ones(self.n_max + 1, dtype=int)[:, None] * np.arange(self.n_max + 1)[None, :]

    @functools.cached_property
    def mask(self) -> np.ndarray:
        return (self.degree >= 1) & (self.order <= self.degree)

    @functools.cached_property
    def eigenvalues(self) -> np.ndarray:
        """``n (n + 1)`` on valid entries, zero elsewhere."""
        return np.where(self.mask, self.degree * (self.degree + 1), 0).astype(float)

    @functools.cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each stored coefficient in an L2 sum (1 for m=0, 2 for m>0)."""
        return np.where(self.mask, np.where(self.order == 0, 1.0, 2.0), 0.0)

    @property
    def dimension(self) -> int:
        """Number of real degrees of freedom, ``n_max (n_max + 2)``."""
        return self.n_max * (self.n_max + 2)

    @functools.cached_property
    def canonical_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Degree, order and part (0 = cosine, 1 = sine) of each basis direction.

        Directions are sorted by eigenvalue, then by order with the cosine
        part before the sine part: (1,0), (1,1c), (1,1s), (2,0), (2,1c), ...
        """
        ns, ms, parts = [], [], []
        for n in range(1, self.n_max + 1):
            ns.append(n), ms.append(0), parts.append(0)
            for m in range(1, n + 1):
                ns.extend((n, n)), ms.extend((m, m)), parts.extend((0, 1))
        return np.array(ns), np.array(ms), np.array(parts)

    @functools.cached_property
    def basis_eigenvalues(self) -> np.ndarray:
        n = self.canonical_index[0]
        return (n * (n + 1)).astype(float)

    def zeros(self, batch: tuple[int, ...] = ()) -> np.ndarray:
        return np.zeros(batch + self.shape, dtype=complex)


def truncation_of(coeffs: np.ndarray) -> Truncation:
    coeffs = np.asarray(coeffs)
    if coeffs.ndim < 2 or coeffs.shape[-1] != coeffs.shape[-2]:
        raise ConfigurationError(f"not a coefficient array: shape {coeffs.shape}")
    return Truncation(coeffs.shape[-1] - 1)


def check_coeffs(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=complex)
    trunc = truncation_of(coeffs)
    if not np.all(np.isfinite(coeffs)):
        raise DomainError("coefficients contain NaN or Inf")
    if np.any(coeffs[..., ~trunc.mask] != 0):
        raise DomainError("coefficients outside the triangular truncation (or degree 0) are nonzero")
    return coeffs


def real_coords(coeffs: np.ndarray) -> np.ndarray:
    """Coordinates of ``coeffs`` in the real orthonormal basis, canonical order."""
    trunc = truncation_of(coeffs)
    n, m, part = trunc.canonical_index
    c = np.asarray(coeffs)[..., n, m]
    scale = np.where(m == 0, 1.0, math.sqrt(2.0))
    return np.where(part == 0, c.real, -c.imag) * scale


def from_real_coords(x: np.ndarray, trunc: Truncation) -> np.ndarray:
    """Inverse of :func:`real_coords`; ``x`` may have fewer entries than the dimension."""
    x = np.asarray(x, dtype=float)
    k = x.shape[-1]
    if k > trunc.dimension:
        raise ConfigurationError(f"{k} coordinates exceed basis dimension {trunc.dimension}")
    n, m, part = (a[:k] for a in trunc.canonical_index)
    scale = np.where(m == 0, 1.0, 1.0 / math.sqrt(2.0))
    out = trunc.zeros(x.shape[:-1])
    vals = x * scale
    np.add.at(out, (Ellipsis, n[part == 0], m[part == 0]), vals[..., part == 0])
    np.add.at(out, (Ellipsis, n[part == 1], m[part == 1]), -1j * vals[..., part == 1])
    return out


def random_coeffs(
    trunc: Truncation,
    rng: np.random.Generator,
    batch: tuple[int, ...] = (),
    slope: float = 0.0,
) -> np.ndarray:
    """Gaussian coefficients scaled by ``n ** -slope``, real on ``m = 0``."""
    x = rng.standard_normal(batch + (trunc.dimension,))
    n = trunc.canonical_index[0]
    return from_real_coords(x * n.astype(float) ** (-slope), trunc)


def _legendre_table(n_max: int, mu: np.ndarray) -> np.ndarray:
    """Normalised associated Legendre functions, shape ``(len(mu), n_max+1, n_max+1)``."""
    mu = np.asarray(mu, dtype=float)
    cos_lat = np.sqrt(1.0 - mu**2)
    p = np.zeros((mu.size, n_max + 1, n_max + 1))
    p[:, 0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, n_max + 1):
        p[:, m, m] = -math.sqrt((2 * m + 1) / (2.0 * m)) * cos_lat * p[:, m - 1, m - 1]
    for m in range(0, n_max):
        p[:, m + 1, m] = math.sqrt(2 * m + 3) * mu * p[:, m, m]
    for m in range(0, n_max + 1):
        for n in range(m + 2, n_max + 1):
            eps_n = math.sqrt((n * n - m * m) / (4.0 * n * n - 1.0))
            eps_prev = math.sqrt(((n - 1) ** 2 - m * m) / (4.0 * (n - 1) ** 2 - 1.0))
            p[:, n, m] = (mu * p[:, n - 1, m] - eps_prev * p[:, n - 2, m]) / eps_n
    return p


def _legendre_dlat(n_max: int, mu: np.ndarray, p_ext: np.ndarray) -> np.ndarray:
    """d/dlat of the table, from ``(1 - mu^2) dP/dmu = -n eps[n+1] P[n+1] + (n+1) eps[n] P[n-1]``."""
    cos_lat = np.sqrt(1.0 - mu**2)
    n = np.arange(n_max + 1)[:, None].astype(float)
    m = np.arange(n_max + 1)[None, :].astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        eps = np.sqrt(np.clip((n**2 - m**2) / (4.0 * n**2 - 1.0), 0.0, None))
        eps_next = np.sqrt(np.clip(((n + 1) ** 2 - m**2) / (4.0 * (n + 1) ** 2 - 1.0), 0.0, None))
    lower = np.zeros_like(p_ext[:, : n_max + 1, :])
    lower[:, 1:, :] = p_ext[:, :n_max, :]
    d = -n * eps_next * p_ext[:, 1 : n_max + 2, :] + (n + 1) * eps * lower
    d = d / cos_lat[:, None, None]
    valid = (m <= n)[None]
    return np.where(valid, d, 0.0)


@dataclasses.dataclass(frozen=True, eq=False)
class GaussGrid:
    """Gauss-Legendre latitudes by equispaced longitudes, with transform tables."""

    truncation: Truncation
    n_lat: int
    n_lon: int
    nodes: np.ndarray
    weights: np.ndarray
    dealiased: bool
    legendre: np.ndarray = dataclasses.field(repr=False)
    legendre_dlat: np.ndarray = dataclasses.field(repr=False)
    # order-major copies (m, n, lat) used by the batched transforms
    _synth: np.ndarray = dataclasses.field(repr=False)
    _synth_dlat: np.ndarray = dataclasses.field(repr=False)
    _analysis: np.ndarray = dataclasses.field(repr=False)
    # dense real matrices for small grids (None above DIRECT_LIMIT longitudes)
    _dense: Optional[dict] = dataclasses.field(default=None, repr=False)

    @property
    def cos_lat(self) -> np.ndarray:
        return np.sqrt(1.0 - self.nodes**2)

    @property
    def longitudes(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_lon) / self.n_lon

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Area integral over the unit sphere (exact for band-limited integrands)."""
        return (2.0 * np.pi / self.n_lon) * np.einsum("...lk,l->...", values, self.weights)


def grid_size(n_max: int, dealiased: bool) -> tuple[int, int]:
    if not dealiased:
        return n_max + 1, 2 * n_max + 1
    # +2 over the 3/2 rule so that cubic products of velocities (degree 3 n_max + 2)
    # are also integrated exactly.
    return math.ceil((3 * n_max + 3) / 2), 3 * n_max + 3


def make_grid(truncation: Truncation, dealiased: bool = False) -> GaussGrid:
    """Build (or fetch from cache) the grid for ``truncation``."""
    if not isinstance(truncation, Truncation):
        truncation = Truncation(truncation)
    return _make_grid(truncation.n_max, bool(dealiased))


@functools.lru_cache(maxsize=32)
def _make_grid(n_max: int, dealiased: bool) -> GaussGrid:
    trunc = Truncation(n_max)
    n_lat, n_lon = grid_size(n_max, dealiased)
    nodes, weights = np.polynomial.legendre.leggauss(n_lat)
    p_ext = _legendre_table(n_max + 1, nodes)
    table = np.ascontiguousarray(p_ext[:, : n_max + 1, : n_max + 1])
    dlat = _legendre_dlat(n_max, nodes, p_ext[:, :, : n_max + 1])
    synth = np.ascontiguousarray(table.transpose(2, 1, 0))
    synth_dlat = np.ascontiguousarray(dlat.transpose(2, 1, 0))
    analysis = np.ascontiguousarray(table.transpose(2, 0, 1) * (2.0 * np.pi * weights)[None, :, None])
    for arr in (nodes, weights, table, dlat, synth, synth_dlat, analysis):
        arr.setflags(write=False)
    grid = GaussGrid(
        trunc, n_lat, n_lon, nodes, weights, dealiased, table, dlat, synth, synth_dlat, analysis
    )
    if n_lon < DIRECT_LIMIT:
        grid = dataclasses.replace(grid, _dense=_dense_tables(grid))
    return grid


def _dense_tables(grid: GaussGrid) -> dict:
    """Dense real transform matrices, built by pushing unit vectors through the FFT path."""
    n1 = grid.truncation.n_max + 1
    k = n1 * n1
    g = grid.n_lat * grid.n_lon
    eye = np.eye(k).reshape(k, n1, n1)
    basis = np.concatenate([eye, 1j * eye])
    synth = _fft_synthesize(basis, grid).reshape(2 * k, g)
    d_lat, d_lon = _fft_gradients(basis, grid)
    grad = np.concatenate([d_lat.reshape(2 * k, g), d_lon.reshape(2 * k, g)], axis=1)
    deltas = np.eye(g).reshape(g, grid.n_lat, grid.n_lon)
    ana = _fft_analyze(deltas, grid, grid.truncation.n_max).reshape(g, k)
    tables = {
        "synth": synth,
        "grad": grad,
        "analysis": np.concatenate([ana.real, ana.imag], axis=1),
    }
    for arr in tables.values():
        arr.setflags(write=False)
    return tables


def _as_real(coeffs: np.ndarray) -> np.ndarray:
    flat = coeffs.reshape(coeffs.shape[:-2] + (-1,))
    return np.concatenate([flat.real, flat.imag], axis=-1)


def _per_order(x: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Contract axis -2 of ``x (..., a, m)`` with ``table (m, a, b)``, giving ``(..., b, m)``."""
    batch = x.shape[:-2]
    a, m = x.shape[-2:]
    xm = np.moveaxis(x.reshape((-1, a, m)), -1, 0)  # (m, B, a)
    out = np.matmul(xm.real, table) + 1j * np.matmul(xm.imag, table)
    return np.moveaxis(out, 0, -1).reshape(batch + (table.shape[-1], m))


def _pad(coeffs: np.ndarray, grid: GaussGrid) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    n_have = truncation_of(coeffs).n_max
    n_grid = grid.truncation.n_max
    if n_have > n_grid:
        raise ConfigurationError(f"grid truncation {n_grid} is below coefficient truncation {n_have}")
    if n_have == n_grid:
        return coeffs
    out = np.zeros(coeffs.shape[:-2] + (n_grid + 1, n_grid + 1), dtype=complex)
    out[..., : n_have + 1, : n_have + 1] = coeffs
    return out


def _to_grid(fourier: np.ndarray, grid: GaussGrid) -> np.ndarray:
    return np.fft.irfft(fourier, n=grid.n_lon, axis=-1, norm="forward")


def _fft_synthesize(c: np.ndarray, grid: GaussGrid) -> np.ndarray:
    return _to_grid(_per_order(c, grid._synth), grid)


def synthesize(coeffs: np.ndarray, grid: GaussGrid) -> np.ndarray:
    """Grid values ``(..., n_lat, n_lon)`` of the field with the given coefficients."""
    c = _pad(coeffs, grid)
    if grid._dense is None:
        return _fft_synthesize(c, grid)
    out = _as_real(c) @ grid._dense["synth"]
    return out.reshape(c.shape[:-2] + grid.shape)


def synthesize_gradients(coeffs: np.ndarray, grid: GaussGrid) -> tuple[np.ndarray, np.ndarray]:
    """``(d psi / d lat, (1 / cos lat) d psi / d lon)`` on the grid."""
    c = _pad(coeffs, grid)
    if grid._dense is None:
        return _fft_gradients(c, grid)
    out = _as_real(c) @ grid._dense["grad"]
    g = grid.n_lat * grid.n_lon
    shape = c.shape[:-2] + grid.shape
    return out[..., :g].reshape(shape), out[..., g:].reshape(shape)


def _fft_gradients(c: np.ndarray, grid: GaussGrid) -> tuple[np.ndarray, np.ndarray]:
    m = np.arange(c.shape[-1])
    d_lat = _to_grid(_per_order(c, grid._synth_dlat), grid)
    f_lon = _per_order(c * (1j * m), grid._synth)
    d_lon = _to_grid(f_lon, grid) / grid.cos_lat[:, None]
    return d_lat, d_lon


def analyze_full(values: np.ndarray, grid: GaussGrid, n_max: int | None = None) -> np.ndarray:
    """Projection onto all harmonics up to ``n_max``, degree 0 included."""
    values = np.asarray(values, dtype=float)
    if values.shape[-2:] != grid.shape:
        raise ConfigurationError(f"field shape {values.shape[-2:]} does not match grid {grid.shape}")
    n_grid = grid.truncation.n_max
    n_max = n_grid if n_max is None else n_max
    if n_max > n_grid:
        raise ConfigurationError(f"cannot analyze to degree {n_max} on a degree-{n_grid} grid")
    if grid._dense is None:
        c = _fft_analyze(values, grid, n_max)
    else:
        n1 = n_grid + 1
        flat = values.reshape(values.shape[:-2] + (-1,)) @ grid._dense["analysis"]
        k = n1 * n1
        c = (flat[..., :k] + 1j * flat[..., k:]).reshape(values.shape[:-2] + (n1, n1))
        c = c[..., : n_max + 1, : n_max + 1]
    tri = np.tril(np.ones((n_max + 1, n_max + 1), dtype=bool))
    return np.where(tri, c, 0.0)


def _fft_analyze(values: np.ndarray, grid: GaussGrid, n_max: int) -> np.ndarray:
    fourier = np.fft.rfft(values, axis=-1, norm="forward")[..., : n_max + 1]
    c = _per_order(fourier, grid._analysis[: n_max + 1, :, : n_max + 1])
    c[..., 0] = c[..., 0].real
    return c


def analyze(
    values: np.ndarray,
    grid: GaussGrid,
    n_max: int | None = None,
    check_mean: bool = True,
) -> np.ndarray:
    """Spectral coefficients of a mean-zero grid field.

    Raises :class:`DomainError` when the area mean exceeds ``1e-10`` of the
    field RMS; the degree-0 component is dropped otherwise.
    """
    c = analyze_full(values, grid, n_max)
    if check_mean:
        mean = c[..., 0, 0].real / math.sqrt(4.0 * math.pi)
        rms = np.sqrt(grid.integrate(np.asarray(values, dtype=float) ** 2) / (4.0 * math.pi))
        if np.any(np.abs(mean) > _MEAN_TOL * rms):
            raise DomainError("field has a nonzero area mean; only mean-zero fields are representable")
    c[..., 0, 0] = 0.0
    return c


def l2_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """L2 inner product of the two real fields, computed from coefficients."""
    trunc = truncation_of(a)
    return np.einsum("...nm,nm->...", (a * np.conj(b)).real, trunc.weights)

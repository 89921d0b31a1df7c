"""Operators on divergence-free velocity fields, carried by their stream functions.

A velocity state is the coefficient array of its stream function ``psi``;
the velocity is ``u = n x grad(psi)`` and the vorticity ``curl_n u = lap(psi)``.
In local (east, north) components ``u = (-d psi/d lat, (1/cos lat) d psi/d lon)``.

Sobolev norms use the homogeneous spectral form
``|u|_s^2 = sum lambda_n^(s+1) |psi_nm|^2`` with ``lambda_n = n (n + 1)``, so
``s = 0`` is the H (energy) norm and ``s = 1`` the V norm.
"""

from __future__ import annotations

import math

import numpy as np

from kickmix.errors import ConfigurationError, DomainError
from kickmix.harmonics import (
    Truncation,
    analyze,
    from_real_coords,
    make_grid,
    real_coords,
    synthesize,
    synthesize_gradients,
    truncation_of,
)

# Stream function of the zonal field ``curl(sin(lat) n)``: that field is
# ``-n x grad(sin lat)``, so psi = -sin(lat) = -sqrt(4 pi / 3) Y[1, 0].
ZONAL_PSI_10 = -math.sqrt(4.0 * math.pi / 3.0)


def _same_truncation(*arrays: np.ndarray) -> Truncation:
    truncs = {truncation_of(a) for a in arrays}
    if len(truncs) != 1:
        raise ConfigurationError(f"truncation mismatch: {sorted(t.n_max for t in truncs)}")
    return truncs.pop()


def laplacian(x: np.ndarray) -> np.ndarray:
    trunc = truncation_of(x)
    return -trunc.eigenvalues * x


def inv_laplacian(x: np.ndarray) -> np.ndarray:
    trunc = truncation_of(x)
    lam = trunc.eigenvalues
    return np.divide(-x, lam, out=np.zeros_like(x, dtype=complex), where=lam > 0)


def stokes(psi: np.ndarray, power: float = 1.0) -> np.ndarray:
    """Stream function of ``A^power u`` where ``A = curl curl_n`` (eigenvalues n(n+1))."""
    trunc = truncation_of(psi)
    lam = trunc.eigenvalues
    return np.where(lam > 0, lam**power, 0.0) * psi


def sobolev_norm(psi: np.ndarray, s: float = 0.0) -> np.ndarray:
    if s < 0:
        raise DomainError(f"Sobolev index must be >= 0, got {s}")
    trunc = truncation_of(psi)
    lam = trunc.eigenvalues
    w = trunc.weights * np.where(lam > 0, lam ** (s + 1.0), 0.0)
    return np.sqrt(np.einsum("...nm,nm->...", np.abs(psi) ** 2, w))


def norm_h(psi: np.ndarray) -> np.ndarray:
    return sobolev_norm(psi, 0.0)


def norm_v(psi: np.ndarray) -> np.ndarray:
    return sobolev_norm(psi, 1.0)


def inner_h(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """H inner product ``<u_a, u_b> = sum lambda w Re(a conj b)``."""
    trunc = _same_truncation(a, b)
    return np.einsum("...nm,nm->...", (a * np.conj(b)).real, trunc.weights * trunc.eigenvalues)


def h_coords(psi: np.ndarray) -> np.ndarray:
    """Coordinates of the velocity in the H-orthonormal basis ``e_j`` (canonical order)."""
    trunc = truncation_of(psi)
    return real_coords(psi) * np.sqrt(trunc.basis_eigenvalues)


def from_h_coords(x: np.ndarray, trunc: Truncation) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lam = trunc.basis_eigenvalues[: x.shape[-1]]
    return from_real_coords(x / np.sqrt(lam), trunc)


def zonal_velocity(amplitude: float, trunc: Truncation) -> np.ndarray:
    """Stream function of ``amplitude * curl(sin(lat) n)``."""
    psi = trunc.zeros()
    psi[1, 0] = amplitude * ZONAL_PSI_10
    return psi


def project_low(psi: np.ndarray, n_keep: int) -> np.ndarray:
    """Keep the first ``n_keep`` directions of the canonical eigenbasis."""
    trunc = truncation_of(psi)
    if not 1 <= n_keep <= trunc.dimension:
        raise ConfigurationError(f"N must lie in [1, {trunc.dimension}], got {n_keep}")
    x = real_coords(psi)
    return from_real_coords(x[..., :n_keep], trunc)


def project_high(psi: np.ndarray, n_keep: int) -> np.ndarray:
    return psi - project_low(psi, n_keep)


def velocity(psi: np.ndarray, grid) -> tuple[np.ndarray, np.ndarray]:
    """East and north velocity components on ``grid``."""
    d_lat, d_lon = synthesize_gradients(psi, grid)
    return -d_lat, d_lon


def jacobian(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``J(a, b) = (1/cos lat)(da/dlon db/dlat - db/dlon da/dlat)``, truncated.

    Evaluated by the transform method on the dealiased grid.
    """
    trunc = _same_truncation(a, b)
    grid = make_grid(trunc, dealiased=True)
    a_lat, a_lon = synthesize_gradients(a, grid)
    b_lat, b_lon = synthesize_gradients(b, grid)
    return analyze(a_lon * b_lat - b_lon * a_lat, grid, check_mean=False)


def _fields(psi: np.ndarray, grid):
    """Velocity components and vorticity of ``psi`` on ``grid``."""
    u_e, u_n = velocity(psi, grid)
    return u_e, u_n, synthesize(laplacian(psi), grid)


def trilinear_b(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Symmetrised trilinear form, by quadrature on the dealiased grid.

    ``b(u,v,w) = 1/2 int(-(u x v).curl_n w + (curl_n u x v).w - (u x curl_n v).w)``.
    """
    trunc = _same_truncation(u, v, w)
    grid = make_grid(trunc, dealiased=True)
    ue, un, uz = _fields(u, grid)
    ve, vn, vz = _fields(v, grid)
    we, wn, wz = _fields(w, grid)
    uxv = ue * vn - un * ve  # normal component of u x v
    # curl_n u x v = uz (n x v), with n x v = (-vn, ve)
    term2 = uz * (-vn * we + ve * wn)
    # u x curl_n v = -vz (n x u)
    term3 = -vz * (-un * we + ue * wn)
    return 0.5 * grid.integrate(-uxv * wz + term2 - term3)


def curl_cross_pairing(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``<curl_n a x b, c>`` by quadrature."""
    trunc = _same_truncation(a, b, c)
    grid = make_grid(trunc, dealiased=True)
    az = synthesize(laplacian(a), grid)
    be, bn = velocity(b, grid)
    ce, cn = velocity(c, grid)
    return grid.integrate(az * (-bn * ce + be * cn))


CROSS_FORMS = {
    # name: (first, second, third) built from (u, v); "Av" is A applied to v
    "curl_u_x_v.v": ("u", "v", "v"),
    "curl_u_x_u.v": ("u", "u", "v"),
    "curl_v_x_u.Av": ("v", "u", "Av"),
    "curl_v_x_u.v": ("v", "u", "v"),
    "curl_u_x_v.Av": ("u", "v", "Av"),
}


def cross_pairing(u: np.ndarray, v: np.ndarray, form: str) -> np.ndarray:
    """One of the five curl-cross pairings, selected by name (see ``CROSS_FORMS``).

    ``curl_u_x_v.v`` vanishes for all u, v; ``curl_u_x_u.v`` and
    ``curl_v_x_u.Av`` vanish for zonal u; ``curl_v_x_u.v`` and
    ``curl_u_x_v.Av`` vanish for u a multiple of ``curl(sin(lat) n)``.
    """
    try:
        names = CROSS_FORMS[form]
    except KeyError:
        raise ConfigurationError(f"unknown pairing {form!r}; choose from {sorted(CROSS_FORMS)}") from None
    table = {"u": u, "v": v, "Av": stokes(v)}
    return curl_cross_pairing(*(table[k] for k in names))


def coriolis_pairing(psi: np.ndarray, r: float, omega: float) -> np.ndarray:
    """``<l n x u, A^r u>`` with ``l = 2 omega sin(lat)``, by quadrature."""
    if omega < 0:
        raise DomainError(f"omega must be >= 0, got {omega}")
    trunc = truncation_of(psi)
    if omega == 0:
        return np.zeros(psi.shape[:-2])
    grid = make_grid(trunc, dealiased=True)
    ue, un = velocity(psi, grid)
    we, wn = velocity(stokes(psi, r), grid)
    coriolis = 2.0 * omega * grid.nodes[:, None]
    return grid.integrate(coriolis * (-un * we + ue * wn))


def advection_pairing(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``<-u x curl_n u, w>`` through the Jacobian: ``int J(lap psi_u, psi_u) psi_w``."""
    trunc = _same_truncation(u, w)
    jac = jacobian(laplacian(u), u)
    return np.einsum("...nm,nm->...", (jac * np.conj(w)).real, trunc.weights)


def divergence_on_grid(psi: np.ndarray, grid) -> np.ndarray:
    """``div u = (1/cos)(d u_lon/d lon + d(u_lat cos)/d lat)`` on the grid.

    The longitude derivative is taken by FFT of the gridded east velocity and
    the latitude derivative through the Legendre derivative table, so the
    two routes are independent.
    """
    trunc = truncation_of(psi)
    u_e, _ = velocity(psi, grid)
    k = np.fft.rfftfreq(grid.n_lon, d=1.0 / grid.n_lon)
    du_e = np.fft.irfft(1j * k * np.fft.rfft(u_e, axis=-1), n=grid.n_lon, axis=-1)
    # u_lat cos = d psi / d lon
    d_flux, _ = synthesize_gradients(1j * trunc.order * psi, grid)
    return (du_e + d_flux) / grid.cos_lat[:, None]


def _trilinear_ratio(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    scale = np.sqrt(norm_h(u) * norm_v(u)) * norm_v(v) * np.sqrt(norm_h(w) * norm_v(w))
    b = np.abs(trilinear_b(u, v, w))
    return np.divide(b, scale, out=np.zeros_like(b), where=scale > 1e-300)


def fit_trilinear_constant(
    trunc: Truncation,
    rng: np.random.Generator,
    restarts: int = 8,
    sweeps: int = 10,
    slope: float = 2.0,
) -> float:
    """Empirical lower estimate of the best constant k in
    ``|b(u,v,w)| <= k |u|^.5 |u|_1^.5 |v|_1 |w|^.5 |w|_1^.5``.

    Random triples give very weak estimates because b cancels heavily, so
    each restart runs coordinate ascent: b is linear in each argument, and the
    argument being updated is replaced by the best of a few spectral
    reweightings of the gradient of b with respect to it.
    """
    from kickmix.harmonics import random_coeffs

    basis = from_h_coords(np.eye(trunc.dimension), trunc)
    lam = trunc.basis_eigenvalues
    best = 0.0
    for _ in range(restarts):
        args = [random_coeffs(trunc, rng, slope=slope) for _ in range(3)]
        ratio = float(_trilinear_ratio(*args))
        for _ in range(sweeps):
            for which in range(3):
                probe = [np.broadcast_to(a, basis.shape) for a in args]
                probe[which] = basis
                g = trilinear_b(*probe)
                if not np.any(g):
                    continue
                cands = from_h_coords(np.stack([g / lam**p for p in (0.0, 0.25, 0.5, 0.75, 1.0)]), trunc)
                trial = [np.broadcast_to(a, cands.shape) for a in args]
                trial[which] = cands
                r = _trilinear_ratio(*trial)
                i = int(np.argmax(r))
                if r[i] > ratio:
                    ratio = float(r[i])
                    args[which] = cands[i]
        best = max(best, ratio)
    return best


def _zonal_part(psi: np.ndarray) -> np.ndarray:
    out = np.zeros_like(psi)
    out[..., 0] = psi[..., 0].real
    return out


def identity_suite(trunc: Truncation, rng: np.random.Generator, n_fields: int = 200) -> dict:
    """Largest relative residual of each vanishing pairing over random fields.

    Each residual is divided by a natural scale: the product of the norms of
    the arguments in which the pairing is bounded.
    """
    from kickmix.harmonics import random_coeffs

    u, v, w = (random_coeffs(trunc, rng, (n_fields,), slope=1.0) for _ in range(3))
    z = _zonal_part(random_coeffs(trunc, rng, (n_fields,), slope=1.0))
    s = zonal_velocity(1.0, trunc) * rng.uniform(-2.0, 2.0, (n_fields, 1, 1))
    nv = norm_v
    n2 = lambda x: sobolev_norm(x, 2.0)  # noqa: E731
    av = stokes(v)
    res = {}

    def put(name, value, scale):
        res[name] = float(np.max(np.abs(value) / scale))

    put("b(u,v,v)", trilinear_b(u, v, v), nv(u) * nv(v) ** 2)
    put("b(v,v,Av)", trilinear_b(v, v, av), nv(v) ** 2 * n2(v))
    put("curl_u_x_v.v", cross_pairing(u, v, "curl_u_x_v.v"), nv(u) * nv(v) ** 2)
    put("curl_u_x_u.v (zonal u)", cross_pairing(z, v, "curl_u_x_u.v"), nv(z) ** 2 * nv(v))
    put("curl_v_x_u.Av (zonal u)", cross_pairing(z, v, "curl_v_x_u.Av"), nv(z) * nv(v) * n2(v))
    put("curl_v_x_u.v (u = g curl sin)", cross_pairing(s, v, "curl_v_x_u.v"), nv(s) * nv(v) ** 2)
    put("curl_u_x_v.Av (u = g curl sin)", cross_pairing(s, v, "curl_u_x_v.Av"), nv(s) * nv(v) * n2(v))
    for r in (0.0, 0.5, 1.0, 2.0):
        put(f"coriolis r={r:g}", coriolis_pairing(u, r, 1.0), norm_h(u) * norm_h(stokes(u, r)))
    put("J(a,a)", norm_h(jacobian(u, u)), nv(u) ** 2)
    put("b(u,u,w) - jacobian route", trilinear_b(u, u, w) - advection_pairing(u, w), nv(u) ** 2 * nv(w))
    grid = make_grid(trunc, dealiased=True)
    div = divergence_on_grid(u, grid)
    put("div u", np.sqrt(grid.integrate(div**2)), nv(u))
    return res

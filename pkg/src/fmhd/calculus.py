"""Differential and algebraic operators on fields, and a numerical
verification suite for the vector-calculus identities the solver relies on.

All differential operators act in spectral space and are exact for
band-limited fields.  Products of fields are evaluated pointwise at the
collocation points; operators returning spectral products apply the grid's
dealias mask on the way back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    Grid,
    PhysicalField,
    SpectralField,
    _fwd,
    _inv,
    _require_same_grid,
    project_divergence_free,
    random_field,
)


@dataclass
class TensorField:
    """Gradient tensor samples, values[i, j] = d u_i / d x_j, shape (3, 3, n, n, n)."""

    grid: Grid
    values: np.ndarray


def curl(u: SpectralField) -> SpectralField:
    """Spectral curl, (curl u)^(k) = i k x u^(k)."""
    kx, ky, kz = u.grid.kd_broadcast()
    c = u.coeffs
    out = np.empty_like(c)
    out[0] = 1j * (ky * c[2] - kz * c[1])
    out[1] = 1j * (kz * c[0] - kx * c[2])
    out[2] = 1j * (kx * c[1] - ky * c[0])
    return SpectralField(u.grid, out)


def divergence(u: SpectralField) -> SpectralField:
    """Spectral divergence i k . u^(k), returned as a 1-component field."""
    kx, ky, kz = u.grid.kd_broadcast()
    c = u.coeffs
    out = 1j * (kx * c[0] + ky * c[1] + kz * c[2])
    return SpectralField(u.grid, out[np.newaxis])


def laplacian(u: SpectralField) -> SpectralField:
    """Multiply every mode by -|k|^2 (any number of components)."""
    return SpectralField(u.grid, -u.grid.k2 * u.coeffs)


def scalar_gradient(q: SpectralField) -> SpectralField:
    """Gradient of a 1-component field, returned with 3 components."""
    if q.ncomp != 1:
        raise ValueError("scalar_gradient expects a 1-component field")
    kx, ky, kz = q.grid.kd_broadcast()
    c = q.coeffs[0]
    out = np.stack([1j * kx * c, 1j * ky * c, 1j * kz * c])
    return SpectralField(q.grid, out)


def gradient_coeffs(u: SpectralField) -> np.ndarray:
    """All partials in spectral space, shape (c, 3, n, n, n): [i, j] = (d_j u_i)^."""
    kx, ky, kz = u.grid.kd_broadcast()
    c = u.coeffs
    out = np.empty((c.shape[0], 3) + c.shape[1:], dtype=complex)
    out[:, 0] = 1j * kx * c
    out[:, 1] = 1j * ky * c
    out[:, 2] = 1j * kz * c
    return out


def gradient_vec(u: SpectralField) -> TensorField:
    """The nine partials (d_j u_i) as physical-space samples."""
    return TensorField(u.grid, _inv(gradient_coeffs(u)))


def leray_project(w: SpectralField) -> SpectralField:
    """Orthogonal projection onto divergence-free fields; the mean passes through."""
    return SpectralField(w.grid, project_divergence_free(w.coeffs, w.grid))


def cross(u: PhysicalField, v: PhysicalField) -> PhysicalField:
    """Pointwise cross product."""
    _require_same_grid(u.grid, v.grid)
    return PhysicalField(u.grid, np.cross(u.values, v.values, axis=0))


def dot(u: PhysicalField, v: PhysicalField) -> np.ndarray:
    """Pointwise dot product, returned as a bare (n, n, n) array."""
    _require_same_grid(u.grid, v.grid)
    return np.einsum("i...,i...->...", u.values, v.values)


def apply_mask(u: SpectralField, mask: np.ndarray) -> SpectralField:
    return SpectralField(u.grid, u.coeffs * mask)


def convective(u: SpectralField, w: SpectralField) -> SpectralField:
    """(u . grad) w, evaluated pseudo-spectrally and dealiased."""
    _require_same_grid(u.grid, w.grid)
    uvals = _inv(u.coeffs)
    gradw = _inv(gradient_coeffs(w))  # (3, 3, n, n, n)
    advected = np.einsum("j...,ij...->i...", uvals, gradw)
    return SpectralField(u.grid, _fwd(advected) * u.grid.dealias_mask)


def l2_residual(a: np.ndarray, b: np.ndarray) -> float:
    """Relative L2 residual ||a - b|| / max(||a||, ||b||, tiny)."""
    num = float(np.linalg.norm((a - b).ravel()))
    den = max(float(np.linalg.norm(a.ravel())), float(np.linalg.norm(b.ravel())), 1e-300)
    return num / den


@dataclass
class IdentityCheck:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.residual < self.threshold


@dataclass
class IdentityReport:
    checks: list[IdentityCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_table(self) -> str:
        lines = [f"{'identity':<28} {'residual':>12} {'threshold':>10}  status"]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(f"{c.name:<28} {c.residual:>12.3e} {c.threshold:>10.1e}  {status}")
        return "\n".join(lines)


IDENTITY_THRESHOLD = 1e-11


def identity_suite(grid: Grid, seed: int = 0) -> IdentityReport:
    """Check the four structural identities on random fields.

    Inputs are band-limited to half the dealias cutoff so that the quadratic
    products on both sides are exactly representable on the grid and the
    identities hold to round-off.
    """
    rng = np.random.default_rng(int(seed))
    scale = 2 * np.pi / grid.box_length
    half_cut = np.floor(grid.dealias_cutoff / (2.0 * scale)) * scale
    draw = lambda: random_field(grid, rng, decay_exponent=4.0, k_cutoff=half_cut)
    u = draw()
    v = draw()
    w = draw()

    checks = [
        IdentityCheck("curl_of_cross_product", curl_cross_residual(u, v), IDENTITY_THRESHOLD),
        IdentityCheck("double_curl_decomposition", double_curl_residual(u), IDENTITY_THRESHOLD),
        IdentityCheck("vector_triple_product", triple_product_residual(u, v, w), IDENTITY_THRESHOLD),
        IdentityCheck("laplacian_of_square", laplacian_square_residual(u), IDENTITY_THRESHOLD),
    ]
    return IdentityReport(checks)


def curl_cross_residual(u: SpectralField, v: SpectralField, flip_sign: bool = False) -> float:
    """curl(u x v) against u (div v) - v (div u) + (v . grad) u - (u . grad) v.

    flip_sign mis-signs the convective pair, used to verify the check itself
    can fail."""
    uvals = _inv(u.coeffs)
    vvals = _inv(v.coeffs)
    lhs = curl(SpectralField(u.grid, _fwd(np.cross(uvals, vvals, axis=0)))).coeffs

    div_u = _inv(divergence(u).coeffs)[0]
    div_v = _inv(divergence(v).coeffs)[0]
    sign = -1.0 if flip_sign else 1.0
    rhs_phys = uvals * div_v - vvals * div_u
    rhs = _fwd(rhs_phys) + sign * (convective(v, u).coeffs - convective(u, v).coeffs)
    return l2_residual(lhs, rhs)


def double_curl_residual(u: SpectralField) -> float:
    """curl(curl u) against grad(div u) - laplacian(u), mode by mode."""
    lhs = curl(curl(u)).coeffs
    rhs = scalar_gradient(divergence(u)).coeffs - laplacian(u).coeffs
    return l2_residual(lhs, rhs)


def triple_product_residual(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """u x (v x w) against (u . w) v - (u . v) w, pointwise."""
    up, vp, wp = _inv(u.coeffs), _inv(v.coeffs), _inv(w.coeffs)
    lhs = np.cross(up, np.cross(vp, wp, axis=0), axis=0)
    rhs = np.einsum("i...,i...->...", up, wp) * vp - np.einsum("i...,i...->...", up, vp) * wp
    return l2_residual(lhs, rhs)


def laplacian_square_residual(u: SpectralField) -> float:
    """laplacian(|u|^2) against 2 |grad u|^2 + 2 (u . laplacian u)."""
    uvals = _inv(u.coeffs)
    sq = np.einsum("i...,i...->...", uvals, uvals)
    lhs = _inv(laplacian(SpectralField(u.grid, _fwd(sq)[np.newaxis])).coeffs)[0]
    grad_u = _inv(gradient_coeffs(u))
    lap_u = _inv(laplacian(u).coeffs)
    rhs = 2.0 * np.einsum("ij...,ij...->...", grad_u, grad_u) + 2.0 * np.einsum(
        "i...,i...->...", uvals, lap_u
    )
    return l2_residual(lhs, rhs)

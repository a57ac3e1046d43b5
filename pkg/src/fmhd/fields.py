"""Periodic grids, spectral/physical vector fields, transforms, random initial
data and the binary checkpoint format.

Fields live on the torus [0, L)^3 sampled at n points per axis.  The working
representation is the array of Fourier coefficients with the convention

    u(x) = sum_k  c(k) exp(i k . x),        c(k) = (1/n^3) sum_j u(x_j) exp(-i k . x_j),

so the k = 0 coefficient carries the mean of the field and single-mode
examples have coefficients of order one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi

#: relative imaginary residue tolerated when transforming back to physical space
IMAG_RESIDUE_TOL = 1e-12


class FieldError(ValueError):
    """Invalid field data: non-finite entries or broken conjugate symmetry."""


def _spectral_axes_reflect(c: np.ndarray) -> np.ndarray:
    """Return c evaluated at -k, i.e. index j -> (n - j) mod n on each spatial axis."""
    axes = (-3, -2, -1)
    return np.roll(np.flip(c, axis=axes), 1, axis=axes)


def hermitian_symmetrize(c: np.ndarray) -> np.ndarray:
    """Project coefficients onto the conjugate-symmetric subspace c(k) = conj(c(-k))."""
    return 0.5 * (c + np.conj(_spectral_axes_reflect(c)))


def _fwd(values: np.ndarray) -> np.ndarray:
    # forward transform, 1/n^3 normalization; batched over leading axes
    return np.fft.fftn(values, axes=(-3, -2, -1), norm="forward")


def _inv_raw(coeffs: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(coeffs, axes=(-3, -2, -1), norm="forward")


def _inv(coeffs: np.ndarray) -> np.ndarray:
    # fast path: discard the imaginary residue without checking it
    return _inv_raw(coeffs).real


@dataclass
class Grid:
    """Cubic periodic grid descriptor.

    Wavenumbers are integer multiples of 2*pi/box_length.  The dealias mask
    retains exactly the modes with |k_i| <= dealias_fraction * (n/2) * (2*pi/box_length)
    on every axis (the 2/3 rule by default; pass 0.5 for cubic-clean masking).
    First derivatives zero the lone Nyquist mode k = n/2, which has no
    conjugate partner on an even grid.
    """

    n: int
    box_length: float = TWO_PI
    dealias_fraction: float = 2.0 / 3.0

    # derived arrays, excluded from comparison/repr
    k1: np.ndarray = field(init=False, repr=False, compare=False)
    kd1: np.ndarray = field(init=False, repr=False, compare=False)
    k2: np.ndarray = field(init=False, repr=False, compare=False)
    kinf: np.ndarray = field(init=False, repr=False, compare=False)
    dealias_mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 4 or self.n % 2 != 0:
            raise ValueError(f"grid.n must be even and >= 4, got {self.n}")
        if not self.box_length > 0:
            raise ValueError("grid.box_length must be positive")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError("grid.dealias_fraction must lie in (0, 1]")
        scale = TWO_PI / self.box_length
        self.k1 = np.fft.fftfreq(self.n, d=1.0 / self.n) * scale
        kd = self.k1.copy()
        kd[self.n // 2] = 0.0  # Nyquist derivative zeroed
        self.kd1 = kd
        kx, ky, kz = self.k_broadcast()
        self.k2 = kx**2 + ky**2 + kz**2
        self.kinf = np.maximum(np.abs(kx), np.maximum(np.abs(ky), np.abs(kz)))
        cut = self.dealias_cutoff * (1.0 + 1e-12)
        self.dealias_mask = (
            (np.abs(kx) <= cut) & (np.abs(ky) <= cut) & (np.abs(kz) <= cut)
        )

    @property
    def spacing(self) -> float:
        return self.box_length / self.n

    @property
    def volume(self) -> float:
        return self.box_length**3

    @property
    def dealias_cutoff(self) -> float:
        """Largest retained |k_i| per axis, in physical wavenumber units."""
        return self.dealias_fraction * (self.n / 2) * (TWO_PI / self.box_length)

    def k_broadcast(self):
        """Physical wavenumbers as broadcastable (n,1,1), (1,n,1), (1,1,n) arrays."""
        n = self.n
        return (
            self.k1.reshape(n, 1, 1),
            self.k1.reshape(1, n, 1),
            self.k1.reshape(1, 1, n),
        )

    def kd_broadcast(self):
        """Nyquist-zeroed wavenumbers for first derivatives, broadcastable."""
        n = self.n
        return (
            self.kd1.reshape(n, 1, 1),
            self.kd1.reshape(1, n, 1),
            self.kd1.reshape(1, 1, n),
        )

    def coords(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    def mode_mask(self, k_max: float) -> np.ndarray:
        """Boolean mask retaining modes with |k|_inf <= k_max."""
        return self.kinf <= k_max * (1.0 + 1e-12)


@dataclass
class SpectralField:
    """Vector (or scalar) field stored as complex Fourier coefficients.

    coeffs has shape (c, n, n, n) with c components leading; vector fields use
    c = 3, scalar results (e.g. a divergence) use c = 1.
    """

    grid: Grid
    coeffs: np.ndarray

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[0]

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _require_same_grid(self.grid, other.grid)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _require_same_grid(self.grid, other.grid)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def symmetry_defect(self) -> float:
        """Max |c(k) - conj(c(-k))| relative to the largest coefficient."""
        defect = np.max(np.abs(self.coeffs - np.conj(_spectral_axes_reflect(self.coeffs))))
        scale = max(float(np.max(np.abs(self.coeffs))), 1e-300)
        return float(defect) / scale


@dataclass
class PhysicalField:
    """Collocation-point samples of a field, shape (c, n, n, n), real valued."""

    grid: Grid
    values: np.ndarray

    @property
    def ncomp(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "PhysicalField":
        return PhysicalField(self.grid, self.values.copy())


@dataclass
class PhysicalParams:
    """Constants of the coupled system: viscosity, magnetic diffusivity,
    gyromagnetic ratio and magnetisation damping.  All default to 1."""

    mu: float = 1.0
    eta: float = 1.0
    gamma: float = 1.0
    chi: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.chi > 0:
            raise ValueError("chi must be positive")
        if self.gamma == 0:
            raise ValueError("gamma must be nonzero")


@dataclass
class StateVector:
    """Velocity, magnetic field and magnetisation at one time instant."""

    v: SpectralField
    B: SpectralField
    m: SpectralField
    time: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.v.grid

    def copy(self) -> "StateVector":
        return StateVector(self.v.copy(), self.B.copy(), self.m.copy(), self.time)


def _require_same_grid(g1: Grid, g2: Grid) -> None:
    if (g1.n, g1.box_length) != (g2.n, g2.box_length):
        raise ValueError(
            f"grid mismatch: ({g1.n}, {g1.box_length}) vs ({g2.n}, {g2.box_length})"
        )


def to_spectral(f: PhysicalField) -> SpectralField:
    """Forward transform.  Enforces exact conjugate symmetry on the output."""
    if not np.all(np.isfinite(f.values)):
        raise FieldError("to_spectral: input contains non-finite values")
    return SpectralField(f.grid, hermitian_symmetrize(_fwd(f.values)))


def to_physical(f: SpectralField) -> PhysicalField:
    """Inverse transform.  Rejects coefficients whose inverse is not real."""
    w = _inv_raw(f.coeffs)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    residue = float(np.max(np.abs(w.imag))) / scale
    if residue > IMAG_RESIDUE_TOL:
        raise FieldError(
            f"to_physical: imaginary residue {residue:.3e} exceeds {IMAG_RESIDUE_TOL:.1e}; "
            "conjugate symmetry is broken (corrupted state)"
        )
    return PhysicalField(f.grid, np.ascontiguousarray(w.real))


def project_divergence_free(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Remove the gradient part of a 3-component coefficient array,
    mode by mode: c -> c - k (k . c) / |k|^2.  The k = 0 mode passes through."""
    kx, ky, kz = grid.k_broadcast()
    inv_k2 = np.zeros_like(grid.k2)
    nonzero = grid.k2 > 0
    inv_k2[nonzero] = 1.0 / grid.k2[nonzero]
    kdotc = kx * coeffs[0] + ky * coeffs[1] + kz * coeffs[2]
    out = coeffs.copy()
    out[0] -= kx * kdotc * inv_k2
    out[1] -= ky * kdotc * inv_k2
    out[2] -= kz * kdotc * inv_k2
    return out


def random_field(
    grid: Grid,
    rng: int | np.random.Generator,
    decay_exponent: float = 6.0,
    amplitude: float = 1.0,
    k_cutoff: float | None = None,
    divergence_free: bool = False,
    ncomp: int = 3,
) -> SpectralField:
    """Random smooth field with coefficient magnitude ~ (1 + |k|)^(-decay_exponent).

    Modes are drawn inside the dealias mask (further restricted by k_cutoff on
    |k|_inf when given), conjugate-symmetrized so the field is real, and
    optionally projected to be divergence free.  Deterministic for a fixed
    seed or generator state.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    n = grid.n
    re = rng.standard_normal((ncomp, n, n, n))
    im = rng.standard_normal((ncomp, n, n, n))
    envelope = (1.0 + np.sqrt(grid.k2)) ** (-decay_exponent)
    mask = grid.dealias_mask
    if k_cutoff is not None:
        mask = mask & grid.mode_mask(k_cutoff)
    c = (re + 1j * im) * (envelope * mask) * (amplitude / np.sqrt(2.0))
    c = hermitian_symmetrize(c)
    if divergence_free:
        if ncomp != 3:
            raise ValueError("divergence_free requires a 3-component field")
        c = project_divergence_free(c, grid)
    return SpectralField(grid, c)


def random_state(
    grid: Grid,
    seed: int,
    decay_exponent: float = 6.0,
    amplitude: float = 0.1,
) -> StateVector:
    """Random smooth initial data: divergence-free v and B, and a magnetisation
    built by pointwise normalizing a constant-plus-perturbation field so that
    |m| = 1 at every collocation point.  Bit-reproducible from the seed."""
    if decay_exponent < 4:
        raise ValueError("decay_exponent must be >= 4 for smooth initial data")
    rng = np.random.default_rng(int(seed))
    v = random_field(grid, rng, decay_exponent, amplitude, divergence_free=True)
    B = random_field(grid, rng, decay_exponent, amplitude, divergence_free=True)
    pert = random_field(grid, rng, decay_exponent, amplitude)
    mvals = _inv(pert.coeffs)
    mvals[2] += 1.0
    norm = np.sqrt(mvals[0] ** 2 + mvals[1] ** 2 + mvals[2] ** 2)
    if float(np.min(norm)) < 1e-8:
        raise FieldError("random_state: magnetisation magnitude degenerate; lower amplitude")
    mvals /= norm
    m = SpectralField(grid, hermitian_symmetrize(_fwd(mvals)))
    return StateVector(v, B, m, time=0.0)


def normalize_magnitude(m: SpectralField) -> tuple[SpectralField, float]:
    """Pointwise renormalize a field to unit magnitude at collocation points.

    Returns the renormalized field and the pre-normalization drift
    max | |m|^2 - 1 | (zero if the input already had unit magnitude)."""
    vals = _inv(m.coeffs)
    sq = vals[0] ** 2 + vals[1] ** 2 + vals[2] ** 2
    drift = float(np.max(np.abs(sq - 1.0)))
    norm = np.sqrt(sq)
    if float(np.min(norm)) < 1e-8:
        raise FieldError("normalize_magnitude: field magnitude degenerate")
    out = vals / norm
    return SpectralField(m.grid, hermitian_symmetrize(_fwd(out))), drift


def resample(f: SpectralField, grid2: Grid) -> SpectralField:
    """Transfer a field between grids by copying shared Fourier modes.

    Modes with |k_int| < min(n1, n2)/2 are copied; the Nyquist mode of the
    coarser grid is dropped (it has no symmetric counterpart)."""
    g1 = f.grid
    if abs(g1.box_length - grid2.box_length) > 1e-14 * g1.box_length:
        raise ValueError("resample requires identical box_length")
    half = min(g1.n, grid2.n) // 2
    modes = np.arange(-(half - 1), half)  # excludes the Nyquist of the smaller grid
    src = np.mod(modes, g1.n)
    dst = np.mod(modes, grid2.n)
    out = np.zeros((f.coeffs.shape[0], grid2.n, grid2.n, grid2.n), dtype=complex)
    take = np.ix_(np.arange(f.coeffs.shape[0]), src, src, src)
    put = np.ix_(np.arange(f.coeffs.shape[0]), dst, dst, dst)
    out[put] = f.coeffs[take]
    return SpectralField(grid2, out)


# ---------------------------------------------------------------------------
# checkpoint format: little-endian binary
#   magic "FMHD" | version u32 | n u32 | box_length f64 | time f64
#   followed by v, B, m coefficient cubes as interleaved f64 re/im,
#   axis order (component, kx, ky, kz)
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"FMHD"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIdd")


def save_checkpoint(path: str | Path, state: StateVector) -> None:
    grid = state.grid
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                grid.n,
                grid.box_length,
                state.time,
            )
        )
        for f in (state.v, state.B, state.m):
            fh.write(np.ascontiguousarray(f.coeffs, dtype="<c16").tobytes())


def load_checkpoint(path: str | Path, dealias_fraction: float = 2.0 / 3.0) -> StateVector:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FieldError(f"checkpoint {path}: truncated header")
        magic, version, n, box_length, time = _HEADER.unpack(header)
        if magic != CHECKPOINT_MAGIC:
            raise FieldError(f"checkpoint {path}: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise FieldError(f"checkpoint {path}: unsupported version {version}")
        grid = Grid(int(n), float(box_length), dealias_fraction)
        cubes = []
        count = 3 * n**3
        for _ in range(3):
            raw = fh.read(16 * count)
            if len(raw) < 16 * count:
                raise FieldError(f"checkpoint {path}: truncated payload")
            cubes.append(
                np.frombuffer(raw, dtype="<c16").astype(complex).reshape(3, n, n, n)
            )
    v, B, m = (SpectralField(grid, c) for c in cubes)
    return StateVector(v, B, m, time=float(time))

"""Sobolev norms, energy functionals, invariant-drift monitors, the twin-run
stability metric, a generalized Gronwall bound evaluator, and CSV output.

Norms follow the spectral convention

    ||u||_{H^p}^2 = L^3 * sum_k (1 + |k|^2)^p |u^(k)|^2,

so order 0 is the L^2 norm over the box and a constant vector field c has
every norm equal to |c| L^(3/2).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.optimize import bisect

from . import calculus
from .fields import Grid, SpectralField, StateVector, _inv

QUAD_ABS_TOL = 1e-10
QUAD_REL_TOL = 1e-8


def sobolev_norm(u: SpectralField, order: int) -> float:
    """Spectral Sobolev norm of order 0..3."""
    if order not in (0, 1, 2, 3):
        raise ValueError(f"order must be in 0..3, got {order}")
    weight = (1.0 + u.grid.k2) ** order if order else 1.0
    total = np.sum(weight * (u.coeffs.real**2 + u.coeffs.imag**2))
    return float(np.sqrt(u.grid.volume * total))


def l2_norm(u: SpectralField) -> float:
    return sobolev_norm(u, 0)


def energy_J(s: StateVector, sdot: tuple[SpectralField, SpectralField, SpectralField]) -> float:
    """Second-order energy functional: H2 norms of v and B, H3 of m, plus the
    L2/L2/H1 norms of the instantaneous time derivatives."""
    dv, dB, dm = sdot
    return (
        sobolev_norm(s.v, 2) ** 2
        + sobolev_norm(s.B, 2) ** 2
        + sobolev_norm(s.m, 3) ** 2
        + sobolev_norm(dv, 0) ** 2
        + sobolev_norm(dB, 0) ** 2
        + sobolev_norm(dm, 1) ** 2
    )


def energy_E(s: StateVector, sdot: tuple[SpectralField, SpectralField, SpectralField]) -> float:
    """First-order energy functional, one Sobolev order below energy_J."""
    dv, dB, dm = sdot
    return (
        sobolev_norm(s.v, 1) ** 2
        + sobolev_norm(s.B, 1) ** 2
        + sobolev_norm(s.m, 2) ** 2
        + sobolev_norm(dv, 0) ** 2
        + sobolev_norm(dB, 0) ** 2
        + sobolev_norm(dm, 1) ** 2
    )


def unit_drift(m: SpectralField) -> float:
    """Max over collocation points of | |m(x)|^2 - 1 |."""
    vals = _inv(m.coeffs)
    sq = np.einsum("i...,i...->...", vals, vals)
    return float(np.max(np.abs(sq - 1.0)))


def divergence_residual(u: SpectralField) -> float:
    """||div u||_2 relative to ||grad u||_2; zero field gives zero."""
    div2 = float(np.sum(np.abs(calculus.divergence(u).coeffs) ** 2))
    grad2 = float(np.sum(u.grid.k2 * (u.coeffs.real**2 + u.coeffs.imag**2)))
    if grad2 <= 0.0:
        return 0.0
    return float(np.sqrt(div2 / grad2))


# ---------------------------------------------------------------------------
# per-run diagnostics record
# ---------------------------------------------------------------------------

CSV_COLUMNS = [
    "time",
    "l2_v", "h1_v", "h2_v",
    "l2_B", "h1_B", "h2_B",
    "h1_m", "h2_m", "h3_m",
    "dt_v_l2", "dt_B_l2", "dt_m_h1",
    "J", "E",
    "div_drift_v", "div_drift_B", "unit_drift_m",
]


@dataclass
class DiagnosticsRecord:
    """Append-only time series of norms, energies and invariant drifts."""

    time: list[float] = dc_field(default_factory=list)
    l2_v: list[float] = dc_field(default_factory=list)
    h1_v: list[float] = dc_field(default_factory=list)
    h2_v: list[float] = dc_field(default_factory=list)
    l2_B: list[float] = dc_field(default_factory=list)
    h1_B: list[float] = dc_field(default_factory=list)
    h2_B: list[float] = dc_field(default_factory=list)
    h1_m: list[float] = dc_field(default_factory=list)
    h2_m: list[float] = dc_field(default_factory=list)
    h3_m: list[float] = dc_field(default_factory=list)
    dt_v_l2: list[float] = dc_field(default_factory=list)
    dt_B_l2: list[float] = dc_field(default_factory=list)
    dt_m_h1: list[float] = dc_field(default_factory=list)
    J: list[float] = dc_field(default_factory=list)
    E: list[float] = dc_field(default_factory=list)
    div_drift_v: list[float] = dc_field(default_factory=list)
    div_drift_B: list[float] = dc_field(default_factory=list)
    unit_drift_m: list[float] = dc_field(default_factory=list)
    # metadata, not part of the CSV
    initial_truncation_drift_m: float = 0.0
    blowup_time: float | None = None
    blowup_detail: str = ""

    def append(self, state: StateVector, sdot) -> None:
        t = state.time
        if self.time and t <= self.time[-1]:
            raise ValueError("record times must be strictly increasing")
        dv, dB, dm = sdot
        self.time.append(t)
        self.l2_v.append(sobolev_norm(state.v, 0))
        self.h1_v.append(sobolev_norm(state.v, 1))
        self.h2_v.append(sobolev_norm(state.v, 2))
        self.l2_B.append(sobolev_norm(state.B, 0))
        self.h1_B.append(sobolev_norm(state.B, 1))
        self.h2_B.append(sobolev_norm(state.B, 2))
        self.h1_m.append(sobolev_norm(state.m, 1))
        self.h2_m.append(sobolev_norm(state.m, 2))
        self.h3_m.append(sobolev_norm(state.m, 3))
        self.dt_v_l2.append(sobolev_norm(dv, 0))
        self.dt_B_l2.append(sobolev_norm(dB, 0))
        self.dt_m_h1.append(sobolev_norm(dm, 1))
        self.J.append(energy_J(state, sdot))
        self.E.append(energy_E(state, sdot))
        self.div_drift_v.append(divergence_residual(state.v))
        self.div_drift_B.append(divergence_residual(state.B))
        self.unit_drift_m.append(unit_drift(state.m))

    def __len__(self) -> int:
        return len(self.time)

    def rows(self):
        columns = [getattr(self, name) for name in CSV_COLUMNS]
        return list(zip(*columns))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)  # RFC-4180: CRLF line endings, minimal quoting
            writer.writerow(CSV_COLUMNS)
            for row in self.rows():
                writer.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# twin-run stability metric
# ---------------------------------------------------------------------------


@dataclass
class StabilityMetric:
    sup_diff: float
    initial_diff: float
    ratio: float
    degenerate: bool = False  # initial difference was zero; ratio reported as 1


def state_difference_norm(s1: StateVector, s2: StateVector) -> float:
    """||v1-v2||_2 + ||B1-B2||_2 + ||m1-m2||_H1, the stability pairing."""
    return (
        l2_norm(s1.v - s2.v)
        + l2_norm(s1.B - s2.B)
        + sobolev_norm(s1.m - s2.m, 1)
    )


def stability_metric(traj1, traj2) -> StabilityMetric:
    """Empirical continuous-dependence constant from two trajectories.

    Both trajectories must share the grid and the recorded time stamps; the
    ratio sup_t(diff) / diff(0) is the observed stability constant."""
    s1, s2 = traj1.states, traj2.states
    if not s1 or not s2:
        raise ValueError("stability_metric requires recorded states")
    g1, g2 = s1[0].grid, s2[0].grid
    if (g1.n, g1.box_length) != (g2.n, g2.box_length):
        raise ValueError("stability_metric: trajectories use different grids")
    t1, t2 = np.asarray(traj1.times), np.asarray(traj2.times)
    if len(t1) != len(t2) or not np.allclose(t1, t2, rtol=0, atol=1e-12):
        raise ValueError("stability_metric: trajectories do not share time stamps")
    diffs = [state_difference_norm(a, b) for a, b in zip(s1, s2)]
    initial = diffs[0]
    sup = max(diffs)
    if initial == 0.0:
        return StabilityMetric(sup_diff=sup, initial_diff=0.0, ratio=1.0, degenerate=True)
    return StabilityMetric(sup_diff=sup, initial_diff=initial, ratio=sup / initial)


# ---------------------------------------------------------------------------
# generalized Gronwall bound:  u(t) <= Ginv( integral of beta ),
# where G(sigma) = integral from alpha to sigma of ds / g(s)
# ---------------------------------------------------------------------------


@dataclass
class PowerLaw:
    """g(s) = s**p with p >= 1, positive and nondecreasing on (0, inf)."""

    p: float

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("power-law exponent must be >= 1")

    def __call__(self, s):
        return np.asarray(s, dtype=float) ** self.p


@dataclass
class TabulatedMonotone:
    """Monotone nondecreasing g given by linear interpolation of samples.

    Extends with constant values beyond the sampled range."""

    s: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.s.ndim != 1 or self.s.shape != self.g.shape or len(self.s) < 2:
            raise ValueError("tabulated g needs matching 1-d sample arrays, length >= 2")
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("tabulated g: s samples must be strictly increasing")
        if np.any(np.diff(self.g) < 0) or np.any(self.g <= 0):
            raise ValueError("tabulated g must be positive and nondecreasing")

    def __call__(self, s):
        return np.interp(np.asarray(s, dtype=float), self.s, self.g)


@dataclass
class GronwallResult:
    value: float | None
    in_domain: bool

    def __str__(self) -> str:
        return repr(self.value) if self.in_domain else "out-of-domain"


def _validate_beta(beta_samples) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(beta_samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ValueError("beta_samples must be an array of (t, beta) pairs, length >= 2")
    t, b = arr[:, 0], arr[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("beta_samples must be strictly t-sorted")
    if np.any(b < 0):
        raise ValueError("beta must be nonnegative")
    return t, b


def _beta_cumulative(t: np.ndarray, b: np.ndarray) -> np.ndarray:
    segments = 0.5 * (b[1:] + b[:-1]) * np.diff(t)
    return np.concatenate([[0.0], np.cumsum(segments)])


def _beta_integral_at(t: np.ndarray, b: np.ndarray, cum: np.ndarray, t_query: float) -> float:
    """Trapezoid integral of the piecewise-linear beta from t[0] to t_query."""
    i = int(np.searchsorted(t, t_query, side="right")) - 1
    i = min(max(i, 0), len(t) - 2)
    dt = t_query - t[i]
    span = t[i + 1] - t[i]
    b_at = b[i] + (b[i + 1] - b[i]) * dt / span
    return float(cum[i] + 0.5 * (b[i] + b_at) * dt)


def _g_integral(g, lo: float, hi: float) -> float:
    val, _ = quad(lambda s: 1.0 / g(s), lo, hi, epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=200)
    return val


def _g_integral_sup(g, alpha: float) -> float:
    """G(inf) = integral from alpha to infinity of ds/g(s); inf when divergent."""
    if isinstance(g, PowerLaw):
        if g.p <= 1:
            return np.inf
        val, _ = quad(
            lambda s: 1.0 / g(s), alpha, np.inf, epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=200
        )
        return val
    return np.inf  # tabulated g is extended with a constant, so G grows without bound


def _check_g(g, alpha: float) -> None:
    if not callable(g):
        raise ValueError("g_spec must be callable (PowerLaw or TabulatedMonotone)")
    if not np.all(np.asarray(g(alpha)) > 0):
        raise ValueError("g must be positive at alpha")


def gronwall_bound(alpha: float, beta_samples, g_spec, t_query: float) -> GronwallResult:
    """Evaluate the integral-inequality bound at t_query.

    Computes G by adaptive quadrature, the beta integral by the trapezoid
    rule, and inverts G by bisection.  Returns an out-of-domain result when
    the beta integral exits the range of G, which marks the breakdown of the
    bound."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    _check_g(g_spec, alpha)
    t, b = _validate_beta(beta_samples)
    if not (t[0] <= t_query <= t[-1]):
        raise ValueError(f"t_query {t_query} outside sampled range [{t[0]}, {t[-1]}]")
    cum = _beta_cumulative(t, b)
    target = _beta_integral_at(t, b, cum, t_query)
    if target == 0.0:
        return GronwallResult(value=float(alpha), in_domain=True)
    sup = _g_integral_sup(g_spec, alpha)
    if target >= sup * (1.0 - 1e-12):
        return GronwallResult(value=None, in_domain=False)
    # bracket the root of G(sigma) = target, then bisect
    hi = alpha * 2.0
    while _g_integral(g_spec, alpha, hi) < target:
        hi *= 2.0
        if hi > 1e300:
            return GronwallResult(value=None, in_domain=False)
    value = bisect(
        lambda sigma: _g_integral(g_spec, alpha, sigma) - target,
        alpha,
        hi,
        xtol=1e-300,
        rtol=1e-14,
        maxiter=400,
    )
    return GronwallResult(value=float(value), in_domain=True)


def gronwall_breakdown_time(alpha: float, beta_samples, g_spec) -> float | None:
    """First sampled time at which the bound leaves the domain of G, or None.

    For superlinear g the bound blows up in finite time once the beta
    integral reaches G(inf); the crossing is located exactly on the
    piecewise-quadratic cumulative integral."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    _check_g(g_spec, alpha)
    t, b = _validate_beta(beta_samples)
    sup = _g_integral_sup(g_spec, alpha)
    if not np.isfinite(sup):
        return None
    cum = _beta_cumulative(t, b)
    if cum[-1] < sup:
        return None
    i = int(np.searchsorted(cum, sup, side="left")) - 1
    i = min(max(i, 0), len(t) - 2)
    # on [t_i, t_{i+1}]: cum(t) = cum_i + b_i dt + slope dt^2 / 2, slope = (b_{i+1}-b_i)/span
    span = t[i + 1] - t[i]
    slope = (b[i + 1] - b[i]) / span
    need = sup - cum[i]
    if abs(slope) < 1e-300:
        dt = need / b[i] if b[i] > 0 else span
    else:
        disc = b[i] ** 2 + 2.0 * slope * need
        dt = (-b[i] + np.sqrt(max(disc, 0.0))) / slope
    return float(t[i] + min(max(dt, 0.0), span))


def fit_power_envelope(times, values, power: float = 15.0) -> float:
    """Smallest constant C such that the power-law Gronwall bound started at
    the first sample dominates the whole series.  Reported, never asserted."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < 2:
        return 0.0
    alpha = float(values[0])
    if alpha <= 0:
        alpha = 1e-300
    # G(E) = (alpha^(1-p) - E^(1-p)) / (p-1); C = max_t G(E(t)) / t
    p = power
    g_of_e = (alpha ** (1.0 - p) - values[1:] ** (1.0 - p)) / (p - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = g_of_e / (times[1:] - times[0])
    ratios = ratios[np.isfinite(ratios)]
    if len(ratios) == 0:
        return 0.0
    return float(max(0.0, np.max(ratios)))

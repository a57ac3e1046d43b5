"""Right-hand sides of the coupled velocity/induction/magnetisation system,
spectral Galerkin truncation, and time integration.

The solved system, written for the divergence-free projected velocity, is

    dv/dt = P[ -(v.grad)v + curl B x B + (B.grad)m - (grad m)^T lap m ] + mu lap v
    dB/dt = -eta curl^2 B + curl(v x B)
    dm/dt = -(v.grad)m + chi [lap m + |grad m|^2 m] + gamma m x (lap m + B)
            - chi m x (m x B)

Gradient terms in the velocity equation are annihilated by the projection P
and never formed; pressure is eliminated the same way.  Every nonlinear term
is evaluated pointwise in physical space and dealiased on return to spectral
space, then restricted to the active truncation mask.

Stiff diagonal diffusion (mu, eta, chi times |k|^2) is handled by integrating
factors: `imex_euler` is the exponential (Lawson) Euler scheme and `etd_rk4`
is the exponential time-differencing Runge-Kutta scheme of Cox and Matthews
with the coefficient phi-functions evaluated by contour averaging over roots
of unity (the standard cure for cancellation at small |k|^2 dt).
`rk4_explicit` applies the classical Runge-Kutta scheme to the full right-hand
side and is subject to the diffusive CFL limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import diagnostics
from .fields import (
    Grid,
    PhysicalParams,
    SpectralField,
    StateVector,
    _fwd,
    _inv,
    normalize_magnitude,
    project_divergence_free,
    save_checkpoint,
)

SCHEMES = ("imex_euler", "etd_rk4", "rk4_explicit")
_SCHEME_ORDER = {"imex_euler": 1, "etd_rk4": 4, "rk4_explicit": 4}

#: spectral divergence residual above which v and B are re-projected after a step
DIV_REPROJECT_TOL = 1e-13

#: blow-up is declared when any field norm exceeds this factor times its initial value
BLOWUP_NORM_FACTOR = 1e8


class BlowUpError(RuntimeError):
    """Finite-time breakdown of the numerical solution.

    Carries the last valid simulation time; breakdown is a reportable outcome
    of the local-in-time dynamics, not an internal failure."""

    def __init__(self, time: float, detail: str):
        super().__init__(f"blow-up at t={time:.6g}: {detail}")
        self.time = time
        self.detail = detail


@dataclass
class Truncation:
    """Galerkin truncation: retain modes with |k|_inf <= k_max.

    The mask is always intersected with the grid dealias mask, of which it
    must be a subset."""

    k_max: float

    def __post_init__(self):
        if not self.k_max > 0:
            raise ValueError("truncation k_max must be positive")

    def mask(self, grid: Grid) -> np.ndarray:
        if self.k_max > grid.dealias_cutoff * (1.0 + 1e-9):
            raise ValueError(
                f"truncation k_max={self.k_max} exceeds dealias cutoff {grid.dealias_cutoff:.6g}"
            )
        return grid.dealias_mask & grid.mode_mask(self.k_max)

    @staticmethod
    def full(grid: Grid) -> "Truncation":
        return Truncation(grid.dealias_cutoff)


@dataclass
class TimeStepper:
    scheme: str
    dt: float

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def order(self) -> int:
        return _SCHEME_ORDER[self.scheme]

    def cfl_warnings(self, grid: Grid, params: PhysicalParams) -> list[str]:
        """Non-fatal: an explicit dt above the diffusive limit is allowed so
        that deliberate instability probes can run; expect blow-up."""
        if self.scheme == "rk4_explicit":
            limit = stability_limit(grid, params)
            if self.dt > limit:
                return [f"rk4_explicit dt={self.dt:.3e} exceeds diffusive stability limit {limit:.3e}"]
        return []


def auto_dt(grid: Grid, params: PhysicalParams) -> float:
    """Default step: 0.25 / (max(mu, eta, chi) * k_cut^2) with k_cut the
    dealias cutoff.  Keeps the explicitly treated cross terms stable."""
    k_cut = grid.dealias_cutoff
    return 0.25 / (max(params.mu, params.eta, params.chi) * k_cut**2)


def stability_limit(grid: Grid, params: PhysicalParams) -> float:
    """Diffusive CFL bound for the fully explicit scheme (real-axis RK4 limit)."""
    k_cut = grid.dealias_cutoff
    return 2.785 / (max(params.mu, params.eta, params.chi) * k_cut**2)


# ---------------------------------------------------------------------------
# workspace: packed state U[field, comp, kx, ky, kz] with field order (v, B, m)
# ---------------------------------------------------------------------------


def _pack(s: StateVector) -> np.ndarray:
    return np.stack([s.v.coeffs, s.B.coeffs, s.m.coeffs])


def _unpack(U: np.ndarray, grid: Grid, time: float) -> StateVector:
    return StateVector(
        SpectralField(grid, U[0].copy()),
        SpectralField(grid, U[1].copy()),
        SpectralField(grid, U[2].copy()),
        time=time,
    )


class _Workspace:
    """Precomputed masks, wavenumbers, linear symbols and scheme tables."""

    def __init__(self, grid: Grid, params: PhysicalParams, trunc: Truncation | None,
                 linear_only: bool = False):
        self.grid = grid
        self.params = params
        self.linear_only = linear_only
        self.mask = (trunc or Truncation.full(grid)).mask(grid)
        self.kdx, self.kdy, self.kdz = grid.kd_broadcast()
        # diagonal linear symbols per field: -mu|k|^2, -eta|k|^2, -chi|k|^2
        self.lin = np.stack([-params.mu * grid.k2, -params.eta * grid.k2, -params.chi * grid.k2])
        self._factor_cache: dict[float, np.ndarray] = {}
        self._etd_cache: dict[float, tuple] = {}

    # -- nonlinear right-hand side (everything except the diagonal diffusion) --

    def nonlinear(self, U: np.ndarray) -> np.ndarray:
        if self.linear_only:
            return np.zeros_like(U)
        phys = self._physical_ingredients(U)
        nv, vxB, nm = self._assemble(phys)
        spec = _fwd(np.concatenate([nv, vxB, nm])) * self.mask
        out = np.empty_like(U)
        out[0] = project_divergence_free(spec[0:3], self.grid)
        out[1] = self._curl(spec[3:6])
        out[2] = spec[6:9]
        return out

    def full_rhs(self, U: np.ndarray) -> np.ndarray:
        return self.nonlinear(U) + self.lin[:, None] * U

    def _curl(self, c: np.ndarray) -> np.ndarray:
        kx, ky, kz = self.kdx, self.kdy, self.kdz
        out = np.empty_like(c)
        out[0] = 1j * (ky * c[2] - kz * c[1])
        out[1] = 1j * (kz * c[0] - kx * c[2])
        out[2] = 1j * (kx * c[1] - ky * c[0])
        return out

    def _physical_ingredients(self, U: np.ndarray) -> dict[str, np.ndarray]:
        n = self.grid.n
        kx, ky, kz = self.kdx, self.kdy, self.kdz
        vh, Bh, mh = U[0], U[1], U[2]
        stack = np.empty((33, n, n, n), dtype=complex)
        stack[0:3] = vh
        stack[3:6] = Bh
        stack[6:9] = mh
        for base, c in ((9, vh), (18, mh)):  # gradients: rows i, derivative j
            stack[base + 0:base + 9:3] = 1j * kx * c
            stack[base + 1:base + 9:3] = 1j * ky * c
            stack[base + 2:base + 9:3] = 1j * kz * c
        stack[27:30] = self._curl(Bh)
        stack[30:33] = -self.grid.k2 * mh
        phys = _inv(stack)
        return {
            "v": phys[0:3],
            "B": phys[3:6],
            "m": phys[6:9],
            "grad_v": phys[9:18].reshape(3, 3, n, n, n),
            "grad_m": phys[18:27].reshape(3, 3, n, n, n),
            "curl_B": phys[27:30],
            "lap_m": phys[30:33],
        }

    def _assemble(self, ing: dict[str, np.ndarray]):
        p = self.params
        v, B, m = ing["v"], ing["B"], ing["m"]
        grad_v, grad_m = ing["grad_v"], ing["grad_m"]
        curl_B, lap_m = ing["curl_B"], ing["lap_m"]

        conv_v = np.einsum("j...,ij...->i...", v, grad_v)
        lorentz = np.cross(curl_B, B, axis=0)
        b_grad_m = np.einsum("j...,ij...->i...", B, grad_m)
        # ((grad m)^T lap m)_i = sum_j d_i m_j (lap m)_j
        m_stress = np.einsum("ji...,j...->i...", grad_m, lap_m)
        nv = -conv_v + lorentz + b_grad_m - m_stress

        vxB = np.cross(v, B, axis=0)

        conv_m = np.einsum("j...,ij...->i...", v, grad_m)
        grad_m_sq = np.einsum("ij...,ij...->...", grad_m, grad_m)
        precession = np.cross(m, lap_m + B, axis=0)
        damping_zeeman = np.cross(m, np.cross(m, B, axis=0), axis=0)
        nm = -conv_m + p.chi * grad_m_sq * m + p.gamma * precession - p.chi * damping_zeeman
        return nv, vxB, nm

    # -- integrating factors and exponential Runge-Kutta tables ---------------

    def factors(self, dt: float) -> np.ndarray:
        key = float(dt)
        if key not in self._factor_cache:
            self._factor_cache[key] = np.exp(self.lin * dt)[:, None]
        return self._factor_cache[key]

    def etd_tables(self, dt: float):
        key = float(dt)
        if key not in self._etd_cache:
            n_roots = 16
            roots = np.exp(1j * np.pi * (np.arange(n_roots) + 0.5) / n_roots)
            z = self.lin * dt  # (3, n, n, n), real <= 0
            lr = z[..., None] + roots  # contour around each stiffness value
            exp_lr = np.exp(lr)
            f0 = dt * np.mean(((np.exp(lr / 2.0) - 1.0) / lr).real, axis=-1)
            f1 = dt * np.mean(((-4.0 - lr + exp_lr * (4.0 - 3.0 * lr + lr**2)) / lr**3).real, axis=-1)
            f2 = dt * np.mean(((2.0 + lr + exp_lr * (lr - 2.0)) / lr**3).real, axis=-1)
            f3 = dt * np.mean(((-4.0 - 3.0 * lr - lr**2 + exp_lr * (4.0 - lr)) / lr**3).real, axis=-1)
            expand = lambda a: a[:, None]  # broadcast over the component axis
            self._etd_cache[key] = tuple(
                expand(a) for a in (np.exp(z), np.exp(z / 2.0), f0, f1, f2, f3)
            )
        return self._etd_cache[key]


# ---------------------------------------------------------------------------
# single steps; each returns the new packed state and the stage states used,
# so scalar functionals can be integrated with the same quadrature
# ---------------------------------------------------------------------------


def _imex_euler_step(U, dt, ws: _Workspace):
    E = ws.factors(dt)
    U1 = E * (U + dt * ws.nonlinear(U))
    return U1, (U,)


def _etd_rk4_step(U, dt, ws: _Workspace):
    E, E2, F0, F1, F2, F3 = ws.etd_tables(dt)
    N0 = ws.nonlinear(U)
    Ua = E2 * U + F0 * N0
    N1 = ws.nonlinear(Ua)
    Ub = E2 * U + F0 * N1
    N2 = ws.nonlinear(Ub)
    Uc = E2 * Ua + F0 * (2.0 * N2 - N0)
    N3 = ws.nonlinear(Uc)
    U1 = E * U + F1 * N0 + 2.0 * F2 * (N1 + N2) + F3 * N3
    return U1, (U, Ua, Ub, Uc)


def _rk4_explicit_step(U, dt, ws: _Workspace):
    s1 = U
    k1 = ws.full_rhs(s1)
    s2 = U + 0.5 * dt * k1
    k2 = ws.full_rhs(s2)
    s3 = U + 0.5 * dt * k2
    k3 = ws.full_rhs(s3)
    s4 = U + dt * k3
    k4 = ws.full_rhs(s4)
    U1 = U + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return U1, (s1, s2, s3, s4)


_STEP_FUNCS = {
    "imex_euler": _imex_euler_step,
    "etd_rk4": _etd_rk4_step,
    "rk4_explicit": _rk4_explicit_step,
}


def _stage_quadrature(scheme: str, dt: float, values: list[float]) -> float:
    """Integrate a scalar rate over one step with the scheme's own quadrature
    (the exponential schemes reduce to it for a non-stiff scalar)."""
    if scheme == "imex_euler":
        return dt * values[0]
    return (dt / 6.0) * (values[0] + 2.0 * values[1] + 2.0 * values[2] + values[3])


def _advance(U, dt, ws: _Workspace, scheme: str, time: float):
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        U1, stages = _STEP_FUNCS[scheme](U, dt, ws)
        if not np.all(np.isfinite(U1)):
            raise BlowUpError(time, "non-finite values after step")
        # re-project v and B if round-off has let divergence creep in
        for f in (0, 1):
            fld = SpectralField(ws.grid, U1[f])
            residual = diagnostics.divergence_residual(fld)
            if np.isfinite(residual) and residual > DIV_REPROJECT_TOL:
                U1[f] = project_divergence_free(U1[f], ws.grid)
    return U1, stages


# ---------------------------------------------------------------------------
# public right-hand sides
# ---------------------------------------------------------------------------

def _blame_nonfinite(op: str, ws: _Workspace, U: np.ndarray) -> str:
    """Name the first non-finite term; only called on the failure path."""
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        ing = ws._physical_ingredients(U)
        p = ws.params
        v, B, m = ing["v"], ing["B"], ing["m"]
        grad_v, grad_m = ing["grad_v"], ing["grad_m"]
        curl_B, lap_m = ing["curl_B"], ing["lap_m"]
        candidates = {
            "convective_velocity": np.einsum("j...,ij...->i...", v, grad_v),
            "lorentz_force": np.cross(curl_B, B, axis=0),
            "magnetic_tension": np.einsum("j...,ij...->i...", B, grad_m),
            "exchange_stress": np.einsum("ji...,j...->i...", grad_m, lap_m),
            "induction_stretching": np.cross(v, B, axis=0),
            "convective_magnetisation": np.einsum("j...,ij...->i...", v, grad_m),
            "exchange": p.chi * (np.einsum("ij...,ij...->...", grad_m, grad_m) * m + lap_m),
            "precession": p.gamma * np.cross(m, lap_m + B, axis=0),
            "damping_zeeman": p.chi * np.cross(m, np.cross(m, B, axis=0), axis=0),
            "viscous": p.mu * _inv(-ws.grid.k2 * U[0]),
            "resistive": p.eta * _inv(-ws.grid.k2 * U[1]),
        }
        for name, arr in candidates.items():
            if not np.all(np.isfinite(arr)):
                return f"{op}: non-finite intermediate in term '{name}'"
    return f"{op}: non-finite result"


def _rhs_field(s: StateVector, params: PhysicalParams, trunc, which: int,
               linear_only: bool = False) -> SpectralField:
    ws = _Workspace(s.grid, params, trunc, linear_only)
    U = _pack(s)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        out = (ws.nonlinear(U)[which] + ws.lin[which] * U[which]) * ws.mask
    if not np.all(np.isfinite(out)):
        op = ("rhs_velocity", "rhs_magnetic", "rhs_magnetisation")[which]
        raise FloatingPointError(_blame_nonfinite(op, ws, U))
    return SpectralField(s.grid, out)


def rhs_velocity(s: StateVector, params: PhysicalParams, trunc: Truncation | None = None) -> SpectralField:
    """Projected velocity tendency, restricted to the truncation mask."""
    return _rhs_field(s, params, trunc, 0)


def rhs_magnetic(s: StateVector, params: PhysicalParams, trunc: Truncation | None = None) -> SpectralField:
    """Induction tendency; a curl, hence divergence-free by construction."""
    out = _rhs_field(s, params, trunc, 1)
    residual = diagnostics.divergence_residual(out)
    if residual > 1e-12:
        raise FloatingPointError(f"rhs_magnetic: divergence residual {residual:.3e} exceeds 1e-12")
    return out


def rhs_magnetisation(s: StateVector, params: PhysicalParams, trunc: Truncation | None = None) -> SpectralField:
    """Magnetisation tendency with damped exchange, precession and damped
    coupling to the magnetic field; cubic products are dealiased."""
    return _rhs_field(s, params, trunc, 2)


def state_rhs(s: StateVector, params: PhysicalParams, trunc: Truncation | None = None,
              linear_only: bool = False):
    """All three tendencies at once (used for the J/E diagnostics)."""
    ws = _Workspace(s.grid, params, trunc, linear_only)
    U = _pack(s)
    R = ws.full_rhs(U)
    return tuple(SpectralField(s.grid, R[f]) for f in range(3))


# ---------------------------------------------------------------------------
# stepping and simulation
# ---------------------------------------------------------------------------


def step(s: StateVector, stepper: TimeStepper, params: PhysicalParams,
         trunc: Truncation | None = None, linear_only: bool = False) -> StateVector:
    """Advance one step of stepper.dt.  Raises BlowUpError on breakdown."""
    ws = _Workspace(s.grid, params, trunc, linear_only)
    U1, _ = _advance(_pack(s), stepper.dt, ws, stepper.scheme, s.time)
    return _unpack(U1, s.grid, s.time + stepper.dt)


def prepare_initial(s: StateVector, trunc: Truncation | None = None) -> tuple[StateVector, float]:
    """Restrict initial data to the truncation mask and restore |m| = 1.

    Truncation alone does not preserve the unit magnitude of m; the field is
    renormalized pointwise and the pre-normalization drift is returned."""
    grid = s.grid
    mask = (trunc or Truncation.full(grid)).mask(grid)
    v = SpectralField(grid, s.v.coeffs * mask)
    B = SpectralField(grid, s.B.coeffs * mask)
    m_trunc = SpectralField(grid, s.m.coeffs * mask)
    m, drift = normalize_magnitude(m_trunc)
    return StateVector(v, B, m, s.time), drift


@dataclass
class Trajectory:
    """Recorded snapshots of a simulation plus the final state."""

    times: list[float] = dc_field(default_factory=list)
    states: list[StateVector] = dc_field(default_factory=list)
    record_steps: list[int] = dc_field(default_factory=list)
    final_state: StateVector | None = None
    blowup_time: float | None = None
    blowup_detail: str = ""

    @property
    def blew_up(self) -> bool:
        return self.blowup_time is not None

    def save_checkpoints(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for step_index, state in zip(self.record_steps, self.states):
            path = directory / f"state_{step_index:08d}.fmhd"
            save_checkpoint(path, state)
            paths.append(path)
        return paths


def simulate(
    s0: StateVector,
    t_end: float,
    stepper: TimeStepper,
    params: PhysicalParams,
    trunc: Truncation | None = None,
    diagnostics_every: int = 10,
    linear_only: bool = False,
    prepare: bool = True,
    record_states: bool = True,
) -> tuple[Trajectory, diagnostics.DiagnosticsRecord]:
    """Advance to t_end (or to blow-up), recording diagnostics every
    diagnostics_every steps.  Partial results are retained on blow-up."""
    if diagnostics_every < 1:
        raise ValueError("diagnostics_every must be >= 1")
    t0 = s0.time
    span = t_end - t0
    if span < -1e-12:
        raise ValueError(f"t_end={t_end} precedes initial time {t0}")

    if prepare:
        s0, trunc_drift = prepare_initial(s0, trunc)
    else:
        trunc_drift = 0.0

    grid = s0.grid
    ws = _Workspace(grid, params, trunc, linear_only)
    U = _pack(s0)

    dt = stepper.dt
    full_steps = int(np.floor(span / dt + 1e-9)) if span > 0 else 0
    remainder = span - full_steps * dt
    has_partial = remainder > dt * 1e-9
    n_steps = full_steps + (1 if has_partial else 0)

    record = diagnostics.DiagnosticsRecord()
    record.initial_truncation_drift_m = trunc_drift
    traj = Trajectory()

    def take_record(step_index: int, time: float, Unow: np.ndarray) -> None:
        state = _unpack(Unow, grid, time)
        sdot_arr = ws.full_rhs(Unow)
        sdot = tuple(SpectralField(grid, sdot_arr[f]) for f in range(3))
        record.append(state, sdot)
        if record_states:
            traj.times.append(time)
            traj.states.append(state)
            traj.record_steps.append(step_index)

    take_record(0, t0, U)

    # blow-up thresholds: 1e8 x initial norm per field, floored by the
    # largest initial norm so fields starting at zero may grow normally
    init_norms = [float(np.sqrt(np.sum(np.abs(U[f]) ** 2))) for f in range(3)]
    floor = max(max(init_norms), 1e-300) * 1e-6
    thresholds = [BLOWUP_NORM_FACTOR * max(nrm, floor) for nrm in init_norms]

    last_valid_time = t0
    for i in range(1, n_steps + 1):
        dt_i = dt if i <= full_steps else remainder
        t_i = t0 + i * dt if i <= full_steps else t_end
        try:
            U_next, _ = _advance(U, dt_i, ws, stepper.scheme, last_valid_time)
        except BlowUpError as exc:
            traj.blowup_time = last_valid_time
            traj.blowup_detail = exc.detail
            record.blowup_time = last_valid_time
            record.blowup_detail = exc.detail
            break
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            norms = [float(np.sqrt(np.sum(np.abs(U_next[f]) ** 2))) for f in range(3)]
        if any(nrm > thr for nrm, thr in zip(norms, thresholds)):
            detail = "norm exceeded 1e8 x initial value"
            traj.blowup_time = last_valid_time
            traj.blowup_detail = detail
            record.blowup_time = last_valid_time
            record.blowup_detail = detail
            break
        U = U_next
        last_valid_time = t_i
        if i % diagnostics_every == 0:
            take_record(i, t_i, U)

    traj.final_state = _unpack(U, grid, last_valid_time)
    return traj, record


# ---------------------------------------------------------------------------
# discrete energy-law audit for the decoupled fluid/field subsystem
# ---------------------------------------------------------------------------


def _mhd_energy(U: np.ndarray, ws: _Workspace) -> float:
    vol = ws.grid.volume
    return 0.5 * vol * float(np.sum(np.abs(U[0]) ** 2) + np.sum(np.abs(U[1]) ** 2))


def _mhd_dissipation(U: np.ndarray, ws: _Workspace) -> float:
    vol = ws.grid.volume
    grad_v2 = float(np.sum(ws.grid.k2 * np.abs(U[0]) ** 2))
    curl_B2 = float(np.sum(np.abs(ws._curl(U[1])) ** 2))
    return vol * (ws.params.mu * grad_v2 + ws.params.eta * curl_B2)


@dataclass
class EnergyAuditRow:
    time: float
    energy_decrement: float        # E(t+dt) - E(t) as measured
    scheme_integral: float         # dissipation integrated by the same scheme
    lte_estimate: float            # Richardson estimate of the local errors
                                   # in both the energy and the quadrature

    @property
    def defect(self) -> float:
        return abs(self.energy_decrement + self.scheme_integral)


def energy_law_audit(
    s0: StateVector,
    stepper: TimeStepper,
    params: PhysicalParams,
    trunc: Truncation | None = None,
    n_steps: int = 10,
) -> list[EnergyAuditRow]:
    """Per-step check of d/dt (1/2)(||v||^2 + ||B||^2) = -mu ||grad v||^2
    - eta ||curl B||^2 for a state with uniform magnetisation (all coupling
    terms vanish).  The dissipation is integrated with the scheme's own
    stage quadrature, so the defect is bounded by the local truncation error."""
    s0, _ = prepare_initial(s0, trunc)
    ws = _Workspace(s0.grid, params, trunc)
    U = _pack(s0)
    dt = stepper.dt
    order = stepper.order
    scheme = stepper.scheme
    quad_d = lambda h, stages: _stage_quadrature(
        scheme, h, [_mhd_dissipation(S, ws) for S in stages]
    )
    rows = []
    t = s0.time
    for _ in range(n_steps):
        e_before = _mhd_energy(U, ws)
        U1, stages = _STEP_FUNCS[scheme](U, dt, ws)
        dW = quad_d(dt, stages)
        # two half steps from the same state give Richardson estimates of the
        # local error in the stepped energy and in the stage quadrature
        Uh, stages_h1 = _STEP_FUNCS[scheme](U, dt / 2.0, ws)
        Uh2, stages_h2 = _STEP_FUNCS[scheme](Uh, dt / 2.0, ws)
        dW_halves = quad_d(dt / 2.0, stages_h1) + quad_d(dt / 2.0, stages_h2)
        lte = (
            abs(_mhd_energy(U1, ws) - _mhd_energy(Uh2, ws)) + abs(dW - dW_halves)
        ) / (1.0 - 2.0 ** (-order))
        rows.append(EnergyAuditRow(t, _mhd_energy(U1, ws) - e_before, dW, lte))
        U = U1
        t += dt
    return rows

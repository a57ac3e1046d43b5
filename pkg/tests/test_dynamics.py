"""Right-hand sides against hand evaluations, identity expansions and stencil
oracles; stepping, simulation, blow-up and the discrete energy law."""

import numpy as np
import pytest
import sympy as sp

from fmhd import calculus
from fmhd.dynamics import (
    BlowUpError,
    TimeStepper,
    Truncation,
    auto_dt,
    energy_law_audit,
    prepare_initial,
    rhs_magnetic,
    rhs_magnetisation,
    rhs_velocity,
    simulate,
    stability_limit,
    state_rhs,
    step,
)
from fmhd.diagnostics import divergence_residual, sobolev_norm, unit_drift
from fmhd.fields import (
    Grid,
    PhysicalField,
    PhysicalParams,
    SpectralField,
    StateVector,
    hermitian_symmetrize,
    random_field,
    random_state,
    resample,
    to_physical,
    to_spectral,
    _fwd,
    _inv,
)

import oracles

X, Y, Z = sp.symbols("x y z")


def zero_field(g):
    return SpectralField(g, np.zeros((3, g.n, g.n, g.n), dtype=complex))


def uniform_field(g, vec):
    c = np.zeros((3, g.n, g.n, g.n), dtype=complex)
    c[:, 0, 0, 0] = vec
    return SpectralField(g, c)


def from_exprs(g, exprs):
    return to_spectral(PhysicalField(g, oracles.field_on_grid(g, exprs)))


def unit_circle_m(g):
    """m = (cos x, sin x, 0): band-limited with |m| = 1 exactly."""
    return from_exprs(g, (sp.cos(X), sp.sin(X), sp.Integer(0)))


def band_limited_state(g, seed, amplitude, k_cutoff):
    rng = np.random.default_rng(seed)
    v = random_field(g, rng, 6.0, amplitude, k_cutoff=k_cutoff, divergence_free=True)
    B = random_field(g, rng, 6.0, amplitude, k_cutoff=k_cutoff, divergence_free=True)
    pert = random_field(g, rng, 6.0, amplitude, k_cutoff=k_cutoff)
    mvals = _inv(pert.coeffs)
    mvals[2] += 1.0
    mvals /= np.sqrt(np.einsum("i...,i...->...", mvals, mvals))
    m = SpectralField(g, hermitian_symmetrize(_fwd(mvals)))
    return StateVector(v, B, m, 0.0)


def rel_spec_err(got, expected_values):
    diff = to_physical(got).values - expected_values
    scale = max(float(np.max(np.abs(expected_values))), 1e-300)
    return float(np.max(np.abs(diff))) / scale


# -- rhs_velocity ----------------------------------------------------------------


def test_rhs_velocity_rest_state_vanishes():
    g = Grid(8)
    s = StateVector(zero_field(g), zero_field(g), uniform_field(g, [0, 0, 1.0]), 0.0)
    out = rhs_velocity(s, PhysicalParams())
    assert np.max(np.abs(out.coeffs)) < 1e-15


def test_rhs_velocity_single_mode_viscous_decay():
    # v = (0, 0, sin x), B = 0, m uniform: the convective term vanishes and
    # only mu lap v = (0, 0, -mu sin x) survives
    g = Grid(16)
    mu = 0.7
    s = StateVector(
        from_exprs(g, (sp.Integer(0), sp.Integer(0), sp.sin(X))),
        zero_field(g),
        uniform_field(g, [0, 0, 1.0]),
        0.0,
    )
    out = rhs_velocity(s, PhysicalParams(mu=mu))
    expected = oracles.field_on_grid(g, (sp.Integer(0), sp.Integer(0), -mu * sp.sin(X)))
    assert rel_spec_err(out, expected) < 1e-13


def test_rhs_velocity_matches_finite_difference_oracle():
    g = Grid(32)
    p = PhysicalParams(mu=0.8, eta=1.2, gamma=0.9, chi=1.1)
    s = band_limited_state(g, seed=8, amplitude=0.2, k_cutoff=1.0)
    got = to_physical(rhs_velocity(s, p)).values
    project = lambda vals: _inv(
        __import__("fmhd.fields", fromlist=["project_divergence_free"]).project_divergence_free(
            _fwd(vals), g
        )
    )
    fd = oracles.fd_rhs_velocity(s, p, project)
    assert oracles.rel_l2(fd, got) < 1e-4


def test_rhs_velocity_output_divergence_free():
    g = Grid(16)
    s = random_state(g, seed=5, amplitude=0.4)
    out = rhs_velocity(s, PhysicalParams())
    assert divergence_residual(out) < 1e-13


# -- rhs_magnetic ----------------------------------------------------------------


def test_rhs_magnetic_single_mode_resistive_decay():
    g = Grid(16)
    eta = 1.3
    s = StateVector(
        zero_field(g),
        from_exprs(g, (sp.Integer(0), sp.Integer(0), sp.sin(X))),
        uniform_field(g, [0, 0, 1.0]),
        0.0,
    )
    out = rhs_magnetic(s, PhysicalParams(eta=eta))
    expected = oracles.field_on_grid(g, (sp.Integer(0), sp.Integer(0), -eta * sp.sin(X)))
    assert rel_spec_err(out, expected) < 1e-13


def test_rhs_magnetic_zero_B_vanishes():
    g = Grid(8)
    s = random_state(g, seed=3, amplitude=0.3)
    s.B = zero_field(g)
    out = rhs_magnetic(s, PhysicalParams())
    assert np.max(np.abs(out.coeffs)) < 1e-15


def test_rhs_magnetic_identity_expansion_oracle():
    # for divergence-free v and B: curl(v x B) = (B . grad) v - (v . grad) B
    g = Grid(16)
    p = PhysicalParams(eta=0.6)
    s = random_state(g, seed=21, amplitude=0.3)
    got = rhs_magnetic(s, p).coeffs
    stretch = calculus.convective(s.B, s.v).coeffs - calculus.convective(s.v, s.B).coeffs
    resistive = -p.eta * calculus.curl(calculus.curl(s.B)).coeffs
    expected = (resistive + stretch) * s.grid.dealias_mask
    scale = max(float(np.max(np.abs(expected))), 1e-300)
    assert np.max(np.abs(got - expected)) < 1e-11 * scale


def test_rhs_magnetic_matches_finite_difference_oracle():
    g = Grid(32)
    p = PhysicalParams(eta=0.75)
    s = band_limited_state(g, seed=18, amplitude=0.2, k_cutoff=1.0)
    got = to_physical(rhs_magnetic(s, p)).values
    fd = oracles.fd_rhs_magnetic(s, p)
    assert oracles.rel_l2(fd, got) < 1e-4


# -- rhs_magnetisation -------------------------------------------------------------


def test_rhs_magnetisation_uniform_hand_evaluation():
    # m = (0,0,1), B = (1,0,0), v = 0:
    #   gamma m x B = gamma (0,1,0);  -chi m x (m x B) = chi (1,0,0)
    g = Grid(8)
    gamma, chi = 0.8, 1.4
    s = StateVector(
        zero_field(g),
        uniform_field(g, [1.0, 0, 0]),
        uniform_field(g, [0, 0, 1.0]),
        0.0,
    )
    out = to_physical(rhs_magnetisation(s, PhysicalParams(gamma=gamma, chi=chi))).values
    assert np.allclose(out[0], chi, atol=1e-13)
    assert np.allclose(out[1], gamma, atol=1e-13)
    assert np.max(np.abs(out[2])) < 1e-13


def test_rhs_magnetisation_uniform_m_no_field_vanishes():
    g = Grid(8)
    s = StateVector(zero_field(g), zero_field(g), uniform_field(g, [0, 0, 1.0]), 0.0)
    out = rhs_magnetisation(s, PhysicalParams())
    assert np.max(np.abs(out.coeffs)) < 1e-15


def test_rhs_magnetisation_matches_finite_difference_oracle():
    g = Grid(32)
    p = PhysicalParams(mu=1.0, eta=1.0, gamma=1.3, chi=0.7)
    s = band_limited_state(g, seed=30, amplitude=0.2, k_cutoff=1.0)
    got = to_physical(rhs_magnetisation(s, p)).values
    fd = oracles.fd_rhs_magnetisation(s, p)
    assert oracles.rel_l2(fd, got) < 1e-4


def test_rhs_magnetisation_equivalent_to_unexpanded_form():
    """The damped-exchange expansion chi [lap m + |grad m|^2 m] - chi m x (m x B)
    agrees with the direct form -chi m x (m x (lap m + B)) when |m| = 1
    pointwise (triple product identity), for band-limited unit m."""
    g = Grid(16)
    gamma, chi = 1.2, 0.6
    rng = np.random.default_rng(77)
    v = random_field(g, rng, 6.0, 0.3, k_cutoff=2.0, divergence_free=True)
    B = random_field(g, rng, 6.0, 0.3, k_cutoff=2.0)
    m = unit_circle_m(g)
    s = StateVector(v, B, m, 0.0)
    got = rhs_magnetisation(s, PhysicalParams(gamma=gamma, chi=chi)).coeffs

    mv = to_physical(m).values
    Bv = to_physical(B).values
    lap_m = _inv(calculus.laplacian(m).coeffs)
    heff = lap_m + Bv
    direct = (
        -np.einsum("j...,ij...->i...", to_physical(v).values, _inv(calculus.gradient_coeffs(m)))
        + gamma * np.cross(mv, heff, axis=0)
        - chi * np.cross(mv, np.cross(mv, heff, axis=0), axis=0)
    )
    expected = _fwd(direct) * g.dealias_mask
    scale = max(float(np.max(np.abs(expected))), 1e-300)
    assert np.max(np.abs(got - expected)) < 1e-12 * scale


def test_magnetisation_cross_terms_orthogonal_to_m():
    # the precession and damping contributions to d|m|^2/dt vanish pointwise
    g = Grid(16)
    s = random_state(g, seed=50, amplitude=0.4)
    mv = to_physical(s.m).values
    Bv = to_physical(s.B).values
    lap_m = _inv(calculus.laplacian(s.m).coeffs)
    t1 = np.cross(mv, lap_m + Bv, axis=0)
    t2 = np.cross(mv, np.cross(mv, Bv, axis=0), axis=0)
    scale1 = np.max(np.abs(lap_m + Bv))
    scale2 = np.max(np.abs(Bv)) + 1e-300
    assert np.max(np.abs(np.einsum("i...,i...->...", mv, t1))) < 1e-13 * scale1
    assert np.max(np.abs(np.einsum("i...,i...->...", mv, t2))) < 1e-13 * scale2


def test_rhs_nonfinite_input_blamed():
    g = Grid(8)
    s = random_state(g, seed=1, amplitude=0.1)
    s.v.coeffs[0, 0, 0, 0] = np.inf
    with pytest.raises(FloatingPointError):
        rhs_velocity(s, PhysicalParams())


# -- truncation and stepper types -----------------------------------------------------


def test_truncation_mask_subset_of_dealias():
    g = Grid(16)
    t = Truncation(3.0)
    mask = t.mask(g)
    assert np.all(~mask | g.dealias_mask)
    assert mask.sum() == 7**3  # integer modes with |k|_inf <= 3


def test_truncation_exceeding_cutoff_rejected():
    g = Grid(16)
    with pytest.raises(ValueError):
        Truncation(6.0).mask(g)  # cutoff is 5.33


def test_stepper_validation():
    with pytest.raises(ValueError):
        TimeStepper("leapfrog", 0.1)
    with pytest.raises(ValueError):
        TimeStepper("etd_rk4", 0.0)
    st = TimeStepper("rk4_explicit", 1.0)
    warnings = st.cfl_warnings(Grid(16), PhysicalParams())
    assert warnings and "stability" in warnings[0]
    assert TimeStepper("rk4_explicit", 1e-4).cfl_warnings(Grid(16), PhysicalParams()) == []


def test_auto_dt_below_stability_limit():
    g = Grid(16)
    p = PhysicalParams(mu=2.0)
    assert auto_dt(g, p) < stability_limit(g, p)


# -- stepping --------------------------------------------------------------------------


def test_step_zero_state_stays_zero():
    g = Grid(8)
    s = StateVector(zero_field(g), zero_field(g), zero_field(g), 0.0)
    for scheme in ("imex_euler", "etd_rk4", "rk4_explicit"):
        out = step(s, TimeStepper(scheme, 0.01), PhysicalParams())
        assert np.max(np.abs(out.v.coeffs)) == 0.0
        assert out.time == 0.01


@pytest.mark.parametrize("scheme", ["imex_euler", "etd_rk4"])
def test_step_linear_only_exact_heat_kernel(scheme):
    # nonlinear terms configured off: a single mode decays by exp(-mu |k|^2 dt)
    g = Grid(16)
    mu, dt = 0.9, 0.02
    v0 = from_exprs(g, (sp.Integer(0), sp.Integer(0), sp.sin(X)))
    s = StateVector(v0, zero_field(g), uniform_field(g, [0, 0, 1.0]), 0.0)
    out = step(s, TimeStepper(scheme, dt), PhysicalParams(mu=mu), linear_only=True)
    expected = v0.coeffs * np.exp(-mu * dt)
    assert np.max(np.abs(out.v.coeffs - expected)) < 1e-14


def test_rk4_explicit_linear_heat_kernel_to_scheme_order():
    g = Grid(16)
    mu, dt = 1.0, 0.01
    v0 = from_exprs(g, (sp.Integer(0), sp.Integer(0), sp.sin(X)))
    s = StateVector(v0, zero_field(g), uniform_field(g, [0, 0, 1.0]), 0.0)
    out = step(s, TimeStepper("rk4_explicit", dt), PhysicalParams(mu=mu), linear_only=True)
    exact = np.exp(-mu * dt)
    rk4 = 1 - mu * dt + (mu * dt) ** 2 / 2 - (mu * dt) ** 3 / 6 + (mu * dt) ** 4 / 24
    got = out.v.coeffs[2, 1, 0, 0] / v0.coeffs[2, 1, 0, 0]
    assert abs(got - rk4) < 1e-13
    assert abs(got - exact) < (mu * dt) ** 5


def test_etd_rk4_self_convergence_order():
    # Richardson on the full nonlinear system: error slope ~ 4
    g = Grid(16)
    p = PhysicalParams()
    s = random_state(g, seed=2, amplitude=0.3)
    s, _ = prepare_initial(s)
    t_end = 0.25
    finals = []
    for dt in (1 / 32, 1 / 64, 1 / 128):
        traj, _ = simulate(s, t_end, TimeStepper("etd_rk4", dt), p,
                           diagnostics_every=10_000, prepare=False, record_states=False)
        finals.append(traj.final_state)
    e1 = _combined_diff(finals[0], finals[1])
    e2 = _combined_diff(finals[1], finals[2])
    slope = np.log2(e1 / e2)
    assert 3.7 < slope < 4.3


def _combined_diff(a, b):
    return np.sqrt(
        sobolev_norm(a.v - b.v, 0) ** 2
        + sobolev_norm(a.B - b.B, 0) ** 2
        + sobolev_norm(a.m - b.m, 0) ** 2
    )


# -- simulate ---------------------------------------------------------------------------


def test_simulate_zero_span_records_initial_only():
    g = Grid(8)
    p = PhysicalParams()
    s = random_state(g, seed=1, amplitude=0.1)
    traj, rec = simulate(s, 0.0, TimeStepper("etd_rk4", 0.01), p)
    assert len(rec) == 1
    assert traj.final_state.time == 0.0


def test_simulate_zero_amplitude_stays_zero():
    g = Grid(8)
    p = PhysicalParams()
    s = random_state(g, seed=1, amplitude=0.0)
    traj, rec = simulate(s, 0.3, TimeStepper("etd_rk4", 0.05), p)
    assert max(rec.l2_v) == 0.0
    assert max(rec.l2_B) == 0.0
    assert max(rec.unit_drift_m) < 1e-13


def test_simulate_divergence_preserved():
    g = Grid(16)
    p = PhysicalParams()
    s = random_state(g, seed=9, amplitude=0.3)
    traj, rec = simulate(s, 0.5, TimeStepper("etd_rk4", auto_dt(g, p)), p, diagnostics_every=5)
    assert max(rec.div_drift_v) < 1e-12
    assert max(rec.div_drift_B) < 1e-12
    assert not traj.blew_up


def test_simulate_resolution_independence_for_band_limited_dynamics():
    # truncation k_max = 2 keeps even the cubic products alias-free on both
    # grids, so the two resolutions integrate the same finite ODE system
    g16, g32 = Grid(16), Grid(32)
    p = PhysicalParams()
    rng = np.random.default_rng(12)
    v = random_field(g16, rng, 6.0, 0.2, k_cutoff=2.0, divergence_free=True)
    B = random_field(g16, rng, 6.0, 0.2, k_cutoff=2.0, divergence_free=True)
    m = unit_circle_m(g16)
    s16 = StateVector(v, B, m, 0.0)
    s32 = StateVector(resample(v, g32), resample(B, g32), resample(m, g32), 0.0)
    stepper = TimeStepper("etd_rk4", 0.005)
    trunc = Truncation(2.0)
    kw = dict(diagnostics_every=10_000, prepare=False, record_states=False)
    f16, _ = simulate(s16, 0.5, stepper, p, trunc, **kw)
    f32, _ = simulate(s32, 0.5, stepper, p, trunc, **kw)
    a = f16.final_state
    b = f32.final_state
    diff = np.sqrt(
        sobolev_norm(resample(a.v, g32) - b.v, 0) ** 2
        + sobolev_norm(resample(a.B, g32) - b.B, 0) ** 2
        + sobolev_norm(resample(a.m, g32) - b.m, 0) ** 2
    )
    scale = np.sqrt(sobolev_norm(b.v, 0) ** 2 + sobolev_norm(b.B, 0) ** 2 + sobolev_norm(b.m, 0) ** 2)
    assert diff < 1e-8 * scale


def test_simulate_record_cadence():
    g = Grid(8)
    p = PhysicalParams()
    s = random_state(g, seed=3, amplitude=0.1)
    traj, rec = simulate(s, 0.1, TimeStepper("etd_rk4", 0.004), p, diagnostics_every=7)
    n_steps = 25  # 0.1 / 0.004
    assert len(rec) == 1 + n_steps // 7
    assert traj.final_state.time == pytest.approx(0.1, abs=1e-12)


def test_simulate_blowup_reported_with_partial_results():
    g = Grid(16)
    p = PhysicalParams()
    s = random_state(g, seed=7, amplitude=0.3)
    dt = 10.0 * stability_limit(g, p)
    traj, rec = simulate(s, 5.0, TimeStepper("rk4_explicit", dt), p, diagnostics_every=1)
    assert traj.blew_up
    assert traj.blowup_time is not None and traj.blowup_time > 0.0
    assert rec.blowup_time == traj.blowup_time
    assert len(rec) >= 1
    assert all(np.isfinite(v) for v in rec.l2_v)


def test_step_blowup_raises_with_last_valid_time():
    g = Grid(16)
    p = PhysicalParams()
    s = random_state(g, seed=7, amplitude=0.3)
    s.time = 1.5
    huge = TimeStepper("rk4_explicit", 5000.0 * stability_limit(g, p))
    with pytest.raises(BlowUpError) as err:
        st = s
        for _ in range(50):
            st = step(st, huge, p)
    assert err.value.time >= 1.5


def test_prepare_initial_reports_truncation_drift():
    g = Grid(16)
    s = random_state(g, seed=4, amplitude=0.4)
    prepped, drift = prepare_initial(s, Truncation(3.0))
    assert drift > 0.0  # truncation broke the unit magnitude before renormalization
    assert unit_drift(prepped.m) < 1e-13
    assert divergence_residual(prepped.v) < 1e-13


def test_galerkin_nesting_linear_regime():
    # initial data inside the coarse mask: with nonlinear terms off, the
    # coarse run equals the fine run restricted to the coarse mask
    g = Grid(16)
    p = PhysicalParams()
    rng = np.random.default_rng(23)
    v = random_field(g, rng, 6.0, 0.5, k_cutoff=2.0, divergence_free=True)
    B = random_field(g, rng, 6.0, 0.5, k_cutoff=2.0, divergence_free=True)
    m = unit_circle_m(g)
    s = StateVector(v, B, m, 0.0)
    stepper = TimeStepper("etd_rk4", 0.01)
    kw = dict(diagnostics_every=10_000, prepare=False, record_states=False, linear_only=True)
    coarse, _ = simulate(s, 0.3, stepper, p, Truncation(2.0), **kw)
    fine, _ = simulate(s, 0.3, stepper, p, Truncation(4.0), **kw)
    mask = Truncation(2.0).mask(g)
    for fld in ("v", "B", "m"):
        a = getattr(coarse.final_state, fld).coeffs
        b = getattr(fine.final_state, fld).coeffs * mask
        scale = max(float(np.max(np.abs(a))), 1e-300)
        assert np.max(np.abs(a - b)) < 1e-13 * scale


def test_galerkin_nesting_nonlinear_difference_decreases():
    g = Grid(16)
    p = PhysicalParams()
    s = random_state(g, seed=31, amplitude=0.2)
    s, _ = prepare_initial(s, Truncation(2.0))
    stepper = TimeStepper("etd_rk4", auto_dt(g, p))
    kw = dict(diagnostics_every=10_000, prepare=False, record_states=False)
    finals = []
    for k in (2.0, 3.0, 4.0, 5.0):
        traj, _ = simulate(s, 0.5, stepper, p, Truncation(k), **kw)
        finals.append(traj.final_state)
    diffs = [_combined_diff(a, b) for a, b in zip(finals, finals[1:])]
    assert all(b < a for a, b in zip(diffs, diffs[1:]))


# -- energy law --------------------------------------------------------------------------


@pytest.mark.parametrize("scheme", ["imex_euler", "etd_rk4", "rk4_explicit"])
def test_energy_law_decoupled_mhd(scheme):
    # uniform m with inert magnetisation couplings: the discrete energy
    # decrement of (1/2)(||v||^2 + ||B||^2) must match the dissipation
    # integrated by the same scheme, within 10x the local-error estimate
    g = Grid(16)
    p = PhysicalParams(mu=1.0, eta=0.8, gamma=1e-15, chi=1e-15)
    rng = np.random.default_rng(16)
    v = random_field(g, rng, 6.0, 0.5, divergence_free=True)
    B = random_field(g, rng, 6.0, 0.5, divergence_free=True)
    s = StateVector(v, B, uniform_field(g, [0, 0, 1.0]), 0.0)
    dt = auto_dt(g, p) * (4.0 if scheme != "rk4_explicit" else 1.0)
    rows = energy_law_audit(s, TimeStepper(scheme, dt), p, n_steps=8)
    e_scale = abs(rows[0].energy_decrement) + abs(rows[0].scheme_integral)
    for row in rows:
        floor = 1e-13 * e_scale
        assert row.defect <= 10.0 * row.lte_estimate + floor, (
            f"{scheme}: defect {row.defect:.3e} vs lte {row.lte_estimate:.3e}"
        )
    # the law must actually be dissipative
    assert all(row.energy_decrement < 0 for row in rows)

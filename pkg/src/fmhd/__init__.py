"""Pseudo-spectral solver for incompressible ferromagnetic magnetohydrodynamics
on the periodic torus, with diagnostics and experiment drivers."""

from .fields import (
    Grid,
    PhysicalField,
    PhysicalParams,
    SpectralField,
    StateVector,
    FieldError,
    load_checkpoint,
    normalize_magnitude,
    random_field,
    random_state,
    resample,
    save_checkpoint,
    to_physical,
    to_spectral,
)
from .calculus import (
    TensorField,
    convective,
    cross,
    curl,
    divergence,
    gradient_vec,
    identity_suite,
    laplacian,
    leray_project,
    scalar_gradient,
)
from .dynamics import (
    BlowUpError,
    TimeStepper,
    Trajectory,
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
from .diagnostics import (
    DiagnosticsRecord,
    GronwallResult,
    PowerLaw,
    StabilityMetric,
    TabulatedMonotone,
    energy_E,
    energy_J,
    gronwall_bound,
    gronwall_breakdown_time,
    sobolev_norm,
    stability_metric,
    unit_drift,
)
from .harness import (
    ConfigError,
    SimConfig,
    StudyResult,
    convergence_study,
    emit_config,
    identity_command,
    parse_config,
    run,
    stability_study,
)

__version__ = "0.1.0"

"""Configuration, experiment drivers and persistence.

Configs are flat key-value text documents with dotted section names
(``grid.n = 16``); unknown keys are rejected so typos cannot silently fall
back to defaults.  The drivers cover a single diagnosed run, a truncation
convergence study, a twin-run stability study and the identity suite; each
returns a StudyResult with a stable exit-code contract:

    0  pass
    1  threshold failure
    2  blow-up reported
    3  usage / config error
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from . import calculus, diagnostics, dynamics
from .fields import Grid, PhysicalParams, SpectralField, StateVector, random_state

EXIT_PASS = 0
EXIT_THRESHOLD = 1
EXIT_BLOWUP = 2
EXIT_USAGE = 3

#: thresholds for a passing run at default settings
DIV_DRIFT_THRESHOLD = 1e-12
UNIT_DRIFT_THRESHOLD = 1e-6

#: spread factor allowed between stability ratios across perturbation sizes
STABILITY_SPREAD_FACTOR = 4.0


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    grid_n: int = 16
    grid_box_length: float = 2.0 * np.pi
    grid_dealias_fraction: float = 2.0 / 3.0
    params_mu: float = 1.0
    params_eta: float = 1.0
    params_gamma: float = 1.0
    params_chi: float = 1.0
    stepper_scheme: str = "etd_rk4"
    stepper_dt: float | str = "auto"
    truncation_k_max: float | str = "full"
    t_end: float = 1.0
    seed: int = 1
    initial_amplitude: float = 0.1
    decay_exponent: float = 6.0
    diagnostics_every: int = 10
    linear_only: bool = False
    output_dir: str = ""

    # -- builders -----------------------------------------------------------

    def build_grid(self) -> Grid:
        return Grid(self.grid_n, self.grid_box_length, self.grid_dealias_fraction)

    def build_params(self) -> PhysicalParams:
        return PhysicalParams(self.params_mu, self.params_eta, self.params_gamma, self.params_chi)

    def build_truncation(self, grid: Grid) -> dynamics.Truncation:
        if self.truncation_k_max == "full":
            return dynamics.Truncation.full(grid)
        return dynamics.Truncation(float(self.truncation_k_max))

    def build_stepper(self, grid: Grid, params: PhysicalParams) -> dynamics.TimeStepper:
        dt = self.stepper_dt
        if dt == "auto":
            dt = dynamics.auto_dt(grid, params)
        return dynamics.TimeStepper(self.stepper_scheme, float(dt))

    def resolve_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        env = os.environ.get("FMHD_OUTPUT_DIR", "")
        return Path(env) if env else Path("fmhd_out")

    def initial_state(self, grid: Grid) -> StateVector:
        return random_state(grid, self.seed, self.decay_exponent, self.initial_amplitude)


# key path -> (attribute, parser); parsers raise ConfigError with the key path
def _parse_int(key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {raw!r}") from None


def _parse_float(key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {raw!r}") from None


def _parse_float_or(token):
    def parse(key, raw):
        if raw == token:
            return token
        return _parse_float(key, raw)
    return parse


def _parse_bool(key, raw):
    if raw in ("true", "True", "1", "yes"):
        return True
    if raw in ("false", "False", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


def _parse_str(key, raw):
    return raw


_CONFIG_KEYS = {
    "grid.n": ("grid_n", _parse_int),
    "grid.box_length": ("grid_box_length", _parse_float),
    "grid.dealias_fraction": ("grid_dealias_fraction", _parse_float),
    "params.mu": ("params_mu", _parse_float),
    "params.eta": ("params_eta", _parse_float),
    "params.gamma": ("params_gamma", _parse_float),
    "params.chi": ("params_chi", _parse_float),
    "stepper.scheme": ("stepper_scheme", _parse_str),
    "stepper.dt": ("stepper_dt", _parse_float_or("auto")),
    "truncation.k_max": ("truncation_k_max", _parse_float_or("full")),
    "t_end": ("t_end", _parse_float),
    "seed": ("seed", _parse_int),
    "initial_amplitude": ("initial_amplitude", _parse_float),
    "decay_exponent": ("decay_exponent", _parse_float),
    "diagnostics_every": ("diagnostics_every", _parse_int),
    "linear_only": ("linear_only", _parse_bool),
    "output_dir": ("output_dir", _parse_str),
}


def _validate(cfg: SimConfig) -> SimConfig:
    try:
        grid = cfg.build_grid()
        params = cfg.build_params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.stepper_scheme not in dynamics.SCHEMES:
        raise ConfigError(
            f"stepper.scheme: unknown scheme {cfg.stepper_scheme!r}, expected one of {dynamics.SCHEMES}"
        )
    if cfg.stepper_dt != "auto" and not float(cfg.stepper_dt) > 0:
        raise ConfigError("stepper.dt must be positive or 'auto'")
    if cfg.truncation_k_max != "full":
        try:
            cfg.build_truncation(grid).mask(grid)
        except ValueError as exc:
            raise ConfigError(f"truncation.k_max: {exc}") from None
    if cfg.decay_exponent < 4:
        raise ConfigError("decay_exponent must be >= 4")
    if cfg.diagnostics_every < 1:
        raise ConfigError("diagnostics_every must be >= 1")
    if cfg.initial_amplitude < 0:
        raise ConfigError("initial_amplitude must be nonnegative")
    del grid, params
    return cfg


def parse_config(text: str) -> SimConfig:
    """Parse a flat key-value document; '#' starts a comment.  Unknown keys,
    type mismatches and invariant violations are errors naming the key."""
    cfg = SimConfig()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown key: {key}")
        attr, parser = _CONFIG_KEYS[key]
        setattr(cfg, attr, parser(key, raw))
    return _validate(cfg)


def parse_config_file(path: str | Path) -> SimConfig:
    return parse_config(Path(path).read_text())


def apply_overrides(cfg: SimConfig, pairs: list[str]) -> SimConfig:
    """Apply 'key=value' overrides (flag > file > default precedence)."""
    cfg = replace(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must be key=value, got {pair!r}")
        key, raw = (part.strip() for part in pair.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown key: {key}")
        attr, parser = _CONFIG_KEYS[key]
        setattr(cfg, attr, parser(key, raw))
    return _validate(cfg)


def emit_config(cfg: SimConfig) -> str:
    """Render a config document that parses back to an equal config."""
    lines = []
    for key, (attr, _) in _CONFIG_KEYS.items():
        value = getattr(cfg, attr)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# study results
# ---------------------------------------------------------------------------


@dataclass
class StudyResult:
    kind: str
    cases: list[dict] = dc_field(default_factory=list)
    passed: bool = True
    exit_code: int = EXIT_PASS
    notes: list[str] = dc_field(default_factory=list)

    def __post_init__(self):
        labels = [c.get("label") for c in self.cases]
        if len(labels) != len(set(labels)):
            raise ValueError("case labels must be unique")

    def to_table(self) -> str:
        if not self.cases:
            return f"{self.kind}: no cases"
        columns = list(self.cases[0].keys())
        widths = {
            c: max(len(c), *(len(_cell(case.get(c))) for case in self.cases)) for c in columns
        }
        header = "  ".join(c.ljust(widths[c]) for c in columns)
        rows = [
            "  ".join(_cell(case.get(c)).ljust(widths[c]) for c in columns)
            for case in self.cases
        ]
        status = "PASS" if self.passed else "FAIL"
        lines = [f"study: {self.kind}  [{status}]", header, *rows]
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)

    def write(self, output_dir: str | Path) -> None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        (output_dir / f"{self.kind}_summary.txt").write_text(self.to_table() + "\n")
        with open(output_dir / f"{self.kind}_summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            if self.cases:
                columns = list(self.cases[0].keys())
                writer.writerow(columns)
                for case in self.cases:
                    writer.writerow([_cell(case.get(c)) for c in columns])


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _simulate_config(cfg: SimConfig, s0: StateVector, *, prepare: bool = True,
                     record_states: bool = True):
    grid = s0.grid
    params = cfg.build_params()
    trunc = cfg.build_truncation(grid)
    stepper = cfg.build_stepper(grid, params)
    return dynamics.simulate(
        s0,
        cfg.t_end,
        stepper,
        params,
        trunc,
        diagnostics_every=cfg.diagnostics_every,
        linear_only=cfg.linear_only,
        prepare=prepare,
        record_states=record_states,
    )


def run(cfg: SimConfig, write_outputs: bool = True) -> StudyResult:
    """Single diagnosed run: simulate, write CSV and checkpoints, and compare
    the invariant drift maxima against the declared thresholds."""
    grid = cfg.build_grid()
    s0 = cfg.initial_state(grid)
    traj, record = _simulate_config(cfg, s0)

    max_div = max(max(record.div_drift_v), max(record.div_drift_B))
    max_unit = max(record.unit_drift_m)
    fitted_c = diagnostics.fit_power_envelope(record.time, record.E)

    case = {
        "label": "run",
        "t_final": traj.final_state.time,
        "l2_v": record.l2_v[-1],
        "l2_B": record.l2_B[-1],
        "h1_m": record.h1_m[-1],
        "max_div_drift": max_div,
        "max_unit_drift": max_unit,
        "initial_truncation_drift_m": record.initial_truncation_drift_m,
        "envelope_constant": fitted_c,
        "blew_up": traj.blew_up,
        "t_star": traj.blowup_time if traj.blew_up else "",
    }
    result = StudyResult(kind="run", cases=[case])
    if traj.blew_up:
        result.passed = False
        result.exit_code = EXIT_BLOWUP
        result.notes.append(f"blow-up at t={traj.blowup_time!r}: {traj.blowup_detail}")
    elif max_div >= DIV_DRIFT_THRESHOLD or max_unit >= UNIT_DRIFT_THRESHOLD:
        result.passed = False
        result.exit_code = EXIT_THRESHOLD
        result.notes.append(
            f"drift thresholds: div {max_div:.3e} vs {DIV_DRIFT_THRESHOLD:.1e}, "
            f"unit {max_unit:.3e} vs {UNIT_DRIFT_THRESHOLD:.1e}"
        )
    result.notes.append(
        f"growth-envelope constant fitted on E(t): {fitted_c!r} (reported, not asserted)"
    )

    if write_outputs:
        out = cfg.resolve_output_dir()
        out.mkdir(parents=True, exist_ok=True)
        record.write_csv(out / "diagnostics.csv")
        traj.save_checkpoints(out / "checkpoints")
        (out / "config.txt").write_text(emit_config(cfg))
        result.write(out)
    return result


def convergence_study(cfg: SimConfig, k_list: list[float], write_outputs: bool = True) -> StudyResult:
    """Truncation refinement from shared initial data; reports the decay of
    the final-state differences between consecutive truncations."""
    if len(k_list) < 2:
        raise ConfigError("need >= 2 truncations")
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise ConfigError("truncation list must be strictly increasing")
    grid = cfg.build_grid()
    for k in k_list:
        if k > grid.dealias_cutoff * (1.0 + 1e-9):
            raise ConfigError(f"truncation k={k} exceeds dealias cutoff {grid.dealias_cutoff:.6g}")

    # shared initial data, representable at the smallest truncation
    s_raw = cfg.initial_state(grid)
    s_shared, init_drift = dynamics.prepare_initial(s_raw, dynamics.Truncation(k_list[0]))

    finals: list[StateVector] = []
    cases = []
    blowups = 0
    for k in k_list:
        case_cfg = replace(cfg, truncation_k_max=float(k))
        traj, record = _simulate_config(case_cfg, s_shared, prepare=False, record_states=False)
        finals.append(traj.final_state)
        cases.append(
            {
                "label": f"k={k:g}",
                "t_final": traj.final_state.time,
                "l2_v": record.l2_v[-1],
                "l2_B": record.l2_B[-1],
                "max_unit_drift": max(record.unit_drift_m),
                "blew_up": traj.blew_up,
            }
        )
        blowups += int(traj.blew_up)

    diffs = [_combined_l2_diff(a, b) for a, b in zip(finals, finals[1:])]
    for case, diff in zip(cases[1:], diffs):
        case["diff_from_previous"] = diff
    cases[0]["diff_from_previous"] = ""

    decreasing = all(b < a for a, b in zip(diffs, diffs[1:]))
    # the decay-ratio criterion needs at least two differences to say anything
    decayed = len(diffs) < 2 or diffs[0] == 0.0 or diffs[-1] < 1e-2 * diffs[0]
    result = StudyResult(kind="convergence", cases=cases)
    result.notes.append(f"initial truncation drift of m: {init_drift!r}")
    result.notes.append(f"differences d_j: {[repr(d) for d in diffs]}")
    if blowups:
        result.passed = False
        result.exit_code = EXIT_BLOWUP
        result.notes.append(f"{blowups} case(s) blew up")
    elif not (decreasing and decayed):
        result.passed = False
        result.exit_code = EXIT_THRESHOLD
        result.notes.append(
            f"expected strictly decreasing d_j with d_last/d_first < 1e-2, "
            f"got ratio {diffs[-1] / diffs[0] if diffs[0] else 0.0!r}"
        )
    if write_outputs:
        result.write(cfg.resolve_output_dir())
    return result


def _combined_l2_diff(a: StateVector, b: StateVector) -> float:
    return float(
        np.sqrt(
            diagnostics.l2_norm(a.v - b.v) ** 2
            + diagnostics.l2_norm(a.B - b.B) ** 2
            + diagnostics.l2_norm(a.m - b.m) ** 2
        )
    )


def stability_study(cfg: SimConfig, deltas: list[float], write_outputs: bool = True) -> StudyResult:
    """Twin runs: evolve the base state and a v-perturbed copy for each delta
    and report the ratio sup_t(difference) / initial difference.  The pass
    criterion is delta-independence: max ratio / min ratio below a factor of
    4, every ratio finite."""
    if any(d < 0 for d in deltas):
        raise ConfigError("perturbation sizes must be nonnegative")
    grid = cfg.build_grid()
    trunc = cfg.build_truncation(grid)
    s_raw = cfg.initial_state(grid)
    s_base, _ = dynamics.prepare_initial(s_raw, trunc)

    base_traj, _ = _simulate_config(cfg, s_base, prepare=False)
    if base_traj.blew_up:
        result = StudyResult(kind="stability", cases=[], passed=False, exit_code=EXIT_BLOWUP)
        result.notes.append("base run blew up; study inconclusive")
        return result

    cases = []
    ratios = []
    any_blowup = False
    for delta in deltas:
        # perturb v only; m is untouched and already unit, B is shared, so the
        # twin differs from the base in exactly the scaled velocity
        v_pert = SpectralField(grid, s_base.v.coeffs * (1.0 + delta))
        twin0 = StateVector(v_pert, s_base.B, s_base.m, s_base.time)
        twin_traj, _ = _simulate_config(cfg, twin0, prepare=False)
        label = f"delta={delta:g}"
        if twin_traj.blew_up:
            any_blowup = True
            cases.append({"label": label, "ratio": "", "status": "inconclusive (blow-up)"})
            continue
        metric = diagnostics.stability_metric(base_traj, twin_traj)
        status = "degenerate" if metric.degenerate else "ok"
        cases.append(
            {
                "label": label,
                "initial_diff": metric.initial_diff,
                "sup_diff": metric.sup_diff,
                "ratio": metric.ratio,
                "status": status,
            }
        )
        if not metric.degenerate:
            ratios.append(metric.ratio)

    result = StudyResult(kind="stability", cases=cases)
    if ratios:
        spread = max(ratios) / min(ratios)
        result.notes.append(f"observed stability constants: {[repr(r) for r in ratios]}")
        result.notes.append(f"ratio spread across deltas: {spread!r}")
        finite = all(np.isfinite(r) for r in ratios)
        if not finite or spread >= STABILITY_SPREAD_FACTOR:
            result.passed = False
            result.exit_code = EXIT_THRESHOLD
    elif any_blowup:
        result.passed = False
        result.exit_code = EXIT_BLOWUP
        result.notes.append("all cases inconclusive (blow-up)")
    if any_blowup and result.exit_code == EXIT_PASS:
        result.notes.append("some cases inconclusive (blow-up), excluded from the spread")
    if write_outputs:
        result.write(cfg.resolve_output_dir())
    return result


def identity_command(n: int = 32, seed: int = 0, box_length: float = 2.0 * np.pi,
                     dealias_fraction: float = 2.0 / 3.0) -> tuple[int, str]:
    """Run the identity suite; exit status reflects overall pass."""
    grid = Grid(n, box_length, dealias_fraction)
    report = calculus.identity_suite(grid, seed)
    return (EXIT_PASS if report.passed else EXIT_THRESHOLD), report.to_table()

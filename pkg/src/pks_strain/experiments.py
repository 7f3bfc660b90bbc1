"""Scenario presets, hypothesis checks, the run loop and parameter sweeps."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import diagnostics as dg
from .dynamics import (BLOWN_UP, HEALTHY, SUSPECTED, BlowupThresholds, StepperState, Stepper,
                       StrainField, detect_blowup, gaussian, select_amplitude, two_bump)
from .grid import DensityField, Grid2D, half_plane_stats, mirror_symmetry_error, moment, read_snapshot
from .kernel import ChemoSolution, build_kernel, potential_arrays, verify_kernel_bounds

log = logging.getLogger(__name__)

CRITICAL_MASS = 8 * math.pi
INITIAL_KINDS = ("two_bump", "gaussian", "snapshot")
A_MODES = ("explicit", "auto")
COVERAGE = ("none", "moderate_mass", "splitting")
ALL_CHECKS = ("conservation", "symmetry", "energy", "virial", "hls", "negative_entropy",
              "c_estimate", "splitting", "moments", "kernel_bounds")

# per-check tolerances
DRIFT_TOL = 1e-12          # interior-flux drift per step, relative to M
OUTFLOW_TOL = 1e-10        # cumulative mass change vs metered outflow, relative to M
SYMMETRY_TOL = 1e-12       # relative to max n
ENERGY_TOL = 1e-6          # times (|E(0)| + 1), per step
HLS_TOL = 1e-3             # times M
VIRIAL_RTOL = 0.02
VIRIAL_ATOL = 0.5 * math.pi
SMOOTH_RATIO = 10.0        # virial equality is only claimed while max n <= this * max n0


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce a run.

    ``epsilon`` overrides ``epsilon_cells * h`` when given.  With
    ``a_mode="auto"`` the strain amplitude is M_plus / delta^2 measured on the
    discrete initial data.  ``output_interval=None`` spreads 100 records over
    the run.
    """
    name: str = "custom"
    initial: str = "gaussian"
    mass: float = 4 * math.pi
    sigma: float = 1.0
    y0: float = 4.0
    snapshot: str | None = None
    a_mode: str = "explicit"
    amplitude: float = 0.0
    delta: float = 0.25
    eta: float = 0.1
    epsilon: float | None = None
    epsilon_cells: float = 2.0
    bridge: str = "log"
    half_width: float = 8.0
    cells: int = 256
    cfl: float = 0.4
    transport: str = "muscl"
    limiter: str = "minmod"
    chemotaxis: bool = True
    diffusion: bool = True
    t_max: float = 10.0
    output_interval: float | None = 0.05
    stop_at_box: bool = True
    thresholds: BlowupThresholds = field(default_factory=BlowupThresholds)
    checks: tuple = ALL_CHECKS
    coverage: str = "none"
    expected: str | None = None

    def __post_init__(self):
        if self.initial not in INITIAL_KINDS:
            raise ValueError(f"initial must be one of {INITIAL_KINDS}, got {self.initial!r}")
        if self.a_mode not in A_MODES:
            raise ValueError(f"A_mode must be one of {A_MODES}, got {self.a_mode!r}")
        if self.coverage not in COVERAGE:
            raise ValueError(f"coverage must be one of {COVERAGE}, got {self.coverage!r}")
        if self.initial == "snapshot" and not self.snapshot:
            raise ValueError("initial = snapshot needs a snapshot path")
        if self.mass <= 0 and self.initial != "snapshot":
            raise ValueError("mass must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.output_interval is not None and self.output_interval <= 0:
            raise ValueError("output_interval must be positive")
        unknown = set(self.checks) - set(ALL_CHECKS)
        if unknown:
            raise ValueError(f"unknown checks {sorted(unknown)}; choose from {ALL_CHECKS}")
        self.checks = tuple(c for c in ALL_CHECKS if c in self.checks)
        Grid2D(self.half_width, self.cells)  # raises on odd N

    @property
    def grid(self) -> Grid2D:
        return Grid2D(self.half_width, self.cells)

    @property
    def resolved_epsilon(self) -> float:
        return self.epsilon if self.epsilon is not None else self.epsilon_cells * self.grid.h

    def initial_field(self) -> DensityField:
        g = self.grid
        if self.initial == "two_bump":
            return two_bump(g, self.mass, self.y0, self.sigma)
        if self.initial == "gaussian":
            return gaussian(g, self.mass, self.sigma)
        n, _ = read_snapshot(self.snapshot)
        if n.grid != g:
            raise ValueError(f"snapshot grid {n.grid} does not match N={self.cells}, L={self.half_width}")
        return n

    def resolve_amplitude(self, n0: DensityField) -> float:
        if self.a_mode == "explicit":
            return float(self.amplitude)
        m_plus = float(n0.grid.h**2 * n0.values[:, n0.grid.upper()].sum())
        return select_amplitude(m_plus, self.delta)


def preset(name: str) -> ScenarioConfig:
    static = dict(initial="gaussian", sigma=1.0, half_width=7.0, cells=256, epsilon_cells=1.0,
                  t_max=10.0, output_interval=0.05)
    table = {
        "static_subcritical": dict(static, mass=4 * math.pi, half_width=8.0, expected=HEALTHY),
        "static_critical": dict(static, mass=8 * math.pi),
        "static_supercritical": dict(static, mass=12 * math.pi, expected=BLOWN_UP),
        "strained_supercritical": dict(
            initial="two_bump", mass=12 * math.pi, y0=4.0, sigma=0.5, a_mode="auto", delta=0.25,
            eta=0.1, half_width=32.0, cells=512, epsilon_cells=2.0, t_max=10.0, limiter="mc",
            output_interval=None, coverage="splitting", expected=HEALTHY),
        "heat_sanity": dict(initial="gaussian", mass=4 * math.pi, sigma=0.5, half_width=8.0,
                            cells=256, chemotaxis=False, t_max=0.5, output_interval=0.05,
                            expected=HEALTHY),
        "advection_sanity": dict(initial="two_bump", mass=1.0, y0=1.0, sigma=0.5, amplitude=1.0,
                                 half_width=8.0, cells=256, chemotaxis=False, diffusion=False,
                                 t_max=0.5, output_interval=0.05, expected=HEALTHY),
    }
    if name not in table:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return ScenarioConfig(name=name, **table[name])


PRESETS = ("static_subcritical", "static_critical", "static_supercritical",
           "strained_supercritical", "heat_sanity", "advection_sanity")


# ---------------------------------------------------------------- hypotheses

@dataclass
class HypothesisReport:
    mass: float
    m_plus: float
    y_plus: float
    v_plus: float
    r2: float
    symmetry_error: float
    second_moment: float
    fourth_moment: float
    amplitude: float
    flags: dict

    @property
    def passed(self) -> bool:
        return all(self.flags.values())


def moderate_mass_limit(r2: float, eta: float) -> float:
    """16 pi / (1 + (1 + eta)^2 / R^2)."""
    return 16 * math.pi / (1 + (1 + eta) ** 2 / r2)


def validate_hypotheses(cfg: ScenarioConfig, n0: DensityField) -> HypothesisReport:
    """Measure the initial datum and flag each hypothesis of the claimed regime."""
    mass = n0.mass
    sym = mirror_symmetry_error(n0)
    try:
        m_plus, y_plus, v_plus = half_plane_stats(n0) if sym <= SYMMETRY_TOL * max(n0.max, 1e-300) \
            else _stats_quiet(n0)
        r2 = dg.r_squared(m_plus, y_plus, v_plus)
    except ValueError:
        m_plus, y_plus, v_plus, r2 = 0.0, math.nan, math.nan, math.nan
    v2, v4 = moment(n0, "r2"), moment(n0, "quartic")
    amplitude = cfg.resolve_amplitude(n0) if m_plus > 0 or cfg.a_mode == "explicit" else math.nan
    flags = {
        "symmetric": sym <= SYMMETRY_TOL * max(n0.max, 1e-300),
        "r2_above_one": bool(r2 > 1),
        "finite_moments": bool(np.isfinite(v2) and np.isfinite(v4)),
    }
    if cfg.coverage in ("moderate_mass", "splitting"):
        flags["mass_below_16pi"] = mass < 16 * math.pi
    if cfg.coverage == "moderate_mass":
        flags["moderate_mass"] = bool(r2 > 1 and mass < moderate_mass_limit(r2, cfg.eta))
    if cfg.coverage == "none":
        # symmetric two-half-plane hypotheses are informative only
        flags = {"finite_moments": flags["finite_moments"]}
    return HypothesisReport(mass, m_plus, y_plus, v_plus, r2, sym, v2, v4, amplitude, flags)


def _stats_quiet(n0):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return half_plane_stats(n0)


# ---------------------------------------------------------------- run

@dataclass
class StepLedger:
    """Worst per-step values seen during a run."""
    steps: int = 0
    max_drift: float = 0.0
    max_mass_error: float = 0.0
    max_symmetry: float = 0.0
    max_energy_rise: float = 0.0
    energy_violations: int = 0
    min_value: float = 0.0


@dataclass
class RunResult:
    config: ScenarioConfig
    verdict: str
    t_end: float
    t_detect: float | None
    history: list
    reports: dict
    checks: dict
    amplitude: float
    epsilon: float
    t_box: float
    hypotheses: HypothesisReport
    ledger: StepLedger
    events: list
    final_state: StepperState = field(repr=False)

    @property
    def checks_passed(self) -> bool:
        return all(self.checks.values())


def _uniform_prefix(history):
    """Records equally spaced from the start; the final record may be off-grid."""
    if len(history) < 3:
        return history
    dt = history[1].t - history[0].t
    k = len(history)
    while k > 2 and abs((history[k - 1].t - history[k - 2].t) - dt) > 1e-9 * dt:
        k -= 1
    return history[:k]


def _virial_reports(history, amplitude, n0max, records_max, cfg):
    uni = _uniform_prefix(history)
    if len(uni) < 3:
        return [], []
    vr = dg.virial_residuals(uni, amplitude, chemotaxis=cfg.chemotaxis, diffusion=cfg.diffusion)
    mass = np.array([r.M for r in uni])[1:-1]
    smooth = np.array([max(records_max[i - 1:i + 2]) for i in range(1, len(uni) - 1)]) <= SMOOTH_RATIO * n0max
    eq, ineq = [], []
    for k, t in enumerate(vr.t):
        if smooth[k]:
            tol = VIRIAL_RTOL * abs(vr.dV_predicted[k]) + VIRIAL_ATOL
            eq.append(dg.InequalityReport("virial V", abs(vr.v_residual[k]), 0.0, tol, t=float(t)))
        wtol = 0.02 * mass[k] ** 2 / dg.TWO_PI + VIRIAL_RTOL * abs(vr.dW_lower[k])
        ineq.append(dg.InequalityReport("virial W", float(vr.dW_measured[k]), float(vr.dW_lower[k]),
                                        wtol, sense=">=", t=float(t)))
    return eq, ineq


def run(cfg: ScenarioConfig, observer: Callable | None = None) -> RunResult:
    """Integrate a scenario, recording diagnostics and evaluating the enabled checks.

    ``observer(record, state)`` is called at every output time.
    """
    checks = set(cfg.checks)
    grid = cfg.grid
    n0 = cfg.initial_field()
    hyp = validate_hypotheses(cfg, n0)
    amplitude = cfg.resolve_amplitude(n0)
    strain = StrainField(amplitude)
    eps = cfg.resolved_epsilon
    table = build_kernel(eps, grid, cfg.bridge) if cfg.chemotaxis else None
    stepper = Stepper(grid, table, strain, cfl=cfg.cfl, diffusion=cfg.diffusion,
                      chemotaxis=cfg.chemotaxis, transport=cfg.transport,
                      limiter=cfg.limiter)
    symmetric = hyp.symmetry_error <= SYMMETRY_TOL * n0.max
    t_box = math.inf
    if amplitude > 0 and symmetric and np.isfinite(hyp.y_plus):
        t_box = dg.box_time(amplitude, cfg.half_width, hyp.y_plus)
    t_end = min(cfg.t_max, t_box) if cfg.stop_at_box else cfg.t_max
    interval = cfg.output_interval if cfg.output_interval is not None else t_end / 100
    strip_hw = 2 * cfg.delta

    reports: dict[str, list] = {}
    results: dict[str, bool] = {}
    if "kernel_bounds" in checks and table is not None:
        kb = verify_kernel_bounds(table)
        reports["kernel_bounds"] = [
            dg.InequalityReport(kb.gradient.name, 0.0, kb.gradient.worst_slack, kb.gradient.tolerance),
            dg.InequalityReport(kb.value.name, 0.0, kb.value.worst_slack, kb.value.tolerance)]

    state = stepper.init_state(n0)
    ledger = StepLedger(min_value=float(n0.values.min()))
    mass0 = state.initial_mass
    energy_tol = None

    def energy_of(values):
        c = potential_arrays(values, table, need_grad=False)[0] if table is not None else None
        n = DensityField(grid, values)
        chemo = None if c is None else ChemoSolution(c, None)
        return dg.free_energy(n, chemo, strain)

    history: list[dg.DiagnosticsRecord] = []
    maxima: list[float] = []

    def emit(state):
        chemo = stepper.chemo(state.n) if cfg.chemotaxis else None
        rec = dg.make_record(state.t, state.n, chemo, strain, strip_hw, state.outflow)
        history.append(rec)
        maxima.append(rec.max_n)
        t = state.t
        if "hls" in checks:
            reports.setdefault("hls", []).append(
                dg.log_hls_check(state.n, HLS_TOL * max(rec.M, 1e-300), t=t))
        if "negative_entropy" in checks:
            reports.setdefault("negative_entropy", []).append(dg.negative_entropy_bound(state.n, t=t))
        if "c_estimate" in checks and symmetric and table is not None and rec.M_plus > 0:
            reports.setdefault("c_estimate", []).append(dg.c_estimate_check(state.n, table, t=t))
        if observer is not None:
            observer(rec, state)

    emit(state)
    e_prev = energy_of(state.values) if "energy" in checks else None
    if e_prev is not None:
        energy_tol = ENERGY_TOL * (abs(e_prev) + 1)
    verdict = HEALTHY
    t_detect = None
    k_next = 1
    while state.t < t_end * (1 - 1e-12):
        target = min(k_next * interval, t_end)
        state = stepper.step(state, dt_max=target - state.t)
        v = state.values
        vmax = v.max()
        ledger.steps += 1
        ledger.max_drift = max(ledger.max_drift, float(abs(state.last_drift)))
        mass_err = abs(state.n.mass - mass0 + state.outflow)
        ledger.max_mass_error = max(ledger.max_mass_error, float(mass_err))
        ledger.min_value = min(ledger.min_value, float(v.min()))
        if symmetric and "symmetry" in checks:
            ledger.max_symmetry = max(ledger.max_symmetry, float(mirror_symmetry_error(v) / vmax))
        if e_prev is not None:
            e = energy_of(v)
            rise = e - e_prev
            ledger.max_energy_rise = max(ledger.max_energy_rise, float(rise))
            if rise > energy_tol:
                ledger.energy_violations += 1
            e_prev = e
        on_output = abs(state.t - target) <= 1e-12 * max(1.0, target)
        if on_output:
            state = replace(state, t=target)
            emit(state)
            k_next += 1
        status = detect_blowup(state, cfg.thresholds, [r.V for r in history],
                               supercritical=state.initial_mass > CRITICAL_MASS and amplitude == 0)
        if status == BLOWN_UP:
            verdict, t_detect = BLOWN_UP, state.t
            if not on_output:
                emit(state)
            break
        if status == SUSPECTED:
            verdict = SUSPECTED
        elif verdict == SUSPECTED:
            verdict = HEALTHY

    # ---- run-level checks
    if "conservation" in checks:
        results["conservation"] = (ledger.max_drift <= DRIFT_TOL * mass0
                                   and ledger.max_mass_error <= OUTFLOW_TOL * mass0
                                   and ledger.min_value >= 0)
    if "symmetry" in checks and symmetric:
        results["symmetry"] = ledger.max_symmetry <= SYMMETRY_TOL
    if "energy" in checks:
        results["energy"] = ledger.energy_violations == 0
    if "virial" in checks:
        eq, ineq = _virial_reports(history, amplitude, n0.max, maxima, cfg)
        reports["virial_V"], reports["virial_W"] = eq, ineq
    if "splitting" in checks and amplitude > 0 and symmetric and hyp.r2 > 1:
        sp = dg.splitting_monitors(history, cfg.delta, cfg.eta, amplitude, t_box)
        reports["strip"] = sp.strip
        if sp.rate_points >= 2:
            results["splitting_rate"] = sp.rate_passed
        results["splitting_vplus"] = sp.vplus_passed
        reports["splitting"] = [sp]
    if "moments" in checks:
        mr = dg.moment_growth_bounds(history, amplitude)
        results["moments"] = mr.passed
        reports["moments"] = [mr]
    for name, reps in reports.items():
        if reps and isinstance(reps[0], dg.InequalityReport):
            results[name] = all(r.passed for r in reps)
    results = {k: bool(v) for k, v in results.items()}

    return RunResult(config=cfg, verdict=verdict, t_end=state.t, t_detect=t_detect,
                     history=history, reports=reports, checks=results, amplitude=amplitude,
                     epsilon=eps, t_box=t_box, hypotheses=hyp, ledger=ledger,
                     events=list(state.events), final_state=state)


# ---------------------------------------------------------------- sweeps

SWEEP_TAIL = ("verdict", "t_end", "final_max_n", "final_E", "checks_passed")


@dataclass
class SweepSpec:
    """Cartesian product of ``axes`` (config field -> values) over a template."""
    template: ScenarioConfig
    axes: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        names = {f.name for f in fields(ScenarioConfig)}
        for key in self.axes:
            if key not in names:
                raise ValueError(f"unknown sweep axis {key!r}")

    def points(self) -> list[dict]:
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            return []
        keys = list(self.axes)
        return [dict(zip(keys, combo)) for combo in itertools.product(*self.axes.values())]

    def config_for(self, point: dict) -> ScenarioConfig:
        extra = {"a_mode": "explicit"} if "amplitude" in point else {}
        label = ",".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in point.items())
        return replace(self.template, name=f"{self.template.name}[{label}]", **extra, **point)


def _sweep_point(cfg: ScenarioConfig) -> dict:
    try:
        res = run(cfg)
        last = res.history[-1]
        return {"verdict": res.verdict, "t_end": res.t_end, "final_max_n": last.max_n,
                "final_E": last.E, "checks_passed": res.checks_passed}
    except Exception as exc:  # recorded, the sweep goes on
        log.warning("sweep point %s failed: %s", cfg.name, exc)
        return {"verdict": "error", "t_end": math.nan, "final_max_n": math.nan,
                "final_E": math.nan, "checks_passed": False}


def sweep(spec: SweepSpec, path=None) -> list[dict]:
    """Run every point; rows come back in axis order whatever the execution order."""
    points = spec.points()
    configs = [spec.config_for(p) for p in points]
    if spec.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            outcomes = list(pool.map(_sweep_point, configs))
    else:
        outcomes = [_sweep_point(c) for c in configs]
    rows = [{**p, **o} for p, o in zip(points, outcomes)]
    if path is not None:
        write_phase_table(path, list(spec.axes), rows)
    return rows


def write_phase_table(path, axis_names: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*axis_names, *SWEEP_TAIL])
        for r in rows:
            w.writerow([*(f"{r[k]:.17g}" if isinstance(r[k], float) else r[k] for k in axis_names),
                        r["verdict"], f"{r['t_end']:.17g}", f"{r['final_max_n']:.17g}",
                        f"{r['final_E']:.17g}", int(bool(r["checks_passed"]))])

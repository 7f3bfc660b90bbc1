"""Functionals of a density and the identities/inequalities they obey."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy import integrate as sint

from .grid import (DensityField, Grid2D, half_plane_stats, mirror_symmetry_error, moment,
                   strip_mass)
from .kernel import ChemoSolution, KernelTable, lower_half_pull, padded_offsets
from .dynamics import StrainField

TWO_PI = 2.0 * np.pi
ENTROPY_FLOOR = 1e-300
DISSIPATION_FLOOR = 1e-12

CSV_COLUMNS = ("t", "M", "M_plus", "V", "W", "V4", "y_plus", "V_plus", "strip_mass",
               "S", "E", "D", "max_n", "outflow", "sym_err")


# ---------------------------------------------------------------- functionals

def entropy(n: DensityField) -> float:
    v = n.values
    pos = v > ENTROPY_FLOOR
    return float(n.grid.h**2 * np.sum(v[pos] * np.log(v[pos])))


def _potential_and_strain(n: DensityField, chemo: ChemoSolution | None,
                          strain: StrainField | None):
    c = np.zeros(n.grid.shape) if chemo is None else chemo.c
    x1, x2 = n.grid.mesh
    hpot = np.zeros(n.grid.shape) if strain is None else strain.potential(x1, x2)
    return c, hpot


def free_energy(n: DensityField, chemo: ChemoSolution | None,
                strain: StrainField | None = None) -> float:
    """S[n] - (1/2) int c n - int H n; ``chemo=None`` means no chemotaxis."""
    c, hpot = _potential_and_strain(n, chemo, strain)
    w = n.grid.h**2
    return entropy(n) - 0.5 * w * float(np.sum(c * n.values)) - w * float(np.sum(hpot * n.values))


def classical_free_energy(n: DensityField, chemo: ChemoSolution) -> float:
    return entropy(n) - 0.5 * n.grid.h**2 * float(np.sum(chemo.c * n.values))


def dissipation(n: DensityField, chemo: ChemoSolution | None,
                strain: StrainField | None = None, floor: float = DISSIPATION_FLOOR) -> float:
    """int n |grad log n - grad c - b|^2 with central differences of log n.

    Only cells whose five-point stencil stays above floor * max n contribute.
    """
    v = n.values
    h = n.grid.h
    vmax = v.max()
    if vmax <= 0:
        return 0.0
    alive = v > floor * vmax
    logn = np.log(np.where(alive, v, 1.0))
    mask = np.zeros_like(alive)
    mask[1:-1, 1:-1] = (alive[1:-1, 1:-1] & alive[2:, 1:-1] & alive[:-2, 1:-1]
                        & alive[1:-1, 2:] & alive[1:-1, :-2])
    d1 = np.zeros_like(v)
    d2 = np.zeros_like(v)
    d1[1:-1, :] = (logn[2:, :] - logn[:-2, :]) / (2 * h)
    d2[:, 1:-1] = (logn[:, 2:] - logn[:, :-2]) / (2 * h)
    if chemo is not None:
        d1 = d1 - chemo.grad_c.x1
        d2 = d2 - chemo.grad_c.x2
    if strain is not None and strain.amplitude:
        b1, b2 = strain(*n.grid.mesh)
        d1 = d1 - b1
        d2 = d2 - b2
    return float(h * h * np.sum(np.where(mask, v * (d1 * d1 + d2 * d2), 0.0)))


# ---------------------------------------------------------------- records

@dataclass
class DiagnosticsRecord:
    t: float
    M: float
    M_plus: float
    V: float
    W: float
    V4: float
    y_plus: float
    V_plus: float
    strip_mass: float
    S: float
    E: float
    D: float
    max_n: float
    outflow: float
    sym_err: float

    def row(self) -> list[str]:
        return [f"{getattr(self, k):.17g}" for k in CSV_COLUMNS]


def make_record(t: float, n: DensityField, chemo: ChemoSolution | None,
                strain: StrainField | None, strip_half_width: float | None = None,
                outflow: float = 0.0) -> DiagnosticsRecord:
    try:
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m_plus, y_plus, v_plus = half_plane_stats(n)
    except ValueError:
        m_plus, y_plus, v_plus = 0.0, math.nan, math.nan
    return DiagnosticsRecord(
        t=t, M=n.mass, M_plus=m_plus,
        V=moment(n, "r2"), W=moment(n, "skew"), V4=moment(n, "quartic"),
        y_plus=y_plus, V_plus=v_plus,
        strip_mass=strip_mass(n, strip_half_width) if strip_half_width else math.nan,
        S=entropy(n), E=free_energy(n, chemo, strain), D=dissipation(n, chemo, strain),
        max_n=n.max, outflow=outflow, sym_err=mirror_symmetry_error(n),
    )


def write_records(path, records: Sequence[DiagnosticsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_records(path) -> list[DiagnosticsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [DiagnosticsRecord(**{k: float(r[k]) for k in CSV_COLUMNS}) for r in rows]


# ---------------------------------------------------------------- inequality reports

@dataclass
class InequalityReport:
    """lhs (sense) rhs, e.g. lhs <= rhs.  slack > 0 means satisfied with room."""
    name: str
    lhs: float
    rhs: float
    tolerance: float
    sense: str = "<="
    t: float = math.nan

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs if self.sense == "<=" else self.lhs - self.rhs

    @property
    def passed(self) -> bool:
        return bool(self.slack >= -self.tolerance)


def write_reports(path, reports: Sequence[InequalityReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "lhs", "rhs", "slack", "pass"))
        for r in reports:
            w.writerow([f"{r.t:.17g}", f"{r.lhs:.17g}", f"{r.rhs:.17g}", f"{r.slack:.17g}",
                        int(r.passed)])


# ---------------------------------------------------------------- log-HLS

def hls_constant(mass: float) -> float:
    """C(M) = M (1 + log pi - log M)."""
    return mass * (1.0 + math.log(math.pi) - math.log(mass))


@lru_cache(maxsize=None)
def cell_pair_log(p: int, q: int) -> float:
    """Mean of log|(p, q) + u - v| for u, v uniform on the unit square.

    u - v has density (1-|a|)(1-|b|) on [-1, 1]^2; each quadrant is integrated
    separately so the weight is polynomial there.
    """
    total = 0.0
    for sa in (-1.0, 1.0):
        for sb in (-1.0, 1.0):
            def inner(a, sa=sa, sb=sb):
                f = lambda b: (1 - a) * (1 - b) * 0.5 * math.log((p + sa * a) ** 2 + (q + sb * b) ** 2)
                brk = [abs(q)] if 0 < abs(q) < 1 else None
                return sint.quad(f, 0.0, 1.0, points=brk, limit=200, epsabs=1e-13, epsrel=1e-12)[0]
            brk = [abs(p)] if 0 < abs(p) < 1 else None
            total += sint.quad(inner, 0.0, 1.0, points=brk, limit=200, epsabs=1e-13, epsrel=1e-12)[0]
    return total


EXACT_PAIR_RANGE = 3


@lru_cache(maxsize=8)
def _log_kernel_hat(grid: Grid2D) -> np.ndarray:
    """FFT of h^2 * <log|x - y|> over cell pairs, on the doubled grid."""
    z = padded_offsets(grid)
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    r = np.hypot(z1, z2)
    logr = np.log(np.where(r > 0, r, 1.0))
    h = grid.h
    m = np.rint(z / h).astype(int)
    rng = EXACT_PAIR_RANGE
    for i in np.nonzero(np.abs(m) <= rng)[0]:
        for j in np.nonzero(np.abs(m) <= rng)[0]:
            logr[i, j] = math.log(h) + cell_pair_log(abs(int(m[i])), abs(int(m[j])))
    return sfft.rfft2(h * h * logr)


def log_interaction(n: DensityField) -> float:
    """iint n(x) n(y) log|x - y| for the piecewise-constant density."""
    g = n.grid
    N = g.cells
    pad = np.zeros((2 * N, 2 * N))
    pad[:N, :N] = n.values
    conv = sfft.irfft2(sfft.rfft2(pad) * _log_kernel_hat(g), s=pad.shape)[:N, :N]
    return float(g.h**2 * np.sum(conv * n.values))


def log_hls_check(n: DensityField, tolerance: float | None = None, t: float = math.nan) -> InequalityReport:
    mass = n.mass
    if mass <= 0:
        raise ValueError("log-HLS needs positive mass")
    lhs = entropy(n) + (2.0 / mass) * log_interaction(n)
    tol = 1e-3 * mass if tolerance is None else tolerance
    return InequalityReport("log-HLS", lhs, -hls_constant(mass), tol, sense=">=", t=t)


def negative_entropy_bound(n: DensityField, tolerance: float = 1e-10, t: float = math.nan) -> InequalityReport:
    v = n.values
    w = n.grid.h**2
    low = (v > ENTROPY_FLOOR) & (v < 1.0)
    lhs = float(w * np.sum(-v[low] * np.log(v[low])))
    rhs = 0.5 * moment(n, "r2") + n.mass * math.log(TWO_PI) + 1.0 / math.e
    return InequalityReport("negative entropy", lhs, rhs, tolerance, t=t)


def c_estimate_check(n: DensityField, table: KernelTable, tolerance: float = 1e-10,
                     t: float = math.nan) -> InequalityReport:
    """|d_x2 c_-(x)| <= M_plus / (2 pi x2) on upper-half cells with x2 >= 4 eps.

    Reported as the worst ratio lhs/rhs against 1.
    """
    g = n.grid
    pull = lower_half_pull(n, table)
    x2 = g.mesh[1]
    m_plus = float(g.h**2 * n.values[:, g.upper()].sum())
    sel = x2 >= 4 * table.epsilon
    if m_plus <= 0 or not np.any(sel):
        return InequalityReport("c estimate", 0.0, 1.0, tolerance, t=t)
    ratio = np.abs(pull[sel]) * TWO_PI * x2[sel] / m_plus
    return InequalityReport("c estimate", float(ratio.max()), 1.0, tolerance, t=t)


# ---------------------------------------------------------------- virial identities

@dataclass
class VirialReport:
    t: np.ndarray
    dV_measured: np.ndarray
    dV_predicted: np.ndarray
    dW_measured: np.ndarray
    dW_lower: np.ndarray

    @property
    def v_residual(self) -> np.ndarray:
        return self.dV_measured - self.dV_predicted

    @property
    def w_slack(self) -> np.ndarray:
        return self.dW_measured - self.dW_lower


def _uniform_times(history: Sequence[DiagnosticsRecord]) -> np.ndarray:
    if len(history) < 3:
        raise ValueError("need at least 3 records")
    t = np.array([r.t for r in history])
    dt = np.diff(t)
    if np.any(np.abs(dt - dt[0]) > 1e-9 * max(abs(dt[0]), 1e-300)):
        raise ValueError("records are not uniformly spaced in time")
    return t


def virial_residuals(history: Sequence[DiagnosticsRecord], amplitude: float, *,
                     chemotaxis: bool = True, diffusion: bool = True) -> VirialReport:
    """Central-difference dV/dt and dW/dt against the virial relations.

    dV/dt = 4M(1 - M/8pi) + 2AW   (equality)
    dW/dt >= -M^2/2pi + 2AV       (inequality)

    Switching off a mechanism drops its term: 4M from diffusion, -M^2/2pi
    from chemotaxis.
    """
    t = _uniform_times(history)
    step = t[1] - t[0]
    V = np.array([r.V for r in history])
    W = np.array([r.W for r in history])
    M = np.array([r.M for r in history])
    mid = slice(1, -1)
    dV = (V[2:] - V[:-2]) / (2 * step)
    dW = (W[2:] - W[:-2]) / (2 * step)
    m = M[mid]
    aggregation = m * m / TWO_PI if chemotaxis else 0.0
    pred = (4 * m if diffusion else 0.0) - aggregation + 2 * amplitude * W[mid]
    lower = -aggregation + 2 * amplitude * V[mid]
    return VirialReport(t[mid], dV, pred, dW, lower)


# ---------------------------------------------------------------- splitting monitors

def r_squared(m_plus: float, y_plus: float, v_plus: float) -> float:
    """R^2 = M_plus y_plus^2 / (2 V_plus)."""
    return m_plus * y_plus**2 / (2 * v_plus) if v_plus > 0 else math.inf


def strip_bound(mass: float, eta: float, r2: float) -> float:
    return (1 + eta) ** 2 * mass / (2 * r2)


def growth_rate(t, y) -> float:
    """Least-squares slope of log y against t."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 2:
        return math.nan
    slope, _ = np.polyfit(t, np.log(y), 1)
    return float(slope)


def box_time(amplitude: float, half_width: float, y_plus0: float) -> float:
    """T_box = log(0.5 L / y_plus(0)) / A: time for y_plus to reach half the box."""
    if amplitude <= 0:
        return math.inf
    return math.log(0.5 * half_width / y_plus0) / amplitude


@dataclass
class SplittingReport:
    r2: float
    strip_bound: float
    strip: list[InequalityReport]
    rate: float
    rate_window: tuple[float, float]
    rate_points: int
    amplitude: float
    c_fit: float
    implied_c: float
    vplus_ratio: np.ndarray = field(repr=False)

    @property
    def strip_passed(self) -> bool:
        return all(r.passed for r in self.strip)

    @property
    def rate_passed(self) -> bool:
        return bool(0.85 * self.amplitude <= self.rate <= 1.1 * self.amplitude)

    @property
    def vplus_passed(self) -> bool:
        return bool(np.all(np.isfinite(self.vplus_ratio)) and math.isfinite(self.c_fit))


def splitting_monitors(history: Sequence[DiagnosticsRecord], delta: float, eta: float,
                       amplitude: float, t_box: float = math.inf,
                       tolerance: float = 0.0) -> SplittingReport:
    """Strip-mass bound, exponential rate of y_plus and growth of V_plus."""
    if amplitude <= 0:
        raise ValueError("splitting monitors need a strained run (A > 0)")
    first = history[0]
    r2 = r_squared(first.M_plus, first.y_plus, first.V_plus)
    if not r2 > 1:
        raise ValueError(f"R^2 = {r2:.4g} <= 1: needs y_plus(0)^2 > 2 V_plus(0) / M_plus")
    bound = strip_bound(first.M, eta, r2)
    strip = [InequalityReport("strip mass", r.strip_mass, bound, tolerance, t=r.t) for r in history]
    t = np.array([r.t for r in history])
    y = np.array([r.y_plus for r in history])
    sel = (y >= 2 * first.y_plus) & (t <= t_box * (1 + 1e-12))
    rate = growth_rate(t[sel], y[sel])
    window = (float(t[sel].min()), float(t[sel].max())) if sel.any() else (math.nan, math.nan)
    vp = np.array([r.V_plus for r in history])
    ratio = vp * np.exp(-2 * amplitude * t)
    c_fit = float(np.max(ratio) - first.V_plus)
    return SplittingReport(
        r2=r2, strip_bound=bound, strip=strip, rate=rate, rate_window=window,
        rate_points=int(sel.sum()), amplitude=amplitude, c_fit=c_fit,
        implied_c=c_fit / (first.M_plus * delta), vplus_ratio=ratio,
    )


# ---------------------------------------------------------------- moment envelopes

def second_moment_envelope(t, v0: float, mass: float, amplitude: float) -> np.ndarray:
    """Gronwall bound from dV/dt <= 4M + 2AV."""
    t = np.asarray(t, dtype=float)
    if amplitude == 0:
        return v0 + 4 * mass * t
    q = 2 * mass / amplitude
    return (v0 + q) * np.exp(2 * amplitude * t) - q


def coarse_second_moment_envelope(t, v0: float, mass: float, amplitude: float) -> np.ndarray:
    """(V0 + 8M/A) exp(A^2 t / 2), the bound of dV/dt <= 4AM + (A^2/2) V.

    That differential inequality follows from the virial identity only when
    A^2/2 >= 2A, i.e. A >= 4.
    """
    t = np.asarray(t, dtype=float)
    return (v0 + 8 * mass / amplitude) * np.exp(0.5 * amplitude**2 * t)


def fourth_moment_envelope(t, v0: float, v4_0: float, mass: float, amplitude: float) -> np.ndarray:
    """Bound from dV4/dt <= 12 V + 4A V4 with V under its own envelope."""
    t = np.asarray(t, dtype=float)
    a = amplitude
    if a == 0:
        return v4_0 + 12 * (v0 * t + 2 * mass * t**2)
    p = v0 + 2 * mass / a
    q = 2 * mass / a
    inner = v4_0 + 12 * p * (1 - np.exp(-2 * a * t)) / (2 * a) - 12 * q * (1 - np.exp(-4 * a * t)) / (4 * a)
    return np.exp(4 * a * t) * inner


@dataclass
class MomentReport:
    t: np.ndarray
    V: np.ndarray
    V_envelope: np.ndarray
    V_coarse: np.ndarray | None
    V4: np.ndarray
    V4_envelope: np.ndarray
    rtol: float = 1e-6

    @property
    def passed(self) -> bool:
        ok = np.all(self.V <= self.V_envelope * (1 + self.rtol) + self.rtol)
        ok &= np.all(self.V4 <= self.V4_envelope * (1 + self.rtol) + self.rtol)
        if self.V_coarse is not None:
            ok &= np.all(self.V <= self.V_coarse * (1 + self.rtol) + self.rtol)
        return bool(ok)


def moment_growth_bounds(history: Sequence[DiagnosticsRecord], amplitude: float,
                         rtol: float = 1e-6) -> MomentReport:
    first = history[0]
    t = np.array([r.t for r in history]) - first.t
    mass = max(r.M for r in history)
    env = second_moment_envelope(t, first.V, mass, amplitude)
    coarse = (coarse_second_moment_envelope(t, first.V, mass, amplitude)
              if amplitude >= 4 else None)
    env4 = fourth_moment_envelope(t, first.V, first.V4, mass, amplitude)
    return MomentReport(t=t, V=np.array([r.V for r in history]), V_envelope=env, V_coarse=coarse,
                        V4=np.array([r.V4 for r in history]), V4_envelope=env4, rtol=rtol)


def records_as_dicts(records: Sequence[DiagnosticsRecord]) -> list[dict]:
    return [asdict(r) for r in records]



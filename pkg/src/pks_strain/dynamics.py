"""Time stepping of the regularised PKS system with a strain flow.

    n_t + div(n grad c) + b . grad n = lap n,   c = K_eps * n,   b = A(-x1, x2)

Each step is a Strang sequence: half a step of exact heat flow, a full
conservative transport step with drift u = grad c + b, half a step of heat
flow.  Heat flow multiplies Fourier modes by exp(-|k|^2 tau) on a grid
zero-padded to twice the box along each axis, so nothing wraps around.
Transport is a finite-volume update (first-order upwind, or MUSCL with
limited slopes advanced by SSP-RK2; minmod by default), positive whenever
dt * (max|u1| + max|u2|) / h <= 1/2.

Mass leaves only through the box boundary (transport fluxes and heat that
spreads into the padding); both are metered in the state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import uniform_filter
from scipy.special import erf

from .grid import DensityField, Grid2D, mirror_symmetry_error
from .kernel import ChemoSolution, KernelTable, convolve, potential_arrays

log = logging.getLogger(__name__)

TRANSPORT_SCHEMES = ("muscl", "upwind")
LIMITERS = ("minmod", "mc", "positive")
# largest CFL number (l1 speed) for which either transport scheme stays positive
CFL_POSITIVE = 0.5


class PositivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class StrainField:
    amplitude: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("strain amplitude must be non-negative")

    def __call__(self, x1, x2):
        return -self.amplitude * np.asarray(x1), self.amplitude * np.asarray(x2)

    def potential(self, x1, x2):
        """H with grad H = b."""
        return 0.5 * self.amplitude * (np.asarray(x2) ** 2 - np.asarray(x1) ** 2)

    def divergence(self, x1, x2):
        return np.zeros(np.broadcast(np.asarray(x1), np.asarray(x2)).shape)


def strain_eval(amplitude: float, x) -> tuple[float, float]:
    b1, b2 = StrainField(amplitude)(x[0], x[1])
    return float(b1), float(b2)


def select_amplitude(m_plus: float, delta: float) -> float:
    """Strain amplitude A = M_plus / delta^2, large enough to keep the strip |x2| <= 2 delta nearly empty."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return m_plus / delta**2


# ---------------------------------------------------------------- initial data

def _cell_average_1d(x: np.ndarray, h: float, center: float, sigma: float) -> np.ndarray:
    s = math.sqrt(2.0) * sigma
    return 0.5 * (erf((x + h / 2 - center) / s) - erf((x - h / 2 - center) / s)) / h


def gaussian(grid: Grid2D, mass: float, sigma: float, center=(0.0, 0.0)) -> DensityField:
    """Exact cell averages of an isotropic Gaussian of the given mass."""
    x = grid.centers
    a = _cell_average_1d(x, grid.h, center[0], sigma)
    b = _cell_average_1d(x, grid.h, center[1], sigma)
    return DensityField(grid, mass * np.outer(a, b))


def two_bump(grid: Grid2D, mass: float, y0: float, sigma: float) -> DensityField:
    """(M/2)[G(x - (0, y0)) + G(x + (0, y0))], mirror-symmetric by construction."""
    up = gaussian(grid, mass / 2, sigma, (0.0, y0)).values
    return DensityField(grid, up + up[:, ::-1])


# ---------------------------------------------------------------- stepper

@dataclass
class StepperState:
    n: DensityField
    t: float = 0.0
    dt: float = 0.0
    chemo: ChemoSolution | None = None
    step_count: int = 0
    cfl_number: float = 0.0
    initial_mass: float = 0.0
    initial_max: float = 0.0
    outflow: float = 0.0           # cumulative mass lost through the boundary
    positivity_fix: float = 0.0    # cumulative |negative mass| removed after heat steps
    last_drift: float = 0.0        # interior-flux mass change of the last step
    max_drift: float = 0.0
    last_speed: float = 0.0        # max|u1| + max|u2| seen in the last transport stage
    events: list = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return self.n.values


class Stepper:
    """Owns the operators; ``step`` maps a StepperState to its successor."""

    def __init__(self, grid: Grid2D, table: KernelTable | None = None,
                 strain: StrainField | None = None, *, cfl: float = 0.4,
                 diffusion: bool = True, chemotaxis: bool = True, transport: str = "muscl",
                 grad_mode: str = "direct", max_dt: float = math.inf,
                 check_symmetry: bool = False, limiter: str = "minmod"):
        if not 0 < cfl < 1:
            raise ValueError("cfl must lie in (0, 1)")
        if transport not in TRANSPORT_SCHEMES:
            raise ValueError(f"unknown transport scheme {transport!r}")
        if limiter not in LIMITERS:
            raise ValueError(f"unknown limiter {limiter!r}")
        if chemotaxis and table is None:
            raise ValueError("chemotaxis needs a kernel table")
        self.grid = grid
        self.table = table
        self.strain = strain or StrainField(0.0)
        self.cfl = cfl
        self.diffusion = diffusion
        self.chemotaxis = chemotaxis
        self.transport = transport
        self.limiter = limiter
        self.grad_mode = grad_mode
        self.max_dt = max_dt
        self.check_symmetry = check_symmetry
        h = grid.h
        self._b1 = -self.strain.amplitude * grid.faces[:, None] * np.ones((1, grid.cells))
        self._b2 = self.strain.amplitude * grid.faces[None, :] * np.ones((grid.cells, 1))
        k = 2 * np.pi * sfft.rfftfreq(2 * grid.cells, d=h)
        self._k2 = k * k

    # -- construction

    def init_state(self, n: DensityField, t: float = 0.0) -> StepperState:
        state = StepperState(n=n.copy(), t=t, cfl_number=self.cfl,
                             initial_mass=n.mass, initial_max=n.max)
        state.last_speed = self.drift_speed(n.values)
        return state

    def chemo(self, n: DensityField) -> ChemoSolution:
        if self.table is None:
            z = np.zeros(n.grid.shape)
            from .grid import VectorField2D
            return ChemoSolution(z, VectorField2D(n.grid, z, z.copy()), self.grad_mode)
        return convolve(n, self.table, self.grad_mode)

    # -- pieces

    def face_velocities(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.grid.cells
        u1 = self._b1.copy()
        u2 = self._b2.copy()
        if self.chemotaxis:
            _, g1, g2 = potential_arrays(values, self.table, need_c=False, grad_mode=self.grad_mode)
            # average cell-centred gradients onto faces; outer faces take the adjacent cell
            u1[1:n] += 0.5 * (g1[:-1] + g1[1:])
            u1[0] += g1[0]
            u1[n] += g1[-1]
            u2[:, 1:n] += 0.5 * (g2[:, :-1] + g2[:, 1:])
            u2[:, 0] += g2[:, 0]
            u2[:, n] += g2[:, -1]
        return u1, u2

    def drift_speed(self, values: np.ndarray) -> float:
        u1, u2 = self.face_velocities(values)
        return float(np.max(np.abs(u1)) + np.max(np.abs(u2)))

    def heat(self, values: np.ndarray, tau: float) -> np.ndarray:
        """exp(tau lap) on the box, each axis zero-padded to 2N."""
        if tau <= 0:
            return values
        n = values.shape[0]
        mult = np.exp(-self._k2 * tau)
        out = sfft.irfft(sfft.rfft(values, n=2 * n, axis=0) * mult[:, None], n=2 * n, axis=0)[:n]
        out = sfft.irfft(sfft.rfft(out, n=2 * n, axis=1) * mult[None, :], n=2 * n, axis=1)[:, :n]
        return out

    def _fluxes(self, values: np.ndarray, u1: np.ndarray, u2: np.ndarray):
        """Face fluxes (N+1, N) and (N, N+1) with zero density outside the box."""
        padded = np.pad(values, 1)
        if self.transport == "muscl":
            limit = _LIMITER_FUNCS[self.limiter]
            s1 = limit(padded[1:-1, 1:-1] - padded[:-2, 1:-1], padded[2:, 1:-1] - padded[1:-1, 1:-1], values)
            s2 = limit(padded[1:-1, 1:-1] - padded[1:-1, :-2], padded[1:-1, 2:] - padded[1:-1, 1:-1], values)
        else:
            s1 = s2 = np.zeros_like(values)
        # states on each side of every face, ghost cells are empty
        left = np.pad(values + 0.5 * s1, ((1, 0), (0, 0)))
        right = np.pad(values - 0.5 * s1, ((0, 1), (0, 0)))
        f1 = u1 * np.where(u1 > 0, left, right)
        below = np.pad(values + 0.5 * s2, ((0, 0), (1, 0)))
        above = np.pad(values - 0.5 * s2, ((0, 0), (0, 1)))
        f2 = u2 * np.where(u2 > 0, below, above)
        return f1, f2

    def _euler(self, values: np.ndarray, dt: float):
        """One forward-Euler transport update; returns (new, boundary outflow, speed)."""
        h = self.grid.h
        u1, u2 = self.face_velocities(values)
        speed = float(np.max(np.abs(u1)) + np.max(np.abs(u2)))
        f1, f2 = self._fluxes(values, u1, u2)
        new = values - (dt / h) * (f1[1:, :] - f1[:-1, :] + f2[:, 1:] - f2[:, :-1])
        out = dt * h * (f1[-1, :].sum() - f1[0, :].sum() + f2[:, -1].sum() - f2[:, 0].sum())
        return new, float(out), speed

    def _transport(self, values: np.ndarray, dt: float):
        """Returns (new values, outflow, worst speed, interior drift) or None on CFL breach."""
        h = self.grid.h
        m0 = values.sum() * h * h
        one, out1, sp1 = self._euler(values, dt)
        if sp1 * dt / h > CFL_POSITIVE:
            return None, sp1
        if self.transport == "upwind":
            new, out, speed = one, out1, sp1
        else:
            two, out2, sp2 = self._euler(one, dt)
            if sp2 * dt / h > CFL_POSITIVE:
                return None, sp2
            new = 0.5 * (values + two)
            out = 0.5 * (out1 + out2)
            speed = max(sp1, sp2)
        drift = new.sum() * h * h - m0 + out
        return (new, out, speed, drift), speed

    # -- public

    def suggest_dt(self, state: StepperState) -> float:
        speed = state.last_speed
        dt = self.max_dt if speed <= 0 else self.cfl * self.grid.h / speed
        return min(dt, self.max_dt)

    def step(self, state: StepperState, dt_max: float = math.inf) -> StepperState:
        dt = min(self.suggest_dt(state), dt_max)
        if not math.isfinite(dt) or dt <= 0:
            raise ValueError("no finite time step; pass dt_max")
        base = state.values
        while True:
            outflow = 0.0
            fix = 0.0
            v = base
            if self.diffusion:
                v, lost, neg = self._heat_step(v, dt / 2)
                outflow += lost
                fix += neg
            result, speed = self._transport(v, dt)
            if result is None:
                msg = f"t={state.t:.6g}: CFL breach (speed {speed:.4g}, dt {dt:.4g}); halving dt"
                log.info(msg)
                state.events.append(msg)
                dt *= 0.5
                state.last_speed = max(state.last_speed, speed)
                continue
            v, out_t, speed, drift = result
            break
        vmax = v.max()
        if v.min() < -1e-14 * vmax:
            raise PositivityError(f"positivity broken at t={state.t + dt:.6g}: min {v.min():.3e}")
        # rounding-level negatives only
        v = np.maximum(v, 0.0)
        outflow += out_t
        if self.diffusion:
            v, lost, neg = self._heat_step(v, dt / 2)
            outflow += lost
            fix += neg
        new = replace(
            state,
            n=DensityField(self.grid, v),
            t=state.t + dt, dt=dt, chemo=None, step_count=state.step_count + 1,
            outflow=state.outflow + outflow, positivity_fix=state.positivity_fix + fix,
            last_drift=drift, max_drift=max(state.max_drift, abs(drift)),
            last_speed=speed, cfl_number=speed * dt / self.grid.h,
        )
        if self.check_symmetry:
            err = mirror_symmetry_error(v)
            if err > 1e-12 * vmax:
                raise AssertionError(f"mirror symmetry lost at step {new.step_count}: {err:.3e}")
        return new

    def _heat_step(self, values: np.ndarray, tau: float):
        """Heat flow plus mass-preserving clean-up of spectral undershoot.

        Returns (values, mass lost into the padding, negative mass removed).
        """
        h2 = self.grid.h ** 2
        before = values.sum() * h2
        v = self.heat(values, tau)
        inside = v.sum() * h2
        neg = -v[v < 0].sum() * h2
        if neg > 0:
            v = np.maximum(v, 0.0)
            v *= inside / (v.sum() * h2)
        return v, float(before - inside), float(neg)

    def chemo_for(self, state: StepperState) -> ChemoSolution:
        if state.chemo is None:
            state.chemo = self.chemo(state.n)
        return state.chemo


def _minmod(a: np.ndarray, b: np.ndarray, n: np.ndarray | None = None) -> np.ndarray:
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _positive(a: np.ndarray, b: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Central slope clipped only so both face values stay in [0, 2n].

    Not TVD: extrema keep their curvature instead of being flattened.
    """
    return np.clip(0.5 * (a + b), -2 * n, 2 * n)


def _mc(a: np.ndarray, b: np.ndarray, n: np.ndarray | None = None) -> np.ndarray:
    """Monotonised-central slope: minmod(2a, 2b, (a + b)/2).

    Face values stay between neighbouring cell values, so the l1 CFL bound
    for positivity is the same as with minmod.
    """
    m = np.minimum(np.minimum(2 * np.abs(a), 2 * np.abs(b)), 0.5 * np.abs(a + b))
    return np.where(a * b > 0, np.sign(a) * m, 0.0)


_LIMITER_FUNCS = {"minmod": _minmod, "mc": _mc, "positive": _positive}


def step(state: StepperState, table: KernelTable | None, strain: StrainField,
         dt_max: float = math.inf, **options) -> StepperState:
    """Functional form of ``Stepper.step`` for one-off use."""
    return Stepper(state.n.grid, table, strain, **options).step(state, dt_max)


# ---------------------------------------------------------------- blow-up proxy

@dataclass(frozen=True)
class BlowupThresholds:
    ratio: float = 1e3            # max n / max n0 that alone means blown up
    block_fraction: float = 0.25  # share of mass in a 3x3 block ...
    block_ratio: float = 1e2      # ... combined with this max n / max n0
    window: int = 5               # trailing records for the dV/dt < 0 trend


HEALTHY, SUSPECTED, BLOWN_UP = "healthy", "suspected", "blown_up"


def concentration(values: np.ndarray) -> float:
    """Largest share of the total mass held by any 3x3 block of cells."""
    total = values.sum()
    if total <= 0:
        return 0.0
    block = uniform_filter(values, size=3, mode="constant") * 9.0
    return float(block.max() / total)


def detect_blowup(state: StepperState, thresholds: BlowupThresholds = BlowupThresholds(),
                  second_moments=None, supercritical: bool = False) -> str:
    """Classify a state as healthy, suspected or blown_up.

    ``second_moments`` is the recorded V history; in a supercritical run a
    strictly falling V over the trailing window makes the state suspected.
    """
    values = state.values
    ref = state.initial_max if state.initial_max > 0 else values.max()
    ratio = values.max() / ref if ref > 0 else 0.0
    if ratio >= thresholds.ratio:
        return BLOWN_UP
    if ratio >= thresholds.block_ratio and concentration(values) >= thresholds.block_fraction:
        return BLOWN_UP
    if supercritical and second_moments is not None and len(second_moments) >= thresholds.window:
        tail = np.asarray(second_moments[-thresholds.window:])
        if np.all(np.diff(tail) < 0):
            return SUSPECTED
    return HEALTHY

"""Regularised 2D Newtonian kernel and free-space convolution.

K_eps(z) = K1(|z|/eps) - log(eps)/(2 pi), with K1 = 0 for |z| <= 1 and
K1 = -log|z|/(2 pi) for |z| >= 4.  Two fillings of the gap 1 < |z| < 4 are
available:

``"log"`` (default)
    K1 = -log|z|/(2 pi) already from |z| = 1, i.e. K_eps = -log(max(|z|, eps))/(2 pi).
    Continuous with a gradient jump at |z| = eps; satisfies
    |grad K_eps| <= 1/(2 pi |z|) and K_eps <= -log|z|/(2 pi) everywhere.
``"quintic"``
    C2 quintic Hermite bridge on [1, 4].  Smooth, but no C1 bridge can meet
    the gradient bound: the bridge must drop by exactly the integral of the
    bound over [1, 4] while starting with zero slope.  ``verify_kernel_bounds``
    reports the violation.

Convolutions are evaluated on the 2N x 2N zero-padded grid so the result is
the free-space sum c_ij = h^2 sum_kl K(x_ij - x_kl) n_kl, with no periodic
images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .grid import DensityField, Grid2D, VectorField2D, central_gradient

TWO_PI = 2.0 * np.pi
BRIDGES = ("log", "quintic")
GRAD_MODES = ("direct", "central")


def _quintic_coefficients() -> np.ndarray:
    """Coefficients (ascending powers of s) of the C2 bridge on s in [1, 4]."""
    rows, rhs = [], []
    ends = ((1.0, (0.0, 0.0, 0.0)),
            (4.0, (-np.log(4.0) / TWO_PI, -1.0 / (4.0 * TWO_PI), 1.0 / (16.0 * TWO_PI))))
    for s, (v, d1, d2) in ends:
        rows.append([s**k for k in range(6)])
        rows.append([k * s ** (k - 1) if k > 0 else 0.0 for k in range(6)])
        rows.append([k * (k - 1) * s ** (k - 2) if k > 1 else 0.0 for k in range(6)])
        rhs += [v, d1, d2]
    return np.linalg.solve(np.array(rows), np.array(rhs))


QUINTIC = _quintic_coefficients()


def radial_kernel(r, epsilon: float, bridge: str = "log"):
    """K_eps as a function of |z|."""
    r = np.asarray(r, dtype=float)
    shift = -np.log(epsilon) / TWO_PI
    if bridge == "log":
        return -np.log(np.maximum(r, epsilon)) / TWO_PI
    if bridge != "quintic":
        raise ValueError(f"unknown bridge {bridge!r}")
    s = r / epsilon
    out = np.where(s >= 4.0, -np.log(np.maximum(s, 4.0)) / TWO_PI, 0.0)
    mid = (s > 1.0) & (s < 4.0)
    out = np.where(mid, np.polynomial.polynomial.polyval(s, QUINTIC), out)
    return out + shift


def radial_slope(r, epsilon: float, bridge: str = "log"):
    """dK_eps/d|z|; always <= 0."""
    r = np.asarray(r, dtype=float)
    if bridge == "log":
        safe = np.where(r > epsilon, r, 1.0)
        return np.where(r > epsilon, -1.0 / (TWO_PI * safe), 0.0)
    if bridge != "quintic":
        raise ValueError(f"unknown bridge {bridge!r}")
    s = r / epsilon
    safe = np.where(s >= 4.0, s, 4.0)
    out = np.where(s >= 4.0, -1.0 / (TWO_PI * safe), 0.0)
    dq = np.polynomial.polynomial.polyder(QUINTIC)
    mid = (s > 1.0) & (s < 4.0)
    out = np.where(mid, np.polynomial.polynomial.polyval(s, dq), out)
    return out / epsilon


def padded_offsets(grid: Grid2D) -> np.ndarray:
    """Offsets 0..N-1, -N..-1 (times h) in FFT order on the doubled grid."""
    n = grid.cells
    return np.fft.fftfreq(2 * n, d=1.0 / (2 * n)) * grid.h


@dataclass(frozen=True, eq=False)
class KernelTable:
    epsilon: float
    grid: Grid2D
    bridge: str = "log"
    values_hat: np.ndarray = field(repr=False, default=None)
    grad1_hat: np.ndarray = field(repr=False, default=None)
    grad2_hat: np.ndarray = field(repr=False, default=None)

    @property
    def bridge_coefficients(self) -> np.ndarray | None:
        return QUINTIC.copy() if self.bridge == "quintic" else None

    def value(self, r):
        return radial_kernel(r, self.epsilon, self.bridge)

    def slope(self, r):
        return radial_slope(r, self.epsilon, self.bridge)

    @cached_property
    def max_gradient(self) -> float:
        """C_eps = sup |grad K_eps|, from a dense radial sample of the bridge."""
        r = np.geomspace(self.epsilon * 0.999, 8 * self.epsilon, 20001)
        return float(np.max(np.abs(self.slope(r))))

    def metadata(self) -> dict:
        return {"epsilon": self.epsilon, "bridge": self.bridge,
                "max_gradient": self.max_gradient}


def build_kernel(epsilon: float, grid: Grid2D, bridge: str = "log") -> KernelTable:
    if bridge not in BRIDGES:
        raise ValueError(f"unknown bridge {bridge!r}; choose from {BRIDGES}")
    if epsilon < grid.h * (1 - 1e-12):
        raise ValueError(f"kernel under-resolved: epsilon={epsilon:g} < h={grid.h:g}")
    if epsilon >= grid.half_width / 4:
        raise ValueError(f"epsilon={epsilon:g} must be below L/4={grid.half_width / 4:g}")
    z = padded_offsets(grid)
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    r = np.hypot(z1, z2)
    k = radial_kernel(r, epsilon, bridge)
    slope = radial_slope(r, epsilon, bridge)
    # slope vanishes on the flat core, so r = 0 is safe once guarded
    unit = np.where(r > 0, slope / np.where(r > 0, r, 1.0), 0.0)
    w = grid.h**2
    return KernelTable(
        epsilon=float(epsilon), grid=grid, bridge=bridge,
        values_hat=sfft.rfft2(w * k),
        grad1_hat=sfft.rfft2(w * unit * z1),
        grad2_hat=sfft.rfft2(w * unit * z2),
    )


@dataclass
class ChemoSolution:
    c: np.ndarray = field(repr=False)
    grad_c: VectorField2D = field(repr=False)
    mode: str = "direct"


def _pad_hat(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    pad = np.zeros((2 * n, 2 * n))
    pad[:n, :n] = values
    return sfft.rfft2(pad)


def _back(hat: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfft2(hat, s=(2 * n, 2 * n))[:n, :n]


def potential_arrays(values: np.ndarray, table: KernelTable, need_c: bool = True,
                     need_grad: bool = True, grad_mode: str = "direct"):
    """Raw-array core of ``convolve``: returns (c, dc/dx1, dc/dx2), None where skipped."""
    n = values.shape[0]
    nh = _pad_hat(values)
    c = g1 = g2 = None
    if need_c or (need_grad and grad_mode == "central"):
        c = _back(nh * table.values_hat, n)
    if need_grad:
        if grad_mode == "direct":
            g1 = _back(nh * table.grad1_hat, n)
            g2 = _back(nh * table.grad2_hat, n)
        elif grad_mode == "central":
            g1, g2 = central_gradient(c, table.grid.h)
        else:
            raise ValueError(f"unknown grad mode {grad_mode!r}")
    return c, g1, g2


def convolve(n: DensityField, table: KernelTable, grad_mode: str = "direct") -> ChemoSolution:
    if n.grid != table.grid:
        raise ValueError("density and kernel table live on different grids")
    c, g1, g2 = potential_arrays(n.values, table, grad_mode=grad_mode)
    return ChemoSolution(c=c, grad_c=VectorField2D(n.grid, g1, g2), mode=grad_mode)


def lower_half_pull(n: DensityField, table: KernelTable) -> np.ndarray:
    """d/dx2 of the potential generated by the x2 < 0 half of n alone."""
    g = n.grid
    lower = n.values.copy()
    lower[:, g.upper()] = 0.0
    _, _, g2 = potential_arrays(lower, table, need_c=False)
    return g2


@dataclass
class BoundCheck:
    name: str
    worst_radius: float
    worst_slack: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_slack >= -self.tolerance


class KernelBoundViolation(AssertionError):
    def __init__(self, check: BoundCheck):
        self.check = check
        super().__init__(f"{check.name} violated at |z|={check.worst_radius:.6g}: "
                         f"slack {check.worst_slack:.3e}")


@dataclass
class KernelBoundsReport:
    epsilon: float
    bridge: str
    samples: int
    gradient: BoundCheck
    value: BoundCheck
    max_gradient: float
    outer_max_deviation: float

    @property
    def passed(self) -> bool:
        return self.gradient.passed and self.value.passed

    def failures(self) -> list[BoundCheck]:
        return [c for c in (self.gradient, self.value) if not c.passed]


def verify_kernel_bounds(table: KernelTable, samples: int = 10_000, tolerance: float = 1e-12,
                         strict: bool = False) -> KernelBoundsReport:
    """Check |grad K_eps(z)| <= 1/(2 pi |z|) and K_eps(z) <= -log|z|/(2 pi).

    Both are evaluated on a geometric radial sample of [eps/4, 8 eps].  With
    ``strict=True`` the first failing bound is raised as KernelBoundViolation.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 radial samples")
    eps = table.epsilon
    r = np.geomspace(eps / 4, 8 * eps, samples)
    grad_slack = 1.0 / (TWO_PI * r) - np.abs(table.slope(r))
    value_slack = -np.log(r) / TWO_PI - table.value(r)
    ig, iv = int(np.argmin(grad_slack)), int(np.argmin(value_slack))
    outer = r >= 4 * eps
    report = KernelBoundsReport(
        epsilon=eps, bridge=table.bridge, samples=samples,
        gradient=BoundCheck("|grad K| <= 1/(2 pi |z|)", float(r[ig]), float(grad_slack[ig]), tolerance),
        value=BoundCheck("K <= -log|z|/(2 pi)", float(r[iv]), float(value_slack[iv]), tolerance),
        max_gradient=float(np.max(np.abs(table.slope(r)))),
        outer_max_deviation=float(np.max(np.abs(value_slack[outer]))),
    )
    if strict and not report.passed:
        raise KernelBoundViolation(report.failures()[0])
    return report

"""Cell-centred square grid, density fields and quadrature on them.

The plane is truncated to the box [-L, L]^2 and cut into N x N square cells
of side h = 2L/N.  Arrays are indexed ``values[i, j]`` with ``i`` running
along x1 and ``j`` along x2.  N is even, so the x1-axis is a cell face and
the map j -> N-1-j is the mirror x2 -> -x2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np

SNAPSHOT_MAGIC = "PKS-FIELD v1"


@dataclass(frozen=True)
class Grid2D:
    half_width: float
    cells: int

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.cells <= 0 or self.cells % 2:
            raise ValueError(f"N must be even, got N={self.cells}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.cells

    @property
    def shape(self) -> tuple[int, int]:
        return (self.cells, self.cells)

    @cached_property
    def centers(self) -> np.ndarray:
        """1D cell-centre coordinates, shared by both axes."""
        return -self.half_width + (np.arange(self.cells) + 0.5) * self.h

    @cached_property
    def faces(self) -> np.ndarray:
        return -self.half_width + np.arange(self.cells + 1) * self.h

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.centers
        return np.meshgrid(x, x, indexing="ij")

    def upper(self) -> slice:
        """x2-index slice of the cells with x2 > 0."""
        return slice(self.cells // 2, None)


@dataclass
class DensityField:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density must be finite")
        if np.any(self.values < 0):
            raise ValueError(f"density must be non-negative (min {self.values.min():.3e})")

    @property
    def mass(self) -> float:
        return integrate(self)

    @property
    def max(self) -> float:
        return float(self.values.max())

    def copy(self) -> "DensityField":
        return DensityField(self.grid, self.values.copy())


@dataclass
class VectorField2D:
    grid: Grid2D
    x1: np.ndarray = field(repr=False)
    x2: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.x1.shape != self.grid.shape or self.x2.shape != self.grid.shape:
            raise ValueError("component arrays must match the grid shape")

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.x1, self.x2)


Weight = Union[str, tuple, Callable[[np.ndarray, np.ndarray], np.ndarray]]

_NAMED_WEIGHTS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "one": lambda x1, x2: np.ones_like(x1),
    "x1": lambda x1, x2: x1,
    "x2": lambda x1, x2: x2,
    "r2": lambda x1, x2: x1 * x1 + x2 * x2,
    "skew": lambda x1, x2: x2 * x2 - x1 * x1,
    "quartic": lambda x1, x2: x1**4 + x2**4,
    "r4": lambda x1, x2: (x1 * x1 + x2 * x2) ** 2,
}


def weight_values(grid: Grid2D, weight: Weight) -> np.ndarray:
    """Evaluate a moment weight at the cell centres.

    ``weight`` is one of the names in ``_NAMED_WEIGHTS``, a monomial exponent
    pair ``(p, q)`` meaning x1**p * x2**q, or a callable of (x1, x2).
    """
    x1, x2 = grid.mesh
    if isinstance(weight, str):
        try:
            return _NAMED_WEIGHTS[weight](x1, x2)
        except KeyError:
            raise ValueError(f"unknown moment weight {weight!r}") from None
    if isinstance(weight, tuple):
        p, q = weight
        return x1**p * x2**q
    return np.asarray(weight(x1, x2), dtype=float)


def integrate(f: DensityField) -> float:
    return float(f.grid.h**2 * f.values.sum())


def moment(f: DensityField, weight: Weight) -> float:
    return float(f.grid.h**2 * np.sum(weight_values(f.grid, weight) * f.values))


def mirror(values: np.ndarray) -> np.ndarray:
    """Reflect an array across the x1-axis (x2 -> -x2)."""
    return values[:, ::-1]


def mirror_symmetry_error(f: DensityField | np.ndarray) -> float:
    v = f.values if isinstance(f, DensityField) else np.asarray(f)
    return float(np.max(np.abs(v - mirror(v))))


def half_plane_stats(f: DensityField, spread: str = "x2") -> tuple[float, float, float]:
    """Mass, mean height and spread of the upper half plane.

    Returns (M_plus, y_plus, V_plus) with V_plus = sum n |x2 - y_plus|^2 over
    x2 > 0.  ``spread="full"`` uses |x - (0, y_plus)|^2 instead.
    """
    g = f.grid
    vmax = f.max
    if vmax > 0 and mirror_symmetry_error(f) > 1e-10 * vmax:
        warnings.warn("half_plane_stats on a field that is not mirror-symmetric", stacklevel=2)
    up = g.upper()
    n = f.values[:, up]
    x1, x2 = (a[:, up] for a in g.mesh)
    w = g.h**2
    m_plus = float(w * n.sum())
    if m_plus <= 0:
        raise ValueError("empty upper half plane")
    y_plus = float(w * np.sum(n * x2) / m_plus)
    if spread == "x2":
        d2 = (x2 - y_plus) ** 2
    elif spread == "full":
        d2 = x1**2 + (x2 - y_plus) ** 2
    else:
        raise ValueError(f"unknown spread {spread!r}")
    v_plus = float(w * np.sum(n * d2))
    return m_plus, y_plus, v_plus


def strip_mass(f: DensityField, half_width: float) -> float:
    if half_width <= 0:
        raise ValueError("strip half_width must be positive")
    rows = np.abs(f.grid.centers) <= half_width
    return float(f.grid.h**2 * f.values[:, rows].sum())


def boundary_mass(f: DensityField) -> float:
    """Mass in the outermost ring of cells; a truncation-drift indicator."""
    v = f.values
    ring = v[0, :].sum() + v[-1, :].sum() + v[1:-1, 0].sum() + v[1:-1, -1].sum()
    return float(f.grid.h**2 * ring)


def central_gradient(values: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Second-order differences, one-sided on the outer ring."""
    g1, g2 = np.gradient(values, h, h)
    return g1, g2


def face_divergence(flux1: np.ndarray, flux2: np.ndarray, h: float) -> np.ndarray:
    """Cell divergence of face fluxes; flux1 is (N+1, N), flux2 is (N, N+1)."""
    return (flux1[1:, :] - flux1[:-1, :] + flux2[:, 1:] - flux2[:, :-1]) / h


def write_snapshot(path: str | Path, f: DensityField, t: float) -> None:
    g = f.grid
    with open(path, "w") as fh:
        fh.write(f"{SNAPSHOT_MAGIC} N={g.cells} L={g.half_width!r} t={t!r}\n")
        # one line per x2 index j
        for row in f.values.T:
            fh.write(" ".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def read_snapshot(path: str | Path) -> tuple[DensityField, float]:
    with open(path) as fh:
        header = fh.readline().split()
        if " ".join(header[:2]) != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a {SNAPSHOT_MAGIC} file")
        meta = dict(item.split("=", 1) for item in header[2:])
        n = int(meta["N"])
        grid = Grid2D(float(meta["L"]), n)
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (n, n):
        raise ValueError(f"{path}: expected {n}x{n} values, got {data.shape}")
    return DensityField(grid, data.T.copy()), float(meta["t"])

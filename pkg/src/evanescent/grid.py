"""Units, uniform meshes, sampled fields and the finite-difference helpers
shared by the rest of the package.

Internal units are micrometres, meV and picoseconds.  In these units the
paper-scale numbers (mesh spacings of 0.1-0.5 um, energies of a few tenths
of a meV, couplings of a few hundredths of a rad/ps) are all O(1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HBAR = 0.6582119569  # meV ps
KG_TO_INTERNAL = 6.241509074e33  # meV ps^2 / um^2 per kg
MEV_TO_J = 1.602176634e-22
GHZ_TO_PER_PS = 1e-3


def mass_to_internal(mass_kg: float) -> float:
    """Convert a mass in kg to meV ps^2 / um^2."""
    if not mass_kg > 0:
        raise ValueError(f"mass must be positive, got {mass_kg!r} kg")
    return mass_kg * KG_TO_INTERNAL


def mass_to_kg(mass: float) -> float:
    return mass / KG_TO_INTERNAL


def mev_to_joule(e_mev: float) -> float:
    return e_mev * MEV_TO_J


def joule_to_mev(e_j: float) -> float:
    return e_j / MEV_TO_J


def ghz_to_per_ps(f_ghz: float) -> float:
    return f_ghz * GHZ_TO_PER_PS


def per_ps_to_ghz(f: float) -> float:
    return f / GHZ_TO_PER_PS


@dataclass(frozen=True)
class UnitSystem:
    """Particle mass plus hbar in internal units."""

    mass: float
    hbar: float = HBAR

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    @classmethod
    def from_kg(cls, mass_kg: float) -> "UnitSystem":
        return cls(mass=mass_to_internal(mass_kg))

    @property
    def hbar_over_m(self) -> float:
        return self.hbar / self.mass

    @property
    def kinetic_scale(self) -> float:
        """hbar^2 / (2 m) in meV um^2."""
        return self.hbar**2 / (2.0 * self.mass)


PAPER_MASS_KG = 6.95e-36
PAPER_UNITS = UnitSystem.from_kg(PAPER_MASS_KG)


def _count_points(lo: float, hi: float, h: float, axis: str) -> int:
    if not h > 0:
        raise ValueError(f"h_{axis} must be positive")
    span = hi - lo
    n = int(round(span / h)) + 1
    if abs((n - 1) * h - span) > 1e-9 * h:
        raise ValueError(f"{axis} range {span} is not a multiple of h_{axis}={h}")
    if n < 3:
        raise ValueError(f"need at least 3 points along {axis}, got {n}")
    return n


@dataclass(frozen=True)
class Grid1D:
    lo: float
    hi: float
    h: float
    n: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n", _count_points(self.lo, self.hi, self.h, "axis"))

    @property
    def points(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.n)


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular mesh; fields on it are indexed ``[i_x, i_y]``.

    Two grids are equal when origin, spacings and point counts agree; the
    upper limits are derived and may differ by roundoff.
    """

    x_min: float
    x_max: float = field(compare=False)
    y_min: float
    y_max: float = field(compare=False)
    h_x: float
    h_y: float
    n_x_pts: int = field(init=False)
    n_y_pts: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n_x_pts", _count_points(self.x_min, self.x_max, self.h_x, "x"))
        object.__setattr__(self, "n_y_pts", _count_points(self.y_min, self.y_max, self.h_y, "y"))

    @classmethod
    def from_counts(cls, n_x: int, n_y: int, x_min: float, y_min: float,
                    h_x: float, h_y: float) -> "Grid2D":
        return cls(x_min, x_min + (n_x - 1) * h_x, y_min, y_min + (n_y - 1) * h_y, h_x, h_y)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x_pts, self.n_y_pts)

    @property
    def size(self) -> int:
        return self.n_x_pts * self.n_y_pts

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h_x * np.arange(self.n_x_pts)

    @property
    def y(self) -> np.ndarray:
        return self.y_min + self.h_y * np.arange(self.n_y_pts)

    @property
    def cell_area(self) -> float:
        return self.h_x * self.h_y

    @property
    def x_axis(self) -> Grid1D:
        return Grid1D(self.x_min, self.x_max, self.h_x)

    @property
    def y_axis(self) -> Grid1D:
        return Grid1D(self.y_min, self.y_max, self.h_y)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def contains(self, x: float, y: float, tol: float = 1e-9) -> bool:
        return (self.x_min - tol <= x <= self.x_max + tol
                and self.y_min - tol <= y <= self.y_max + tol)

    def scaled(self, factor: float) -> "Grid2D":
        """Same extent, spacings multiplied by ``factor``."""
        return Grid2D(self.x_min, self.x_max, self.y_min, self.y_max,
                      self.h_x * factor, self.h_y * factor)


PAPER_GRID = Grid2D(-900.0, 700.0, -40.0, 40.0, 0.5, 0.1)


class _Field:
    grid: Grid2D
    values: np.ndarray
    _dtype: type = np.float64

    def __init__(self, grid: Grid2D, values):
        values = np.asarray(values, dtype=self._dtype)
        if values.shape != grid.shape:
            if values.size == grid.size:
                values = values.reshape(grid.shape)
            else:
                raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.values.shape})"

    def norm2(self) -> float:
        """Discrete integral of |f|^2 with weight h_x h_y."""
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.cell_area)


class ScalarField2D(_Field):
    _dtype = np.float64


class ComplexField2D(_Field):
    _dtype = np.complex128


def _values(f):
    return f.values if isinstance(f, _Field) else np.asarray(f)


def gradient(f, grid: Grid2D | None = None):
    """Second-order finite-difference gradient ``(df/dx, df/dy)``.

    Central differences inside, one-sided second-order stencils on the edges.
    Returns fields of the input type when given a field, bare arrays otherwise.
    """
    g = f.grid if isinstance(f, _Field) else grid
    if g is None:
        raise TypeError("grid is required for bare arrays")
    v = _values(f)
    if v.shape[0] < 3 or v.shape[1] < 3:
        raise ValueError("gradient needs at least 3 points per axis")
    dx, dy = np.gradient(v, g.h_x, g.h_y, edge_order=2)
    if isinstance(f, _Field):
        return type(f)(g, dx), type(f)(g, dy)
    return dx, dy


def _fractional_index(coord: float, lo: float, h: float, n: int, axis: str) -> tuple[int, float]:
    t = (coord - lo) / h
    if t < -1e-9 or t > n - 1 + 1e-9:
        raise IndexError(f"{axis}={coord} outside grid [{lo}, {lo + (n - 1) * h}]")
    r = round(t)
    if abs(t - r) < 1e-9:
        t = float(r)
    i = min(int(math.floor(t)), n - 2)
    return i, t - i


def sample_at(f, x: float, y: float, grid: Grid2D | None = None):
    """Bilinear interpolation of a field at a physical point."""
    g = f.grid if isinstance(f, _Field) else grid
    v = _values(f)
    i, tx = _fractional_index(x, g.x_min, g.h_x, g.n_x_pts, "x")
    j, ty = _fractional_index(y, g.y_min, g.h_y, g.n_y_pts, "y")
    if tx == 0.0 and ty == 0.0:
        return v[i, j]
    return ((1 - tx) * (1 - ty) * v[i, j] + tx * (1 - ty) * v[i + 1, j]
            + (1 - tx) * ty * v[i, j + 1] + tx * ty * v[i + 1, j + 1])


def centerline(f, y_c: float, grid: Grid2D | None = None) -> np.ndarray:
    """Profile ``f(x_i, y_c)`` over every grid x.  Works on stacked arrays
    ``(..., n_x, n_y)`` too, interpolating linearly in y."""
    g = f.grid if isinstance(f, _Field) else grid
    v = _values(f)
    j, ty = _fractional_index(y_c, g.y_min, g.h_y, g.n_y_pts, "y")
    if ty == 0.0:
        return np.array(v[..., j])
    return (1 - ty) * v[..., j] + ty * v[..., j + 1]


def inner(a, b, grid: Grid2D) -> complex | float:
    """Discrete <a|b> with weight h_x h_y (conjugates ``a``)."""
    return np.vdot(_values(a), _values(b)) * grid.cell_area

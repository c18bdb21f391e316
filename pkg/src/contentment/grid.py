"""Uniform grid over wealth x contentment and the discrete joint density.

Values are cell averages: the density is piecewise constant on cells, so
every quadrature here is the exact integral of that reconstruction. This is
the same quantity the finite-volume update conserves.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import DegenerateFieldError, InvalidParametersError

MIN_CELLS = 16


@dataclass(frozen=True)
class Grid:
    """Cell-centred uniform grid on [0, m_max] x [0, 1]."""

    m_max: float = 12.0
    n_m: int = 240
    n_c: int = 120

    def __post_init__(self) -> None:
        if self.n_m < MIN_CELLS or self.n_c < MIN_CELLS:
            raise InvalidParametersError(
                f"grid needs at least {MIN_CELLS} cells per axis, got {self.n_m}x{self.n_c}")
        if not self.m_max > 0:
            raise InvalidParametersError("m_max must be positive")

    @property
    def dm(self) -> float:
        return self.m_max / self.n_m

    @property
    def dc(self) -> float:
        return 1.0 / self.n_c

    @property
    def m_centers(self) -> np.ndarray:
        return (np.arange(self.n_m) + 0.5) * self.dm

    @property
    def c_centers(self) -> np.ndarray:
        return (np.arange(self.n_c) + 0.5) * self.dc

    @property
    def m_faces(self) -> np.ndarray:
        return np.arange(self.n_m + 1) * self.dm

    @property
    def c_faces(self) -> np.ndarray:
        return np.arange(self.n_c + 1) * self.dc

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_m, self.n_c)

    @property
    def cell_area(self) -> float:
        return self.dm * self.dc

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.m_max, self.n_m * factor, self.n_c * factor)


@dataclass
class PdfField:
    """Joint density P(M, C) on ``grid``; ``values[i, j]`` is cell (M_i, C_j)."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise InvalidParametersError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    def copy(self) -> "PdfField":
        return PdfField(self.grid, self.values.copy(), self.time)

    @classmethod
    def uniform(cls, grid: Grid) -> "PdfField":
        return cls(grid, np.full(grid.shape, 1.0 / grid.m_max))


@dataclass(frozen=True)
class MomentSet:
    mean_m: float
    mean_c: float
    rms_m: float
    rms_c: float
    # raw second moments, kept so the variance identity can be checked
    second_m: float = dc_field(default=float("nan"), compare=False)
    second_c: float = dc_field(default=float("nan"), compare=False)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.mean_m, self.mean_c, self.rms_m, self.rms_c)


def integrate_2d(field: PdfField) -> float:
    """Integral of the density over the whole domain."""
    return float(field.values.sum() * field.grid.cell_area)


def marginal_wealth(field: PdfField) -> np.ndarray:
    """P(M) = integral of P(M, C) over C, one value per M cell."""
    return field.values.sum(axis=1) * field.grid.dc


def marginal_contentment(field: PdfField) -> np.ndarray:
    return field.values.sum(axis=0) * field.grid.dm


def _axis_moments(centers: np.ndarray, masses: np.ndarray, width: float):
    total = masses.sum()
    mean = float(np.dot(centers, masses) / total)
    # exact second moment of a piecewise-constant density: centre term plus in-cell spread
    second = float(np.dot(centers**2, masses) / total + width**2 / 12.0)
    var = max(second - mean**2, 0.0)
    return mean, float(np.sqrt(var)), second


def compute_moments(field: PdfField) -> MomentSet:
    """Means and rms deviations of wealth and contentment."""
    g = field.grid
    mass = integrate_2d(field)
    if mass < 1e-12:
        raise DegenerateFieldError(f"field integral {mass:.3e} is too small for moments")
    mean_m, rms_m, second_m = _axis_moments(g.m_centers, marginal_wealth(field) * g.dm, g.dm)
    mean_c, rms_c, second_c = _axis_moments(g.c_centers, marginal_contentment(field) * g.dc, g.dc)
    return MomentSet(mean_m, mean_c, rms_m, rms_c, second_m, second_c)


def _clipped_gaussian(centers: np.ndarray, width: float, mean: float, rms: float) -> np.ndarray:
    z = (centers - mean) / rms
    w = np.exp(-0.5 * z * z)
    s = w.sum() * width
    if s <= 0.0 or not np.isfinite(s):
        # whole bump is outside the domain at this resolution; fall back to the nearest cell
        w = np.zeros_like(centers)
        w[np.argmin(np.abs(centers - mean))] = 1.0
        s = width
    return w / s


def _match_axis(centers: np.ndarray, width: float, mean: float, rms: float) -> tuple[float, float]:
    """Location/scale of the unclipped Gaussian whose clipped version has (mean, rms)."""

    def residual(x):
        mu, log_s = x
        dens = _clipped_gaussian(centers, width, mu, np.exp(log_s))
        m, r, _ = _axis_moments(centers, dens * width, width)
        return [(m - mean) / rms, (r - rms) / rms]

    sol = optimize.root(residual, [mean, np.log(rms)], method="hybr", options={"xtol": 1e-13})
    if not sol.success or max(abs(v) for v in sol.fun) > 1e-9:
        raise InvalidParametersError(
            f"no clipped Gaussian on this axis has mean {mean} and rms {rms}")
    return float(sol.x[0]), float(np.exp(sol.x[1]))


def build_initial_condition(grid: Grid, mean_m: float, rms_m: float, mean_c: float,
                            rms_c: float, match_moments: bool = False) -> PdfField:
    """Clipped, renormalised product of two Gaussians.

    With ``match_moments`` the Gaussian location and scale on each axis are
    solved for so that the *clipped* density has the requested mean and rms;
    otherwise the arguments are used as the Gaussian parameters directly.
    """
    if rms_m <= 0 or rms_c <= 0:
        raise InvalidParametersError("rms values must be positive")
    if not (0 < mean_m < grid.m_max) or not (0 < mean_c < 1):
        raise InvalidParametersError("initial means must lie inside the domain")
    mu_m, s_m, mu_c, s_c = mean_m, rms_m, mean_c, rms_c
    if match_moments:
        mu_m, s_m = _match_axis(grid.m_centers, grid.dm, mean_m, rms_m)
        mu_c, s_c = _match_axis(grid.c_centers, grid.dc, mean_c, rms_c)
    pm = _clipped_gaussian(grid.m_centers, grid.dm, mu_m, s_m)
    pc = _clipped_gaussian(grid.c_centers, grid.dc, mu_c, s_c)
    values = np.outer(pm, pc)
    values /= values.sum() * grid.cell_area
    return PdfField(grid, values, 0.0)


def renormalize(field: PdfField) -> float:
    """Clip negatives and rescale to unit mass in place; returns the clipped mass."""
    neg = field.values < 0.0
    clipped = float(-field.values[neg].sum() * field.grid.cell_area)
    field.values[neg] = 0.0
    mass = integrate_2d(field)
    if mass < 1e-12:
        raise DegenerateFieldError("cannot renormalize an empty field")
    field.values /= mass
    return clipped


def write_snapshot(field: PdfField, path: str | Path) -> Path:
    """CSV ``M,C,P`` over cells, M outer and C inner."""
    g = field.grid
    mm, cc = np.meshgrid(g.m_centers, g.c_centers, indexing="ij")
    data = np.column_stack([mm.ravel(), cc.ravel(), field.values.ravel()])
    path = Path(path)
    np.savetxt(path, data, fmt="%.8e", delimiter=",", header="M,C,P", comments="")
    return path


def read_snapshot(path: str | Path, time: float = float("nan")) -> PdfField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    m = np.unique(data[:, 0])
    c = np.unique(data[:, 1])
    # first and last centres sit half a cell inside each wall
    grid = Grid(m_max=float(m[0] + m[-1]), n_m=len(m), n_c=len(c))
    return PdfField(grid, data[:, 2].reshape(grid.shape), time)

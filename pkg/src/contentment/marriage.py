"""Marriage as a pairwise wealth-averaging source term in the density equation.

Two couples' wealths M1, M2 are replaced by their mean, at a rate weighted by
an exponential function of the wealth gap. The default ``pairwise`` form
discretises the operator event by event: every pair of wealth cells (i, j)
removes mass from both cells and deposits it at the midpoint cell, or splits
it evenly over the two cells sharing the midpoint face. Total mass and total
wealth are therefore conserved to round-off. The gain integral at each cell
is the continuous one, with the wealth gap 2z entering the weight as z.

``form="as-printed"`` evaluates the published formula term by term instead;
it is kept for comparison and does not conserve mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateFieldError, InvalidParametersError, NotNormalizedError
from .grid import Grid, MomentSet, PdfField, integrate_2d, marginal_wealth

UNIT_INTEGRAL = "unit-integral"
AS_PRINTED = "as-printed"
PAIRWISE = "pairwise"


@dataclass(frozen=True)
class MarriageKernelConfig:
    tau_f: float = 80.0
    weight_normalization: str = UNIT_INTEGRAL
    form: str = PAIRWISE
    # argument of the weight in the as-printed loss term: partner wealth or wealth gap
    loss_argument: str = "partner"
    enabled: bool = True
    # columns whose marginal is below eps * peak have no usable conditional in C
    eps: float = 1e-14

    def __post_init__(self) -> None:
        if self.tau_f <= 0:
            raise InvalidParametersError("tau_f must be positive")
        if self.weight_normalization not in (UNIT_INTEGRAL, AS_PRINTED):
            raise InvalidParametersError(f"unknown weight normalization {self.weight_normalization!r}")
        if self.form not in (PAIRWISE, AS_PRINTED):
            raise InvalidParametersError(f"unknown marriage form {self.form!r}")
        if self.loss_argument not in ("partner", "difference"):
            raise InvalidParametersError(f"unknown loss argument {self.loss_argument!r}")


def weight_f(z, rms_m: float, config: MarriageKernelConfig = MarriageKernelConfig()):
    """Exponential weight over the wealth gap with length scale ``rms_m``."""
    if rms_m < 1e-12:
        raise DegenerateFieldError("wealth spread is zero; marriage weight undefined")
    decay = np.exp(-np.asarray(z, dtype=float) / rms_m)
    if config.weight_normalization == UNIT_INTEGRAL:
        return decay / rms_m
    return rms_m * decay


@lru_cache(maxsize=8)
def _pair_geometry(grid: Grid):
    idx = np.arange(grid.n_m)
    half_gap = 0.5 * np.abs(grid.m_centers[:, None] - grid.m_centers[None, :])
    mid_index = (idx[:, None] + idx[None, :]).ravel()
    return half_gap, mid_index


def _distribute_in_c(field: PdfField, p_m: np.ndarray, column_net: np.ndarray, eps: float):
    """Spread each column's net rate over C following the current conditional P(C|M)."""
    values = field.values
    ok = p_m > eps * max(p_m.max(), 0.0)
    out = np.empty_like(values)
    out[ok] = values[ok] / p_m[ok, None] * column_net[ok, None]
    # empty columns have no conditional; new couples there are spread evenly in C
    out[~ok] = column_net[~ok, None]
    return out


def pairwise_column_rates(p_m: np.ndarray, grid: Grid, rms_m: float,
                          config: MarriageKernelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Gain and loss per unit M for each wealth column (already divided by tau_f)."""
    n = grid.n_m
    half_gap, mid_index = _pair_geometry(grid)
    mass = p_m * grid.dm
    events = weight_f(half_gap, rms_m, config) * np.outer(mass, mass) / (4.0 * config.tau_f)
    loss = events.sum(axis=1)
    by_mid = np.bincount(mid_index, weights=events.ravel(), minlength=2 * n - 1)
    gain = by_mid[0::2].copy()
    odd = 0.5 * by_mid[1::2]
    gain[:-1] += odd
    gain[1:] += odd
    return gain / grid.dm, loss / grid.dm


def _as_printed_column_terms(p_m: np.ndarray, grid: Grid, rms_m: float,
                             config: MarriageKernelConfig):
    n, dm = grid.n_m, grid.dm
    i = np.arange(n)[:, None]
    k = np.arange(n)[None, :]
    kmax = np.minimum(i, n - 1 - i)
    inside = k <= kmax
    # trapezoid weights over k = 0..kmax
    w = np.where(inside, dm, 0.0)
    w[:, 0] *= 0.5
    w[inside & (k == kmax) & (kmax > 0)] *= 0.5
    w[kmax[:, 0] == 0, 0] = 0.0
    up = np.where(inside, p_m[np.clip(i + k, 0, n - 1)], 0.0)
    down = np.where(inside, p_m[np.clip(i - k, 0, n - 1)], 0.0)
    gain = (w * weight_f(k * dm, rms_m, config) * up * down).sum(axis=1)
    m = grid.m_centers
    arg = m[None, :] if config.loss_argument == "partner" else np.abs(m[:, None] - m[None, :])
    loss_integral = (np.broadcast_to(weight_f(arg, rms_m, config), (n, n)) * p_m[None, :]).sum(axis=1) * dm
    return gain, loss_integral


def marriage_source(field: PdfField, moments: MomentSet,
                    config: MarriageKernelConfig = MarriageKernelConfig()) -> np.ndarray:
    """Rate of change of P(M, C) due to marriages, one value per cell."""
    if not config.enabled:
        return np.zeros_like(field.values)
    mass = integrate_2d(field)
    if abs(mass - 1.0) > 1e-6:
        raise NotNormalizedError(f"field mass {mass:.9f} is not unity")
    grid = field.grid
    p_m = marginal_wealth(field)
    if config.form == PAIRWISE:
        gain, loss = pairwise_column_rates(p_m, grid, moments.rms_m, config)
        return _distribute_in_c(field, p_m, gain - loss, config.eps)

    gain, loss_integral = _as_printed_column_terms(p_m, grid, moments.rms_m, config)
    ok = p_m > config.eps * p_m.max()
    out = np.zeros_like(field.values)
    pref = field.values[ok] / (config.tau_f * p_m[ok, None])
    out[ok] = pref * (gain[ok, None] - 0.25 * field.values[ok] * loss_integral[ok, None])
    return out

"""Contentment drift terms and the (wealth, contentment) velocity field.

The random-event term is not a drift: it enters the transport equation as
the diffusion coefficient ``gamma`` in C.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .econ import (CalibrationState, ModelParams, disposable_income, tax_paid,
                   wealth_drift)
from .errors import DegenerateFieldError
from .grid import Grid, MomentSet


def w1_wealth_satisfaction(m, moments: MomentSet, params: ModelParams):
    return params.k1 * (np.asarray(m, dtype=float) - moments.mean_m)


def w2_income_satisfaction(m, c, cal: CalibrationState, params: ModelParams):
    return params.k2 * (disposable_income(m, c, cal, params) - cal.g)


def w3_infrastructure(cal: CalibrationState, params: ModelParams) -> float:
    return params.k3_alpha_i * cal.t_t


def w4_neighbourhood(moments: MomentSet, params: ModelParams) -> float:
    return params.k4 * (moments.mean_c - 0.5)


def w5_tax_discontent(m, c, cal: CalibrationState, params: ModelParams):
    return -params.k5 * tax_paid(m, c, cal, params)


def w6_inequality(moments: MomentSet, params: ModelParams) -> float:
    if moments.mean_m < 1e-12:
        raise DegenerateFieldError("mean wealth vanishes; inequality intensity undefined")
    return -params.k6 * moments.rms_m / moments.mean_m


def w7_solace(c, params: ModelParams):
    return params.k7 * np.power(np.clip(1.0 - np.asarray(c, dtype=float), 0.0, None), params.beta)


def contentment_drift(m, c, cal: CalibrationState, moments: MomentSet, params: ModelParams):
    """Sum of the seven deterministic contentment terms, broadcast over (m, c)."""
    m = np.asarray(m, dtype=float)
    c = np.asarray(c, dtype=float)
    # scalar society-wide terms first
    u = w3_infrastructure(cal, params) + w4_neighbourhood(moments, params) + w6_inequality(moments, params)
    return (u + w1_wealth_satisfaction(m, moments, params)
            + w2_income_satisfaction(m, c, cal, params)
            + w5_tax_discontent(m, c, cal, params)
            + w7_solace(c, params))


def assemble_contentment_drift(grid: Grid, cal: CalibrationState, moments: MomentSet,
                               params: ModelParams) -> np.ndarray:
    """u_C at every cell centre."""
    return contentment_drift(grid.m_centers[:, None], grid.c_centers[None, :], cal, moments, params)


@dataclass
class RateField:
    """Drift velocities at cell centres plus the face values used by the fluxes.

    ``u_m_face`` has shape (n_m + 1, n_c) and lives on constant-M faces;
    ``u_c_face`` has shape (n_m, n_c + 1) and lives on constant-C faces.
    """

    grid: Grid
    u_m: np.ndarray
    u_c: np.ndarray
    u_m_face: np.ndarray
    u_c_face: np.ndarray

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.u_m, self.u_c, self.u_m_face, self.u_c_face))


def compute_rate_field(grid: Grid, cal: CalibrationState, moments: MomentSet,
                       params: ModelParams) -> RateField:
    mc, cc = grid.m_centers, grid.c_centers
    mf, cf = grid.m_faces, grid.c_faces
    return RateField(
        grid,
        u_m=wealth_drift(mc[:, None], cc[None, :], cal, params),
        u_c=contentment_drift(mc[:, None], cc[None, :], cal, moments, params),
        u_m_face=wealth_drift(mf[:, None], cc[None, :], cal, params),
        u_c_face=contentment_drift(mc[:, None], cf[None, :], cal, moments, params),
    )


def write_rate_field(rates: RateField, path: str | Path) -> Path:
    g = rates.grid
    mm, cc = np.meshgrid(g.m_centers, g.c_centers, indexing="ij")
    data = np.column_stack([mm.ravel(), cc.ravel(), rates.u_m.ravel(), rates.u_c.ravel()])
    path = Path(path)
    np.savetxt(path, data, fmt="%.8e", delimiter=",", header="M,C,uM,uC", comments="")
    return path

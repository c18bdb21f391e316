"""Implicit upwind control-volume step for the joint density.

Each step solves

    (I + dt A) P^{n+1} = P^n + dt I_f^n

where A holds first-order upwind advection in M and C and central diffusion
in C. All four walls carry zero total flux, so every column of A sums to zero
and the update conserves mass up to the linear-solver residual. Society-level
coefficients (moments, calibration) and the marriage source are frozen at
the start of the step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .econ import CalibrationState, ModelParams, calibrate_step, redistribution_neutrality
from .errors import MalformedRatesError, MassAnomalyError, SingularSystemError
from .grid import Grid, MomentSet, PdfField, compute_moments, integrate_2d, renormalize
from .marriage import MarriageKernelConfig, marriage_source
from .rates import RateField, compute_rate_field

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
MASS_ANOMALY = 1e-3
CLIP_WARNING = 1e-6


@dataclass
class StepControl:
    cfl_limit: float = 0.8
    dt_max: float = 0.25
    renormalize_every_step: bool = True
    backend: str = "krylov"
    t: float = 0.0
    dt_current: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.cfl_limit < 1:
            raise ValueError("cfl_limit must lie in (0, 1)")
        if self.backend not in ("krylov", "direct"):
            raise ValueError(f"unknown solver backend {self.backend!r}")


@dataclass
class LinearSystem:
    """Pentadiagonal system in cell order k = i * n_c + j (C varies fastest).

    ``stencil`` maps ``"diag"``, ``"m_minus"``, ``"m_plus"``, ``"c_minus"``,
    ``"c_plus"`` to per-cell coefficient arrays of shape (n_m, n_c).
    """

    grid: Grid
    stencil: dict[str, np.ndarray]
    rhs: np.ndarray
    _matrix: sp.spmatrix | None = dc_field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.grid.n_m * self.grid.n_c

    @property
    def matrix(self) -> sp.spmatrix:
        if self._matrix is None:
            n_c, n = self.grid.n_c, self.dimension
            s = {k: v.ravel() for k, v in self.stencil.items()}
            data = np.zeros((5, n))
            # dia storage: data[d, col] = A[col - offset, col]
            data[0, :n - n_c] = s["m_minus"][n_c:]
            data[1, :n - 1] = s["c_minus"][1:]
            data[2] = s["diag"]
            data[3, 1:] = s["c_plus"][:-1]
            data[4, n_c:] = s["m_plus"][:n - n_c]
            self._matrix = sp.dia_matrix((data, [-n_c, -1, 0, 1, n_c]), shape=(n, n))
        return self._matrix


def compute_dt(rates: RateField, grid: Grid, control: StepControl) -> float:
    """Largest step with advective Courant number at most ``cfl_limit``."""
    um = rates.u_m_face[1:-1]
    uc = rates.u_c_face[:, 1:-1]
    if not (np.isfinite(um).all() and np.isfinite(uc).all()):
        raise MalformedRatesError("non-finite drift velocity")
    speed = (np.max(np.abs(um), initial=0.0) / grid.dm
             + np.max(np.abs(uc), initial=0.0) / grid.dc)
    if speed < 1e-15 / min(grid.dm, grid.dc):
        log.info("stagnant velocity field, using dt_max=%g", control.dt_max)
        return control.dt_max
    return min(control.cfl_limit / speed, control.dt_max)


def assemble_system(field: PdfField, rates: RateField, gamma: float, dt: float, grid: Grid,
                    source: np.ndarray | None = None) -> LinearSystem:
    if not rates.is_finite():
        raise MalformedRatesError("non-finite drift velocity")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_m, n_c = grid.shape
    dm, dc = grid.dm, grid.dc
    diag = np.ones((n_m, n_c))
    m_minus = np.zeros((n_m, n_c))
    m_plus = np.zeros((n_m, n_c))
    c_minus = np.zeros((n_m, n_c))
    c_plus = np.zeros((n_m, n_c))

    # interior M faces between cells i and i+1; wall faces carry no flux
    a = rates.u_m_face[1:-1] * (dt / dm)
    ap, an = np.maximum(a, 0.0), np.minimum(a, 0.0)
    diag[:-1] += ap
    m_plus[:-1] = an
    diag[1:] -= an
    m_minus[1:] = -ap

    b = rates.u_c_face[:, 1:-1] * (dt / dc)
    bp, bn = np.maximum(b, 0.0), np.minimum(b, 0.0)
    d = gamma * dt / dc**2
    diag[:, :-1] += bp + d
    c_plus[:, :-1] = bn - d
    diag[:, 1:] += -bn + d
    c_minus[:, 1:] = -bp - d

    rhs = field.values.ravel().copy()
    if source is not None:
        rhs += dt * source.ravel()
    stencil = dict(diag=diag, m_minus=m_minus, m_plus=m_plus, c_minus=c_minus, c_plus=c_plus)
    return LinearSystem(grid, stencil, rhs)


def _line_preconditioner(system: LinearSystem) -> spla.LinearOperator:
    """Exact solve of the C-direction (tridiagonal) part of the operator."""
    s = system.stencil
    dl = s["c_minus"].ravel()[1:].copy()
    du = s["c_plus"].ravel()[:-1].copy()
    d = s["diag"].ravel().copy()
    dl_f, d_f, du_f, du2, ipiv, info = lapack.dgttrf(dl, d, du)
    if info != 0:
        raise SingularSystemError(f"tridiagonal factorisation failed (info={info})")

    def apply(v):
        x, info = lapack.dgttrs(dl_f, d_f, du_f, du2, ipiv, np.asarray(v).ravel())
        return x

    n = system.dimension
    return spla.LinearOperator((n, n), matvec=apply, dtype=float)


def relative_residual(system: LinearSystem, x: np.ndarray) -> float:
    b = system.rhs
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(system.matrix @ x - b) / (nb if nb > 0 else 1.0))


def _direct_solve(system: LinearSystem) -> np.ndarray:
    try:
        lu = spla.splu(system.matrix.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    return lu.solve(system.rhs)


def solve_system(system: LinearSystem, backend: str = "krylov") -> np.ndarray:
    """Solve to relative residual at most 1e-10.

    ``krylov`` runs BiCGSTAB preconditioned by the exact C-line solve and falls
    back to the sparse LU factorisation if it stalls; ``direct`` goes straight
    to the factorisation.
    """
    x = None
    if backend == "krylov":
        x, info = spla.bicgstab(system.matrix, system.rhs, x0=system.rhs.copy(),
                                rtol=1e-12, atol=0.0, maxiter=200,
                                M=_line_preconditioner(system))
        if info != 0 or relative_residual(system, x) > RESIDUAL_TOL:
            log.warning("iterative solve did not converge (info=%s), using direct solve", info)
            x = None
    if x is None:
        x = _direct_solve(system)
    res = relative_residual(system, x)
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise SingularSystemError(f"linear solve residual {res:.3e} exceeds {RESIDUAL_TOL:g}")
    return x


@dataclass
class StepResult:
    field: PdfField
    calibration: CalibrationState
    moments: MomentSet
    dt: float
    rates: RateField
    mass_pre: float
    clipped_mass: float
    source: np.ndarray
    # |<U2>| / <U1> of the calibration used for this step
    u2_neutrality: float = 0.0


def advance_step(field: PdfField, params: ModelParams, cal: CalibrationState | None,
                 control: StepControl, marriage: MarriageKernelConfig = MarriageKernelConfig(),
                 t_stop: float | None = None) -> StepResult:
    """One full step; ``params`` must be resolved. ``moments`` in the result are of the new field."""
    grid = field.grid
    moments = compute_moments(field)
    cal = calibrate_step(field, params, cal, mean_m=moments.mean_m)
    rates = compute_rate_field(grid, cal, moments, params)
    source = marriage_source(field, moments, marriage)
    dt = compute_dt(rates, grid, control)
    if t_stop is not None and field.time + dt > t_stop:
        dt = t_stop - field.time
    system = assemble_system(field, rates, params.gamma, dt, grid, source)
    x = solve_system(system, control.backend)
    new = PdfField(grid, x.reshape(grid.shape), field.time + dt)
    mass_pre = integrate_2d(new)
    if abs(mass_pre - 1.0) > MASS_ANOMALY:
        raise MassAnomalyError(f"mass {mass_pre:.9f} before renormalisation at t={new.time:.4f}")
    clipped = 0.0
    if control.renormalize_every_step:
        clipped = renormalize(new)
        if clipped > CLIP_WARNING:
            log.warning("clipped negative mass %.3e at t=%.4f", clipped, new.time)
    control.t = new.time
    control.dt_current = dt
    return StepResult(new, cal, compute_moments(new), dt, rates, mass_pre, clipped, source,
                      redistribution_neutrality(field, cal))


class Simulation:
    """Time integration of one scenario with output hooks."""

    def __init__(self, field: PdfField, params: ModelParams, control: StepControl | None = None,
                 marriage: MarriageKernelConfig | None = None):
        self.field = field
        self.params = params.resolved()
        if abs(self.params.m_max - field.grid.m_max) > 1e-12:
            raise ValueError("grid m_max and params.m_max differ")
        self.control = control or StepControl()
        self.marriage = marriage if marriage is not None else MarriageKernelConfig(tau_f=self.params.tau_f)
        self.calibration: CalibrationState | None = None
        self.steps = 0

    def step(self, t_stop: float | None = None) -> StepResult:
        res = advance_step(self.field, self.params, self.calibration, self.control,
                           self.marriage, t_stop)
        self.field = res.field
        self.calibration = res.calibration
        self.steps += 1
        return res

    def advance_to(self, t_target: float, on_step=None) -> None:
        """Step until ``t_target``, shortening the last step to land on it exactly."""
        while self.field.time < t_target - 1e-12:
            res = self.step(t_stop=t_target)
            if on_step is not None:
                on_step(res)

    def moments(self) -> MomentSet:
        return compute_moments(self.field)

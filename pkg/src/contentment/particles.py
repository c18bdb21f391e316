"""Agent-based Monte Carlo of the same dynamics, used to cross-check the PDE.

Every individual follows the wealth and contentment equations with
Euler-Maruyama noise in C (reflected at the walls); society-wide quantities are recomputed from the
ensemble at each step. Marriage pairs individuals, averages their wealth and
redraws both contentments uniformly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .econ import CalibrationState, ModelParams, calibrate_sample_step, wealth_drift
from .errors import BlowupError, InvalidParametersError, MismatchedConfigError
from .grid import MomentSet, PdfField
from .rates import contentment_drift

MOMENT_NAMES = ("mean_m", "mean_c", "rms_m", "rms_c")


@dataclass
class ParticleEnsemble:
    m: np.ndarray
    c: np.ndarray
    m_max: float
    seed: int
    time: float = 0.0
    rng: np.random.Generator | None = None

    def __post_init__(self) -> None:
        self.m = np.asarray(self.m, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @property
    def n(self) -> int:
        return self.m.size

    def copy(self) -> "ParticleEnsemble":
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return ParticleEnsemble(self.m.copy(), self.c.copy(), self.m_max, self.seed, self.time, rng)

    @classmethod
    def from_field(cls, field: PdfField, n: int, seed: int) -> "ParticleEnsemble":
        """Draw ``n`` individuals from the piecewise-constant density."""
        g = field.grid
        rng = np.random.default_rng(seed)
        prob = field.values.ravel() / field.values.sum()
        cells = rng.choice(prob.size, size=n, p=prob)
        i, j = np.divmod(cells, g.n_c)
        m = (i + rng.random(n)) * g.dm
        c = (j + rng.random(n)) * g.dc
        return cls(m, c, g.m_max, seed, field.time, rng)


def ensemble_moments(m: np.ndarray, c: np.ndarray) -> MomentSet:
    return MomentSet(float(m.mean()), float(c.mean()), float(m.std()), float(c.std()),
                     float(np.mean(m * m)), float(np.mean(c * c)))


def ensemble_aggregates(ens: ParticleEnsemble, params: ModelParams,
                        previous: CalibrationState | None = None) -> tuple[MomentSet, CalibrationState]:
    moments = ensemble_moments(ens.m, ens.c)
    w = np.full(ens.n, 1.0 / ens.n)
    return moments, calibrate_sample_step(ens.m, ens.c, w, params, previous)


def _reflect_unit(x: np.ndarray) -> np.ndarray:
    """Fold values back into [0, 1] by mirror reflection at both walls."""
    x = np.mod(x, 2.0)
    return np.where(x > 1.0, 2.0 - x, x)


def step_particles(ens: ParticleEnsemble, params: ModelParams,
                   aggregates: tuple[MomentSet, CalibrationState], dt: float,
                   boundary: str = "reflect") -> ParticleEnsemble:
    """Euler-Maruyama update in place with frozen aggregates.

    The C noise has variance 2 gamma dt, which is the particle counterpart of
    the ``gamma d2P/dC2`` diffusion term of the density equation. Wealth has
    no noise and is clamped at its walls. With ``boundary="reflect"`` C is
    mirrored at 0 and 1 (the zero-flux wall of a diffusing density);
    ``"clamp"`` pins it to the wall instead, which piles point masses there.
    """
    if boundary not in ("reflect", "clamp"):
        raise InvalidParametersError(f"unknown boundary rule {boundary!r}")
    if dt <= 0:
        raise InvalidParametersError("dt must be positive")
    moments, cal = aggregates
    dm = wealth_drift(ens.m, ens.c, cal, params) * dt
    dc = contentment_drift(ens.m, ens.c, cal, moments, params) * dt
    if params.gamma > 0:
        dc = dc + np.sqrt(2.0 * params.gamma * dt) * ens.rng.standard_normal(ens.n)
    if np.any(np.abs(dm) > ens.m_max) or np.any(np.abs(dc) > 1.0):
        raise BlowupError(f"particle update exceeds the domain at t={ens.time:.4f}")
    ens.m = np.clip(ens.m + dm, 0.0, ens.m_max)
    c = ens.c + dc
    ens.c = _reflect_unit(c) if boundary == "reflect" else np.clip(c, 0.0, 1.0)
    ens.time += dt
    return ens


def marry_particles(ens: ParticleEnsemble, rms_m: float, tau_f: float, dt: float,
                    rng: np.random.Generator | None = None, max_rounds: int = 50) -> ParticleEnsemble:
    """Random pairwise marriages in place.

    Each individual marries with probability dt / tau_f. Partners are drawn
    with weight exp(-|M_i - M_j| / rms_m) by rejection from the population;
    proposers still unmatched after ``max_rounds`` stay single this step.
    """
    if dt / tau_f >= 0.5:
        raise InvalidParametersError("dt / tau_f must stay below 0.5")
    rng = rng if rng is not None else ens.rng
    proposers = np.flatnonzero(rng.random(ens.n) < dt / tau_f)
    rng.shuffle(proposers)
    taken = np.zeros(ens.n, dtype=bool)
    pending = proposers
    for _ in range(max_rounds):
        pending = pending[~taken[pending]]
        if pending.size == 0:
            break
        partner = rng.integers(0, ens.n, size=pending.size)
        gap = np.abs(ens.m[pending] - ens.m[partner])
        accept = rng.random(pending.size) < np.exp(-gap / max(rms_m, 1e-12))
        accept &= (partner != pending) & ~taken[partner]
        i, j = pending[accept], partner[accept]
        # a particle may appear at most once per round, as proposer or partner
        both = np.concatenate([i, j])
        _, first = np.unique(both, return_index=True)
        keep_flag = np.zeros(both.size, dtype=bool)
        keep_flag[first] = True
        ok = keep_flag[: i.size] & keep_flag[i.size:]
        i, j = i[ok], j[ok]
        mean = 0.5 * (ens.m[i] + ens.m[j])
        ens.m[i] = mean
        ens.m[j] = mean
        ens.c[i] = rng.random(i.size)
        ens.c[j] = rng.random(j.size)
        taken[i] = True
        taken[j] = True
    return ens


def bootstrap_moments(m: np.ndarray, c: np.ndarray, n_boot: int, rng: np.random.Generator):
    """Point estimates and bootstrap standard errors of the four moments."""
    est = np.array(ensemble_moments(m, c).as_tuple())
    draws = np.empty((n_boot, 4))
    n = m.size
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        draws[b] = ensemble_moments(m[idx], c[idx]).as_tuple()
    return est, draws.std(axis=0, ddof=1)


@dataclass
class OracleRecord:
    t: float
    moments: np.ndarray
    se: np.ndarray


def run_oracle(field: PdfField, params: ModelParams, n: int, seed: int, report_times,
               dt: float = 0.01, marriage: bool = False, n_boot: int = 200,
               on_step=None, boundary: str = "reflect") -> list[OracleRecord]:
    """Integrate an ensemble drawn from ``field`` and record moments at ``report_times``."""
    params = params.resolved()
    ens = ParticleEnsemble.from_field(field, n, seed)
    boot_rng = np.random.default_rng([seed, 1])
    times = sorted(float(t) for t in report_times)
    records = []
    cal = None
    if times and times[0] <= ens.time + 1e-12:
        records.append(OracleRecord(ens.time, *bootstrap_moments(ens.m, ens.c, n_boot, boot_rng)))
        times = times[1:]
    for target in times:
        while ens.time < target - 1e-12:
            h = min(dt, target - ens.time)
            moments, cal = ensemble_aggregates(ens, params, cal)
            step_particles(ens, params, (moments, cal), h, boundary)
            if marriage:
                marry_particles(ens, moments.rms_m, params.tau_f, h)
            if on_step is not None:
                on_step(ens)
        records.append(OracleRecord(ens.time, *bootstrap_moments(ens.m, ens.c, n_boot, boot_rng)))
    return records


def write_oracle_csv(records: list[OracleRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "meanM", "meanC", "rmsM", "rmsC", "se_meanM", "se_meanC", "se_rmsM", "se_rmsC"])
        for r in records:
            w.writerow([f"{r.t:.8e}"] + [f"{v:.8e}" for v in (*r.moments, *r.se)])
    return path


@dataclass
class ComparisonRow:
    t: float
    name: str
    pde: float
    mc: float
    se: float
    z: float
    tolerance: float
    passed: bool


@dataclass
class OracleComparison:
    rows: list[ComparisonRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def lines(self) -> list[str]:
        return [f"t={r.t:6.2f} {r.name:7s} pde={r.pde:.5f} mc={r.mc:.5f} se={r.se:.2e} "
                f"z={r.z:+7.2f} tol={r.tolerance:.2e} {'PASS' if r.passed else 'FAIL'}"
                for r in self.rows]


def compare_to_pde(records: list[OracleRecord], pde_series: dict[float, MomentSet],
                   n_se: float = 3.0, rel: float = 0.02) -> OracleComparison:
    """Check each PDE moment against the ensemble within max(n_se * SE, rel * |value|)."""
    rows = []
    for r in records:
        match = [t for t in pde_series if abs(t - r.t) < 1e-9]
        if not match:
            raise MismatchedConfigError(f"no PDE moments at t={r.t}")
        pde = np.array(pde_series[match[0]].as_tuple())
        for k, name in enumerate(MOMENT_NAMES):
            diff = pde[k] - r.moments[k]
            se = r.se[k]
            tol = max(n_se * se, rel * abs(r.moments[k]))
            z = diff / se if se > 0 else (0.0 if diff == 0 else np.inf * np.sign(diff))
            rows.append(ComparisonRow(r.t, name, pde[k], r.moments[k], se, z, tol, abs(diff) <= tol))
    return OracleComparison(rows)

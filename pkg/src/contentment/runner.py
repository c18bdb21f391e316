"""Scenario configuration, the wealth-tax sweep and every on-disk artifact.

Configuration is a flat ``key = value`` file with dotted keys
(``params.l3 = 0.04``, ``run.t_end = 75``); command-line ``--set`` flags use
the same keys. Each sweep member writes into its own directory::

    l3_0.02/
        run.json            member manifest (status, grid, times, checksums)
        moments.csv         t,meanM,meanC,rmsM,rmsC at the output interval
        steps.csv           t,dt,mass_pre,clipped_mass,meanM,meanC,rmsM,rmsC
        calibration.csv     t,L2,Ms,Mstar,L4,G,Tt,residual_a,residual_b
        snapshots/P_t012.000.csv, rates_t012.000.csv (+ .svg)
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .econ import ModelParams, calibrate_step
from .errors import ContentmentError, IncompatibleRunsError, InvalidParametersError
from .grid import Grid, MomentSet, build_initial_condition, compute_moments, write_snapshot
from .marriage import MarriageKernelConfig
from .rates import compute_rate_field, write_rate_field
from .stepper import Simulation, StepControl, StepResult
from .svg import render_contour_svg

log = logging.getLogger(__name__)

DEFAULT_SWEEP = (0.02, 0.04, 0.06, 0.08)
DEFAULT_SNAPSHOTS = (12.0, 38.3, 72.4)
TIME_EPS = 1e-9
FLOAT_FMT = "{:.8e}"

_PARAM_FIELDS = {f.name: f for f in dataclasses.fields(ModelParams)}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidParametersError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


@dataclass
class ScenarioConfig:
    m_max: float = 12.0
    n_m: int = 240
    n_c: int = 120
    init_mean_m: float = 1.0
    init_rms_m: float = 0.6
    init_mean_c: float = 0.5
    init_rms_c: float = 0.08
    # fit the clipped Gaussian so its moments hit the targets exactly
    init_match_moments: bool = True
    params: dict = dc_field(default_factory=dict)
    marriage_enabled: bool = True
    marriage_form: str = "pairwise"
    marriage_weight: str = "unit-integral"
    marriage_loss_argument: str = "partner"
    cfl_limit: float = 0.8
    dt_max: float = 0.25
    backend: str = "krylov"
    renormalize: bool = True
    sweep_l3: tuple[float, ...] = DEFAULT_SWEEP
    t_end: float = 75.0
    snapshots: tuple[float, ...] = DEFAULT_SNAPSHOTS
    output_interval: float = 0.5
    output_dir: str = "runs"
    formats: tuple[str, ...] = ("csv",)
    jobs: int = 1
    seed: int = 12345
    oracle_particles: int = 200_000
    oracle_dt: float = 0.01
    oracle_t_end: float = 10.0
    oracle_report_times: tuple[float, ...] = (1.0, 5.0, 10.0)
    oracle_marriage: bool = False

    # dotted key -> (attribute, parser)
    _KEYS = {
        "grid.m_max": ("m_max", float), "grid.n_m": ("n_m", int), "grid.n_c": ("n_c", int),
        "initial.mean_m": ("init_mean_m", float), "initial.rms_m": ("init_rms_m", float),
        "initial.mean_c": ("init_mean_c", float), "initial.rms_c": ("init_rms_c", float),
        "initial.match_moments": ("init_match_moments", _parse_bool),
        "marriage.enabled": ("marriage_enabled", _parse_bool),
        "marriage.form": ("marriage_form", str),
        "marriage.weight_normalization": ("marriage_weight", str),
        "marriage.loss_argument": ("marriage_loss_argument", str),
        "stepper.cfl_limit": ("cfl_limit", float), "stepper.dt_max": ("dt_max", float),
        "stepper.backend": ("backend", str), "stepper.renormalize": ("renormalize", _parse_bool),
        "sweep.l3": ("sweep_l3", _parse_floats),
        "run.t_end": ("t_end", float), "run.snapshots": ("snapshots", _parse_floats),
        "run.output_interval": ("output_interval", float), "run.output_dir": ("output_dir", str),
        "run.formats": ("formats", lambda s: tuple(x.strip() for x in s.split(",") if x.strip())),
        "run.jobs": ("jobs", int), "run.seed": ("seed", int),
        "oracle.particles": ("oracle_particles", int), "oracle.dt": ("oracle_dt", float),
        "oracle.t_end": ("oracle_t_end", float),
        "oracle.report_times": ("oracle_report_times", _parse_floats),
        "oracle.marriage": ("oracle_marriage", _parse_bool),
    }

    def set(self, key: str, value: str) -> None:
        key = key.strip()
        if key.startswith("params."):
            name = key[len("params."):]
            if name not in _PARAM_FIELDS:
                raise InvalidParametersError(f"unknown model parameter {name!r}")
            self.params[name] = None if value.strip().lower() == "none" else float(value)
            return
        if key not in self._KEYS:
            raise InvalidParametersError(f"unknown configuration key {key!r}")
        attr, parse = self._KEYS[key]
        try:
            setattr(self, attr, parse(value))
        except ValueError as exc:
            raise InvalidParametersError(f"bad value for {key}: {value!r}") from exc

    def apply_overrides(self, overrides) -> "ScenarioConfig":
        for item in overrides or ():
            if "=" not in item:
                raise InvalidParametersError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            self.set(k, v)
        return self

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        parser.read_string("[config]\n" + text)
        cfg = cls()
        for k, v in parser["config"].items():
            cfg.set(k, v)
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def validate(self) -> "ScenarioConfig":
        if self.t_end < 0:
            raise InvalidParametersError("t_end must be non-negative")
        if not self.sweep_l3:
            raise InvalidParametersError("sweep list is empty")
        if self.output_interval <= 0:
            raise InvalidParametersError("output_interval must be positive")
        bad = [t for t in self.snapshots if t < 0 or t > self.t_end + TIME_EPS]
        if bad and self.t_end > 0:
            raise InvalidParametersError(f"snapshot times {bad} outside [0, {self.t_end}]")
        unknown = set(self.formats) - {"csv", "svg"}
        if unknown:
            raise InvalidParametersError(f"unknown output formats {sorted(unknown)}")
        self.model_params(self.sweep_l3[0])
        self.grid()
        self.marriage_config(ModelParams())
        StepControl(self.cfl_limit, self.dt_max, self.renormalize, self.backend)
        return self

    def grid(self) -> Grid:
        return Grid(self.m_max, self.n_m, self.n_c)

    def model_params(self, l3: float | None = None) -> ModelParams:
        values = {"m_max": self.m_max, **self.params}
        if l3 is not None:
            values["l3"] = l3
        return ModelParams(**values)

    def marriage_config(self, params: ModelParams) -> MarriageKernelConfig:
        return MarriageKernelConfig(tau_f=params.tau_f, weight_normalization=self.marriage_weight,
                                    form=self.marriage_form,
                                    loss_argument=self.marriage_loss_argument,
                                    enabled=self.marriage_enabled)

    def initial_field(self):
        return build_initial_condition(self.grid(), self.init_mean_m, self.init_rms_m,
                                       self.init_mean_c, self.init_rms_c,
                                       match_moments=self.init_match_moments)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(values) -> list[str]:
    # adding 0.0 turns -0.0 into 0.0
    return [FLOAT_FMT.format(float(v) + 0.0) for v in values]


def _open_csv(path: Path, header: list[str]):
    fh = path.open("w", newline="", encoding="utf-8")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    return fh, writer


def output_times(t_end: float, interval: float) -> list[float]:
    if t_end <= 0:
        return []
    n = int(np.floor(t_end / interval + 1e-9))
    times = [round(k * interval, 12) for k in range(n + 1)]
    if times[-1] < t_end - TIME_EPS:
        times.append(t_end)
    return times


def snapshot_label(t: float) -> str:
    return f"t{t:07.3f}"


@dataclass
class MemberResult:
    l3: float
    directory: str
    status: str
    error: str | None = None
    steps: int = 0
    max_mass_drift: float = 0.0
    max_residual_a: float = 0.0
    max_residual_b: float = 0.0
    max_u2_neutrality: float = 0.0
    artifacts: dict = dc_field(default_factory=dict)


def snapshot_rates(sim: Simulation):
    """Velocity field implied by the current density (fresh closure, no warm start)."""
    field = sim.field
    moments = compute_moments(field)
    cal = calibrate_step(field, sim.params, sim.calibration, mean_m=moments.mean_m)
    return compute_rate_field(field.grid, cal, moments, sim.params)


def _write_snapshot_set(sim: Simulation, snap_dir: Path, config: ScenarioConfig,
                        written: list[Path]) -> None:
    field = sim.field
    label = snapshot_label(field.time)
    rates = snapshot_rates(sim)
    written.append(write_snapshot(field, snap_dir / f"P_{label}.csv"))
    written.append(write_rate_field(rates, snap_dir / f"rates_{label}.csv"))
    if "svg" in config.formats:
        path = snap_dir / f"P_{label}.svg"
        path.write_text(render_contour_svg(field, rates=rates), encoding="utf-8")
        written.append(path)


def run_member(config: ScenarioConfig, l3: float, out_dir: Path) -> MemberResult:
    """Integrate one sweep member and write its artifacts; failures are recorded, not raised."""
    member_dir = out_dir / f"l3_{l3:g}"
    snap_dir = member_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    result = MemberResult(l3=l3, directory=member_dir.name, status="ok")
    written: list[Path] = []
    params = config.model_params(l3)
    field = config.initial_field()
    control = StepControl(config.cfl_limit, config.dt_max, config.renormalize, config.backend)
    sim = Simulation(field, params, control, config.marriage_config(params))

    times = output_times(config.t_end, config.output_interval)
    snaps = sorted({float(t) for t in config.snapshots if 0 < t <= config.t_end + TIME_EPS})
    stops = sorted(t for t in set(times) | set(snaps) | {config.t_end} if t > TIME_EPS)

    mom_fh, mom = _open_csv(member_dir / "moments.csv", ["t", "meanM", "meanC", "rmsM", "rmsC"])
    step_fh, steps = _open_csv(member_dir / "steps.csv",
                               ["t", "dt", "mass_pre", "clipped_mass", "meanM", "meanC", "rmsM", "rmsC"])
    cal_fh, cals = _open_csv(member_dir / "calibration.csv",
                             ["t", "L2", "Ms", "Mstar", "L4", "G", "Tt", "residual_a", "residual_b"])

    def on_step(res: StepResult) -> None:
        c, m = res.calibration, res.moments
        t_prev = res.field.time - res.dt
        steps.writerow(_fmt([res.field.time, res.dt, res.mass_pre, res.clipped_mass, *m.as_tuple()[:4]]))
        cals.writerow(_fmt([t_prev, c.l2, c.m_s, c.m_star, c.l4, c.g, c.t_t, c.residual_a, c.residual_b]))
        result.max_mass_drift = max(result.max_mass_drift, abs(res.mass_pre - 1.0))
        result.max_residual_a = max(result.max_residual_a, abs(c.residual_a))
        result.max_residual_b = max(result.max_residual_b, abs(c.residual_b))
        result.max_u2_neutrality = max(result.max_u2_neutrality, res.u2_neutrality)

    try:
        # the initial condition is always written, whatever the snapshot list
        _write_snapshot_set(sim, snap_dir, config, written)
        if times:
            mom.writerow(_fmt([0.0, *compute_moments(sim.field).as_tuple()[:4]]))
        for stop in stops:
            sim.advance_to(stop, on_step=on_step)
            if any(abs(stop - t) < TIME_EPS for t in times):
                mom.writerow(_fmt([stop, *compute_moments(sim.field).as_tuple()[:4]]))
            if any(abs(stop - t) < TIME_EPS for t in snaps):
                _write_snapshot_set(sim, snap_dir, config, written)
    except ContentmentError as exc:
        result.status = "failed"
        result.error = f"{type(exc).__name__}: {exc}"
        log.error("sweep member L3=%g failed at t=%.4f: %s", l3, sim.field.time, result.error)
    finally:
        for fh in (mom_fh, step_fh, cal_fh):
            fh.close()
    result.steps = sim.steps
    written += [member_dir / n for n in ("moments.csv", "steps.csv", "calibration.csv")]
    result.artifacts = {str(p.relative_to(member_dir)): _sha256(p) for p in sorted(written)}
    manifest = {
        "l3": l3, "status": result.status, "error": result.error,
        "grid": {"m_max": config.m_max, "n_m": config.n_m, "n_c": config.n_c},
        "t_end": config.t_end, "output_times": times, "snapshot_times": snaps,
        "final_time": sim.field.time, "steps": result.steps,
        "max_mass_drift": result.max_mass_drift, "max_residual_a": result.max_residual_a,
        "max_residual_b": result.max_residual_b, "max_u2_neutrality": result.max_u2_neutrality,
        "config": config.to_dict(), "artifacts": result.artifacts,
    }
    (member_dir / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return result


def _run_member_task(args):
    config, l3, out_dir = args
    return run_member(config, l3, out_dir)


def run_scenario(config: ScenarioConfig, out_dir: str | Path | None = None) -> dict:
    """Run every sweep member and write ``manifest.json``; returns the manifest."""
    config.validate()
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(config, float(l3), out) for l3 in config.sweep_l3]
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            members = list(pool.map(_run_member_task, tasks))
    else:
        members = [_run_member_task(t) for t in tasks]
    manifest = {
        "config": config.to_dict(),
        "members": [dataclasses.asdict(m) for m in members],
        "status": ("ok" if all(m.status == "ok" for m in members)
                   else "failed" if all(m.status != "ok" for m in members) else "partial"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest


def read_moment_series(path: str | Path) -> dict[float, MomentSet]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {float(r[0]): MomentSet(r[1], r[2], r[3], r[4], r[3] ** 2 + r[1] ** 2, r[4] ** 2 + r[2] ** 2)
            for r in data}


def _load_member(run: str | Path) -> tuple[dict, Path]:
    path = Path(run)
    if path.is_dir():
        path = path / "run.json"
    meta = json.loads(path.read_text(encoding="utf-8"))
    return meta, path.parent


@dataclass
class ComparisonReport:
    times: list[float]
    # per time: (meanM_a, meanM_b, meanC_a, meanC_b, rmsM_a, rmsM_b, rmsC_a, rmsC_b)
    rows: list[tuple[float, ...]]
    final: dict

    def max_abs_difference(self) -> float:
        if not self.rows:
            return 0.0
        arr = np.array(self.rows)
        return float(np.max(np.abs(arr[:, 0::2] - arr[:, 1::2])))

    def lines(self) -> list[str]:
        out = ["t,meanM_a,meanM_b,dmeanM,meanC_a,meanC_b,dmeanC,rmsM_a,rmsM_b,drmsM,rmsC_a,rmsC_b,drmsC"]
        for t, r in zip(self.times, self.rows):
            cols = [t]
            for k in range(4):
                cols += [r[2 * k], r[2 * k + 1], r[2 * k + 1] - r[2 * k]]
            out.append(",".join(_fmt(cols)))
        return out

    def summary(self) -> list[str]:
        f = self.final
        return [f"final t={f['t']:g}: <C> ratio b/a = {f['mean_c_ratio']:.4f}",
                f"<M> b > a: {f['mean_m_b_gt_a']}  rms M b < a: {f['rms_m_b_lt_a']}  "
                f"rms C b < a: {f['rms_c_b_lt_a']}",
                f"max early |d<M>|/<M> (t <= 20): {f['early_mean_m_rel_diff']:.4f}"]


def compare_runs(run_a: str | Path, run_b: str | Path, early_until: float = 20.0) -> ComparisonReport:
    """Tabulate moment differences of two member runs (directories or run.json paths)."""
    meta_a, dir_a = _load_member(run_a)
    meta_b, dir_b = _load_member(run_b)
    if meta_a["grid"] != meta_b["grid"]:
        raise IncompatibleRunsError(f"grids differ: {meta_a['grid']} vs {meta_b['grid']}")
    ta, tb = meta_a["output_times"], meta_b["output_times"]
    if len(ta) != len(tb) or not np.allclose(ta, tb, atol=TIME_EPS, rtol=0):
        raise IncompatibleRunsError("output times differ")
    for meta in (meta_a, meta_b):
        if meta["status"] != "ok":
            raise IncompatibleRunsError(f"run L3={meta['l3']} did not complete")
    sa = read_moment_series(dir_a / "moments.csv")
    sb = read_moment_series(dir_b / "moments.csv")
    times = sorted(sa)
    rows = []
    for t in times:
        a, b = sa[t], sb[min(sb, key=lambda s: abs(s - t))]
        rows.append((a.mean_m, b.mean_m, a.mean_c, b.mean_c, a.rms_m, b.rms_m, a.rms_c, b.rms_c))
    final: dict = {}
    if rows:
        r = rows[-1]
        early = [abs(x[1] - x[0]) / (0.5 * (x[0] + x[1])) for t, x in zip(times, rows) if t <= early_until + TIME_EPS]
        final = {
            "t": times[-1],
            "mean_c_ratio": r[3] / r[2] if r[2] else float("inf"),
            "mean_c_b_gt_a": r[3] > r[2],
            "mean_m_b_gt_a": r[1] > r[0],
            "rms_m_b_lt_a": r[5] < r[4],
            "rms_c_b_lt_a": r[7] < r[6],
            "early_mean_m_rel_diff": max(early) if early else 0.0,
        }
    return ComparisonReport(times, rows, final)

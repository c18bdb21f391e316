"""Command-line entry point: ``contentment simulate | compare | oracle``.

Exit status is 0 on success, 2 when some sweep members failed and 1 on a
fatal error (bad configuration, unreadable runs, oracle mismatch setup).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ContentmentError
from .runner import ScenarioConfig, compare_runs, run_scenario

log = logging.getLogger("contentment")


def _load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
    cfg.apply_overrides(args.set)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if args.sweep_l3:
        cfg.set("sweep.l3", args.sweep_l3)
    if args.svg and "svg" not in cfg.formats:
        cfg.formats = (*cfg.formats, "svg")
    if args.jobs:
        cfg.jobs = args.jobs
    manifest = run_scenario(cfg, args.out)
    for m in manifest["members"]:
        line = f"L3={m['l3']:g}: {m['status']} ({m['steps']} steps) -> {m['directory']}"
        if m["error"]:
            line += f"  [{m['error']}]"
        print(line)
    return {"ok": 0, "partial": 2}.get(manifest["status"], 1)


def cmd_compare(args) -> int:
    report = compare_runs(args.run_a, args.run_b)
    print("\n".join(report.lines()))
    if report.final:
        print("\n".join(report.summary()))
    return 0


def cmd_oracle(args) -> int:
    from .particles import compare_to_pde, run_oracle, write_oracle_csv
    from .stepper import Simulation, StepControl

    cfg = _load_config(args)
    n = args.particles or cfg.oracle_particles
    seed = cfg.seed if args.seed is None else args.seed
    params = cfg.model_params(cfg.sweep_l3[0])
    field = cfg.initial_field()
    times = sorted({0.0, *cfg.oracle_report_times})
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = run_oracle(field, params, n, seed, times, dt=cfg.oracle_dt, marriage=cfg.oracle_marriage)
    path = write_oracle_csv(records, out / f"oracle_n{n}_seed{seed}.csv")
    print(f"wrote {path}")
    if args.compare:
        if cfg.oracle_marriage != cfg.marriage_enabled and cfg.marriage_enabled:
            log.warning("PDE marriage forced off to match the oracle")
        cfg.marriage_enabled = cfg.oracle_marriage
        sim = Simulation(cfg.initial_field(), params,
                         StepControl(cfg.cfl_limit, cfg.dt_max, cfg.renormalize, cfg.backend),
                         cfg.marriage_config(params.resolved()))
        series = {}
        for t in times:
            sim.advance_to(t)
            series[t] = sim.moments()
        report = compare_to_pde(records, series)
        print("\n".join(report.lines()))
        return 0 if report.passed else 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contentment",
                                 description="Wealth-contentment density simulations.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the wealth-tax sweep")
    sim.add_argument("--config", type=Path)
    sim.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    sim.add_argument("--out", type=Path)
    sim.add_argument("--sweep-l3", metavar="A,B,C")
    sim.add_argument("--svg", action="store_true", help="also render SVG contour maps")
    sim.add_argument("--jobs", type=int, help="sweep members run in parallel")
    sim.set_defaults(func=cmd_simulate)

    cmp_ = sub.add_parser("compare", help="tabulate moment differences of two member runs")
    cmp_.add_argument("run_a", type=Path)
    cmp_.add_argument("run_b", type=Path)
    cmp_.set_defaults(func=cmd_compare)

    orc = sub.add_parser("oracle", help="particle Monte Carlo cross-check")
    orc.add_argument("--config", type=Path)
    orc.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    orc.add_argument("--particles", type=int)
    orc.add_argument("--seed", type=int)
    orc.add_argument("--out", type=Path)
    orc.add_argument("--compare", action="store_true", help="also run the PDE and report z-scores")
    orc.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ContentmentError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

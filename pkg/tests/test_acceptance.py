"""End-to-end acceptance checks at full resolution (about 15 minutes on one core).

Each check records a PASS/FAIL line that is printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from contentment.econ import ModelParams
from contentment.grid import (Grid, PdfField, build_initial_condition, compute_moments, integrate_2d,
                              marginal_contentment, read_snapshot)
from contentment.marriage import MarriageKernelConfig, marriage_source
from contentment.particles import compare_to_pde, run_oracle
from contentment.runner import ScenarioConfig, compare_runs, read_moment_series, run_scenario
from contentment.stepper import Simulation, StepControl

from conftest import bimodal_field, record_acceptance
from test_stepper import FROZEN

OFF = MarriageKernelConfig(enabled=False)


def initial(grid=None):
    return build_initial_condition(grid or Grid(), 1.0, 0.6, 0.5, 0.08, match_moments=True)


@pytest.fixture(scope="session")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_sweep")
    t0 = time.perf_counter()
    manifest = run_scenario(ScenarioConfig(), out)
    return manifest, out, time.perf_counter() - t0


def _series(out, l3):
    return read_moment_series(out / f"l3_{l3:g}" / "moments.csv")


def _at(series, t):
    return series[min(series, key=lambda s: abs(s - t))]


def test_c1_mass_conservation_marriage_off():
    sim = Simulation(initial(), ModelParams(), StepControl(renormalize_every_step=False), OFF)
    worst, before = [0.0], [integrate_2d(sim.field)]

    def track(res):
        worst[0] = max(worst[0], abs(res.mass_pre - before[0]))
        before[0] = integrate_2d(res.field)

    sim.advance_to(75.0, on_step=track)
    ok = worst[0] <= 1e-10
    record_acceptance("1a conservation, marriage off", ok,
                      f"max per-step mass drift {worst[0]:.2e} over {sim.steps} steps (limit 1e-10)")
    assert ok


def test_c1_marriage_neutrality():
    g = Grid()
    fields = {"uniform": PdfField.uniform(g), "initial": initial(g), "bimodal": bimodal_field(g)}
    worst_mass, worst_mean = 0.0, 0.0
    for f in fields.values():
        mo = compute_moments(f)
        src = marriage_source(f, mo)
        worst_mass = max(worst_mass, abs(src.sum() * g.cell_area))
        worst_mean = max(worst_mean, abs((g.m_centers[:, None] * src).sum() * g.cell_area) / mo.mean_m)
    ok = worst_mass <= 1e-6 and worst_mean <= 1e-5
    record_acceptance("1b marriage neutrality", ok,
                      f"|int I_f| <= {worst_mass:.1e}, |int M I_f|/<M> <= {worst_mean:.1e} on 3 fields")
    assert ok


def test_c2_cosine_decay():
    g = Grid()
    c = g.c_centers
    v = np.repeat((1 + np.cos(np.pi * c))[None, :], g.n_m, axis=0)
    mode = np.cos(np.pi * c)
    ratios = {}
    for dt_max in (0.01, 0.25):
        sim = Simulation(PdfField(g, v / (v.sum() * g.cell_area)), ModelParams(**{**FROZEN, "gamma": 0.11}),
                         StepControl(dt_max=dt_max), OFF)
        amp = []
        for t in (0.0, 1.0):
            sim.advance_to(t)
            pc = marginal_contentment(sim.field)
            amp.append(np.dot(pc - pc.mean(), mode))
        ratios[dt_max] = amp[1] / amp[0]
    exact = np.exp(-0.11 * np.pi ** 2)
    err = abs(ratios[0.01] / exact - 1)
    ok = err <= 0.02
    record_acceptance("2 cosine decay", ok,
                      f"ratio {ratios[0.01]:.5f} vs {exact:.5f} ({err:.2%}) at dt=0.01; "
                      f"dt=0.25 gives {ratios[0.25]:.5f}")
    assert ok


def test_c3_oracle_equivalence():
    t0 = time.perf_counter()
    records = run_oracle(initial(), ModelParams(), 200_000, 20240, [1.0, 5.0, 10.0], dt=0.01)
    sim = Simulation(initial(), ModelParams(), StepControl(), OFF)
    pde = {}
    for t in (1.0, 5.0, 10.0):
        sim.advance_to(t)
        pde[t] = compute_moments(sim.field)
    report = compare_to_pde(records, pde, n_se=3.0, rel=0.02)
    failed = [f"{r.name}@t={r.t:g} ({(r.pde - r.mc) / r.mc:+.1%})" for r in report.rows if not r.passed]
    detail = (f"{sum(r.passed for r in report.rows)}/{len(report.rows)} moments within max(3 SE, 2%)"
              f" in {time.perf_counter() - t0:.0f}s")
    if failed:
        detail += "; failing: " + ", ".join(failed)
    record_acceptance("3 oracle equivalence", report.passed, detail)
    print("\n".join(report.lines()))
    assert report.passed, "\n".join(report.lines())


def test_c4_calibration_residuals(sweep):
    manifest, _, _ = sweep
    members = manifest["members"]
    res = max(max(m["max_residual_a"], m["max_residual_b"]) for m in members)
    neutral = max(m["max_u2_neutrality"] for m in members)
    ok = all(m["status"] == "ok" for m in members) and res <= 1e-6 and neutral <= 1e-6
    steps = sum(m["steps"] for m in members)
    record_acceptance("4 calibration residuals", ok,
                      f"max relative residual {res:.1e}, max |<U2>|/<U1> {neutral:.1e} over {steps} steps")
    assert ok


def test_c5_baseline_growth(sweep):
    _, out, _ = sweep
    s = _series(out, 0.02)
    rate = (_at(s, 10.0).mean_m / _at(s, 0.0).mean_m) ** 0.1 - 1
    ok = 0.05 <= rate <= 0.11
    record_acceptance("5 baseline wealth growth", ok, f"mean growth of <M> over [0, 10]: {rate:.2%}/yr")
    assert ok


@pytest.fixture(scope="session")
def tax_comparison(sweep):
    _, out, elapsed = sweep
    return compare_runs(out / "l3_0.02", out / "l3_0.08"), elapsed


def test_c6a_contentment_ordering(tax_comparison):
    report, elapsed = tax_comparison
    f = report.final
    ok = f["mean_c_b_gt_a"]
    record_acceptance("6a <C> higher with high tax", ok,
                      f"<C>(0.08)/<C>(0.02) at t=75 = {f['mean_c_ratio']:.3f} "
                      f"(soft target [1.5, 2.5]); sweep took {elapsed:.0f}s")
    assert ok


def test_c6b_wealth_ordering(tax_comparison):
    report, _ = tax_comparison
    r = report.rows[-1]
    ok = report.final["mean_m_b_gt_a"]
    record_acceptance("6b <M> higher with high tax", ok, f"<M> at t=75: {r[1]:.4f} (0.08) vs {r[0]:.4f} (0.02)")
    assert ok


def test_c6c_spread_ordering(tax_comparison):
    report, _ = tax_comparison
    r = report.rows[-1]
    ok = report.final["rms_m_b_lt_a"] and report.final["rms_c_b_lt_a"]
    record_acceptance("6c rms smaller with high tax", ok,
                      f"rms M {r[5]:.4f} vs {r[4]:.4f}; rms C {r[7]:.4f} vs {r[6]:.4f} (0.08 vs 0.02)")
    assert ok


def test_c6d_early_insensitivity(tax_comparison):
    report, _ = tax_comparison
    worst = report.final["early_mean_m_rel_diff"]
    ok = worst <= 0.02
    record_acceptance("6d early insensitivity", ok, f"max |d<M>|/<M> for t <= 20: {worst:.2%} (limit 2%)")
    assert ok


def _destitute_mass(path):
    f = read_snapshot(path)
    g = f.grid
    sel = f.values[np.ix_(g.m_centers < 0.25, g.c_centers < 0.1)]
    return sel.sum() * g.cell_area


@pytest.mark.parametrize("t", [38.3, 72.4])
def test_c7_stratification(sweep, t):
    _, out, _ = sweep
    name = f"P_t{t:07.3f}.csv"
    low = _destitute_mass(out / "l3_0.02" / "snapshots" / name)
    high = _destitute_mass(out / "l3_0.08" / "snapshots" / name)
    ok = low > high
    record_acceptance(f"7 stratification t={t:g}", ok,
                      f"mass at M<0.25, C<0.1: {low:.3e} (0.02) vs {high:.3e} (0.08)")
    assert ok


def test_c8_numerical_robustness(sweep):
    _, out, _ = sweep
    base = _at(_series(out, 0.02), 10.0)
    p = ModelParams()
    fine = Simulation(initial(Grid().refined(2)), p, StepControl())
    fine.advance_to(10.0)
    half = Simulation(initial(), p, StepControl(cfl_limit=0.4))
    half.advance_to(10.0)
    lines, ok = [], True
    for label, mo, lim_m, lim_c in (("grid x2", compute_moments(fine.field), 0.01, 0.005),
                                    ("CFL/2", compute_moments(half.field), 0.01, 0.005)):
        dm = abs(mo.mean_m / base.mean_m - 1)
        dc = abs(mo.mean_c / base.mean_c - 1)
        ok &= dm < lim_m and dc < lim_c
        lines.append(f"{label}: d<M> {dm:.2%}, d<C> {dc:.2%}")
    record_acceptance("8 numerical robustness", ok, "; ".join(lines) + " (limits 1% / 0.5%)")
    assert ok

import math
from dataclasses import replace

import numpy as np
import pytest

from contentment.econ import CalibrationState, ModelParams, calibrate_step
from contentment.errors import DegenerateFieldError
from contentment.grid import MomentSet, compute_moments
from contentment.rates import (assemble_contentment_drift, compute_rate_field, contentment_drift,
                               w1_wealth_satisfaction, w2_income_satisfaction, w3_infrastructure,
                               w4_neighbourhood, w5_tax_discontent, w6_inequality, w7_solace,
                               write_rate_field)

MOM = MomentSet(mean_m=1.0, mean_c=0.5, rms_m=0.6, rms_c=0.08, second_m=1.36, second_c=0.2564)
K_NAMES = ("k1", "k2", "k3_alpha_i", "k4", "k5", "k6", "k7")


def test_w1_examples(params):
    assert w1_wealth_satisfaction(2.0, MOM, params) == pytest.approx(0.1)
    assert w1_wealth_satisfaction(1.0, MOM, params) == 0.0
    assert w1_wealth_satisfaction(0.0, MOM, params) == pytest.approx(-0.1)


def test_w2_examples(params):
    # I_d(1, 1) = 0.1 for the pre-calibration state, so G = 0.1 gives zero
    cal = CalibrationState(l2=0.2, m_s=2.5, m_star=1.0, g=0.1)
    assert w2_income_satisfaction(1.0, 1.0, cal, params) == pytest.approx(0.0, abs=1e-15)
    assert w2_income_satisfaction(1.0, 1.0, replace(cal, g=-0.9), params) == pytest.approx(0.15)
    cal = replace(cal, l4=0.1 * (1 - math.exp(-0.4)))
    assert w2_income_satisfaction(0.0, 0.42, cal, params) == pytest.approx(0.15 * (-cal.l4 - 0.1))


def test_scalar_terms(params):
    assert w3_infrastructure(CalibrationState(t_t=0.2), params) == pytest.approx(0.01)
    assert w4_neighbourhood(MOM, params) == 0.0
    assert w6_inequality(MOM, params) == pytest.approx(-0.06)
    with pytest.raises(DegenerateFieldError):
        w6_inequality(replace(MOM, mean_m=0.0), params)


def test_w5_is_tax(params):
    cal = CalibrationState(l2=0.2, m_s=2.5, m_star=1.0)
    m, c = 6.0, 0.8
    u1 = params.l1 * c ** (1 / 3) * m * 6.0 ** 3
    u2 = 0.2 * (math.exp(5 / 2.5) - 1)
    tw = 0.02 * math.exp(3.5 * 6.0 / 9.5 ** 2)
    assert w5_tax_discontent(m, c, cal, params) == pytest.approx(-0.5 * (0.5 * (u1 + u2) + tw), rel=1e-12)


def test_w7_examples(params):
    assert w7_solace(1.0, params) == 0.0
    assert w7_solace(0.0, params) == pytest.approx(0.15)
    assert w7_solace(0.5, params) == pytest.approx(0.0375)
    c = np.linspace(0, 1, 101)
    w = w7_solace(c, params)
    assert np.all(w[:-1] > 0) and np.all(np.diff(w) <= 0)


def _only(params, name):
    return replace(params, **{k: (getattr(params, k) if k == name else 0.0) for k in K_NAMES})


def test_all_k_zero_gives_zero(grid, initial_field, params):
    p = _only(params, "none")
    cal = calibrate_step(initial_field, p)
    u = assemble_contentment_drift(grid, cal, compute_moments(initial_field), p)
    assert np.all(u == 0.0)


@pytest.mark.parametrize("name,term", [
    ("k1", lambda m, c, cal, mo, p: w1_wealth_satisfaction(m, mo, p)),
    ("k2", lambda m, c, cal, mo, p: w2_income_satisfaction(m, c, cal, p)),
    ("k3_alpha_i", lambda m, c, cal, mo, p: w3_infrastructure(cal, p) + 0 * m * c),
    ("k4", lambda m, c, cal, mo, p: w4_neighbourhood(mo, p) + 0 * m * c),
    ("k5", lambda m, c, cal, mo, p: w5_tax_discontent(m, c, cal, p)),
    ("k6", lambda m, c, cal, mo, p: w6_inequality(mo, p) + 0 * m * c),
    ("k7", lambda m, c, cal, mo, p: w7_solace(c, p) + 0 * m),
])
def test_linearity(grid, initial_field, params, name, term):
    p = _only(params, name)
    mo = compute_moments(initial_field)
    cal = calibrate_step(initial_field, p, mean_m=mo.mean_m)
    m, c = grid.m_centers[:, None], grid.c_centers[None, :]
    u = assemble_contentment_drift(grid, cal, mo, p)
    np.testing.assert_array_equal(u, np.broadcast_to(term(m, c, cal, mo, p), u.shape))
    if name in ("k3_alpha_i", "k4", "k6"):
        assert u.max() == u.min()
    if name == "k7":
        assert np.all(u == u[0])


def test_drift_at_origin_matches_scalar_sum(initial_field, params):
    mo = compute_moments(initial_field)
    cal = calibrate_step(initial_field, params, mean_m=mo.mean_m)
    # independent scalar evaluation at (M, C) = (0, 0): U1 = Tw = U4-excluded = 0
    u2_0 = cal.l2 * (math.exp(-cal.m_star / cal.m_s) - 1)
    i_d = 0.5 * u2_0
    terms = {
        "w1": 0.1 * (0 - mo.mean_m),
        "w2": 0.15 * (i_d - cal.g),
        "w3": 0.05 * cal.t_t,
        "w4": 0.1 * (mo.mean_c - 0.5),
        "w5": -0.5 * (0.5 * u2_0),
        "w6": -0.1 * mo.rms_m / mo.mean_m,
        "w7": 0.15,
    }
    assert contentment_drift(0.0, 0.0, cal, mo, params) == pytest.approx(sum(terms.values()), abs=1e-14)
    # wealth and inequality terms are the two largest negative contributions
    negatives = sorted((v, k) for k, v in terms.items() if v < 0)
    assert {negatives[0][1], negatives[1][1]} == {"w1", "w6"}


def test_rate_field(grid, initial_field, params, tmp_path):
    mo = compute_moments(initial_field)
    cal = calibrate_step(initial_field, params, mean_m=mo.mean_m)
    rf = compute_rate_field(grid, cal, mo, params)
    assert rf.is_finite()
    assert rf.u_m_face.shape == (241, 120) and rf.u_c_face.shape == (240, 121)
    assert np.all(rf.u_m_face[0] == 0.0)
    path = write_rate_field(rf, tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "M,C,uM,uC" and len(lines) == 1 + 240 * 120

"""Wealth dynamics: productivity, redistribution to the elites, taxes, welfare.

All rate functions broadcast over numpy arrays, so ``m[:, None]`` and
``c[None, :]`` give per-cell fields directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .errors import CalibrationError, InvalidParametersError
from .grid import PdfField, marginal_wealth

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelParams:
    """Rate constants of the wealth and contentment equations.

    ``l1`` and ``tw_exponent_scale`` default to ``None`` and are filled in by
    :meth:`resolved` (productivity calibration and the bounded wealth-tax bump).
    """

    m_max: float = 12.0
    # contentment
    k1: float = 0.1
    k2: float = 0.15
    k3_alpha_i: float = 0.05
    k4: float = 0.1
    k5: float = 0.5
    k6: float = 0.1
    k7: float = 0.15
    beta: float = 2.0
    gamma: float = 0.11
    # wealth
    l1: float | None = None
    alpha_p1: float = 1.0 / 3.0
    alpha_p2: float = 1.0
    alpha_p3: float = 3.0
    l_t: float = 0.5
    l3: float = 0.02
    m_w: float = 2.5
    alpha_w: float = 0.5
    tau_f: float = 80.0
    target_top_growth: float = 0.12
    target_alienated_fraction: float = 0.22
    target_mean_productivity: float = 0.2
    tw_exponent_scale: float | None = None

    def __post_init__(self) -> None:
        rates = ("k1", "k2", "k3_alpha_i", "k4", "k5", "k6", "k7", "gamma", "l_t", "l3",
                 "alpha_w", "target_top_growth", "target_alienated_fraction",
                 "target_mean_productivity")
        for name in rates:
            if getattr(self, name) < 0:
                raise InvalidParametersError(f"{name} must be non-negative")
        if self.beta <= 1:
            raise InvalidParametersError("beta must exceed 1")
        if not 0 <= self.l_t < 1:
            raise InvalidParametersError("l_t must lie in [0, 1)")
        if not 0 < self.m_w < self.m_max:
            raise InvalidParametersError("m_w must lie inside (0, m_max)")
        if self.tau_f <= 0:
            raise InvalidParametersError("tau_f must be positive")

    def resolved(self) -> "ModelParams":
        l1 = self.l1 if self.l1 is not None else calibrate_l1(self)
        s = self.tw_exponent_scale
        if s is None:
            s = 1.0 / (self.m_max - self.m_w) ** 2
        return replace(self, l1=l1, tw_exponent_scale=s)


@dataclass(frozen=True)
class CalibrationState:
    """Society-level quantities recomputed every step."""

    l2: float = 0.2
    m_s: float = 2.5
    m_star: float = 1.0
    l4: float = 0.0
    g: float = 0.0
    t_t: float = 0.0
    mean_m: float = 1.0
    mean_u1: float = 0.0
    residual_a: float = 0.0
    residual_b: float = 0.0
    iterations: int = 0


def calibrate_l1(params: ModelParams, grid=None) -> float:
    """L1 such that U1(M=1, C=1) equals the target productivity."""
    m_max = grid.m_max if grid is not None else params.m_max
    if m_max <= 1:
        raise InvalidParametersError("m_max must exceed the unit mean wealth")
    return params.target_mean_productivity / (1.0 ** params.alpha_p2 * (m_max - 1.0) ** params.alpha_p3)


def productivity_u1(m, c, params: ModelParams):
    p = params
    m = np.asarray(m, dtype=float)
    c = np.asarray(c, dtype=float)
    return (p.l1 * np.power(np.clip(c, 0.0, None), p.alpha_p1) * np.power(m, p.alpha_p2)
            * np.power(np.clip(p.m_max - m, 0.0, None), p.alpha_p3))


def redistribution_u2(m, cal: CalibrationState, params: ModelParams | None = None):
    return cal.l2 * np.expm1((np.asarray(m, dtype=float) - cal.m_star) / cal.m_s)


def wealth_tax_tw(m, params: ModelParams):
    p = params
    m = np.asarray(m, dtype=float)
    s = p.tw_exponent_scale if p.tw_exponent_scale is not None else 1.0 / (p.m_max - p.m_w) ** 2
    above = m > p.m_w
    out = np.where(above, p.l3 * np.exp(s * (m - p.m_w) * (p.m_max - m) * above), 0.0)
    return out if out.ndim else float(out)


def welfare_u4(m, mean_m: float, cal: CalibrationState, params: ModelParams):
    m = np.asarray(m, dtype=float)
    frac = np.clip(1.0 - m / mean_m, 0.0, None)
    out = cal.l4 * np.power(frac, params.alpha_w)
    out = np.where(m <= mean_m, out, 0.0)
    return out if out.ndim else float(out)


def compute_l4(cal: CalibrationState, params: ModelParams) -> float:
    """Welfare amplitude that makes the wealth drift vanish at M = 0."""
    u2_0 = float(redistribution_u2(0.0, cal))
    return -((1.0 - params.l_t) * u2_0 - float(wealth_tax_tw(0.0, params)))


def disposable_income(m, c, cal: CalibrationState, params: ModelParams):
    return ((1.0 - params.l_t) * (productivity_u1(m, c, params) + redistribution_u2(m, cal))
            - wealth_tax_tw(m, params))


def wealth_drift(m, c, cal: CalibrationState, params: ModelParams):
    return disposable_income(m, c, cal, params) + welfare_u4(m, cal.mean_m, cal, params)


def tax_paid(m, c, cal: CalibrationState, params: ModelParams):
    """Income tax on U1 + U2 (a credit where negative) plus wealth tax."""
    return (params.l_t * (productivity_u1(m, c, params) + redistribution_u2(m, cal))
            + wealth_tax_tw(m, params))


def solve_m_star(m_values, weights, m_s: float) -> float:
    """Zero crossing of U2 that leaves the mean wealth unchanged: M_s ln<exp(M/M_s)>."""
    m_values = np.asarray(m_values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if m_s <= 0:
        raise InvalidParametersError("m_s must be positive")
    if np.max(m_values) / m_s > 700:
        log.debug("m_star: exponent range %.1f exceeds double range, using shifted sum",
                  np.max(m_values) / m_s)
    return float(m_s * logsumexp(m_values / m_s, b=weights / weights.sum()))


def _field_wealth_sample(field: PdfField):
    g = field.grid
    return g.m_centers, marginal_wealth(field) * g.dm


def _mean_u1(field: PdfField, params: ModelParams) -> float:
    g = field.grid
    u1 = productivity_u1(g.m_centers[:, None], g.c_centers[None, :], params)
    return float((u1 * field.values).sum() * g.cell_area)


def _positive_u2_ratio(m, m_star, m_s, m_max):
    """(exp((m-M*)/Ms) - 1)^+ / (exp((Mmax-M*)/Ms) - 1), overflow free."""
    x = (m - m_star) / m_s
    big = (m_max - m_star) / m_s
    pos = x > 0
    out = np.zeros_like(x)
    xp = x[pos]
    out[pos] = np.exp(xp - big) * (-np.expm1(-xp)) / (-np.expm1(-big))
    return out


def calibrate_redistribution_sample(m_values, weights, mean_u1: float, params: ModelParams,
                                    guess: CalibrationState | None = None,
                                    max_iter: int = 200) -> CalibrationState:
    """Fit (L2, Ms, M*) to the top-growth and alienated-fraction constraints.

    ``m_values``/``weights`` describe the wealth distribution (cell centres and
    cell masses, or particles and 1/n). For any Ms the top-growth constraint is
    linear in L2, so it is eliminated exactly and the alienated fraction leaves
    a scalar equation in log(Ms), solved by a warm-started secant iteration
    with a bracketing fallback.
    """
    p = params
    m_values = np.asarray(m_values, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    guess = guess or CalibrationState()
    if p.target_top_growth == 0 and p.target_alienated_fraction == 0:
        # redistribution switched off
        m_star = solve_m_star(m_values, w, guess.m_s)
        return CalibrationState(l2=0.0, m_s=guess.m_s, m_star=m_star,
                                mean_m=float(np.dot(w, m_values)), mean_u1=mean_u1)
    if mean_u1 < 1e-12:
        raise CalibrationError("infeasible", f"mean productivity {mean_u1:.3e} is zero",
                               state={"mean_u1": mean_u1})
    top_target = p.target_top_growth * p.m_max
    # net top drift = (1-LT)(U1(Mmax,1) + U2(Mmax)) - Tw(Mmax); U1 vanishes there for alpha_p3 > 0
    u1_top = float(productivity_u1(p.m_max, 1.0, p))
    needed_u2_top = (top_target + float(wealth_tax_tw(p.m_max, p))) / (1.0 - p.l_t) - u1_top
    target_b = p.target_alienated_fraction
    if needed_u2_top <= 0 or target_b <= 0:
        raise CalibrationError("infeasible",
                               "top-growth and alienated-fraction targets need positive U2",
                               state={"needed_u2_top": needed_u2_top, "target_b": target_b})

    lo_bound, hi_bound = np.log(1e-4), np.log(1e5)

    def unpack(log_ms):
        m_s = float(np.exp(np.clip(log_ms, lo_bound, hi_bound)))
        m_star = solve_m_star(m_values, w, m_s)
        l2 = needed_u2_top / np.expm1((p.m_max - m_star) / m_s) if (p.m_max - m_star) / m_s < 700 else 0.0
        frac = needed_u2_top * float(np.dot(w, _positive_u2_ratio(m_values, m_star, m_s, p.m_max))) / mean_u1
        return m_s, m_star, float(l2), frac

    evals = 0

    def resid(log_ms):
        nonlocal evals
        evals += 1
        return unpack(log_ms)[3] / target_b - 1.0

    u0 = float(np.clip(np.log(guess.m_s), lo_bound + 0.5, hi_bound - 0.5))
    u = None
    try:
        u = optimize.newton(resid, u0, x1=u0 + 1e-3, tol=1e-13, maxiter=50)
        if not np.isfinite(u) or not lo_bound <= u <= hi_bound or abs(resid(u)) > 1e-10:
            u = None
    except (RuntimeError, OverflowError, FloatingPointError):
        u = None
    if u is None:
        lo, hi = u0 - 0.5, u0 + 0.5
        f_lo, f_hi = resid(lo), resid(hi)
        while f_lo * f_hi > 0:
            lo, hi = lo - 1.0, hi + 1.0
            if lo < lo_bound or hi > hi_bound:
                raise CalibrationError("infeasible", "alienated-fraction target not bracketed",
                                       residual_b=min(abs(f_lo), abs(f_hi)),
                                       state={"lo": lo, "hi": hi})
            f_lo, f_hi = resid(lo), resid(hi)
        try:
            u = optimize.brentq(resid, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps,
                                maxiter=max(max_iter - evals, 10))
        except RuntimeError as exc:
            raise CalibrationError("no-convergence", str(exc), residual_b=abs(resid(hi))) from exc
    if evals > max_iter:
        raise CalibrationError("no-convergence", f"{evals} residual evaluations")
    m_s, m_star, l2, frac = unpack(u)
    cal = CalibrationState(l2=l2, m_s=m_s, m_star=m_star, mean_m=float(np.dot(w, m_values)),
                           mean_u1=mean_u1, iterations=evals)
    u2_top = float(redistribution_u2(p.m_max, cal))
    top = (1.0 - p.l_t) * (u1_top + u2_top) - float(wealth_tax_tw(p.m_max, p))
    # relative residual; absolute when the target itself is zero
    res_a = (top - top_target) / (top_target if top_target > 0 else 1.0)
    res_b = frac / target_b - 1.0
    if abs(res_a) > 1e-6 or abs(res_b) > 1e-6:
        raise CalibrationError("no-convergence", "residuals above tolerance", res_a, res_b,
                               state={"l2": l2, "m_s": m_s, "m_star": m_star})
    return replace(cal, residual_a=res_a, residual_b=res_b)


def calibrate_redistribution(field: PdfField, params: ModelParams,
                             guess: CalibrationState | None = None) -> CalibrationState:
    m, masses = _field_wealth_sample(field)
    return calibrate_redistribution_sample(m, masses, _mean_u1(field, params), params, guess)


def total_tax_intake(field: PdfField, cal: CalibrationState, params: ModelParams) -> float:
    g = field.grid
    tax = tax_paid(g.m_centers[:, None], g.c_centers[None, :], cal, params)
    return float((tax * field.values).sum() * g.cell_area)


def good_income(field: PdfField, cal: CalibrationState, params: ModelParams) -> float:
    g = field.grid
    drift = wealth_drift(g.m_centers[:, None], g.c_centers[None, :], cal, params)
    return float((drift * field.values).sum() * g.cell_area)


def calibrate_step(field: PdfField, params: ModelParams,
                   previous: CalibrationState | None = None,
                   mean_m: float | None = None) -> CalibrationState:
    """Full per-step closure: L2, Ms, M*, then L4, G and the tax intake."""
    cal = calibrate_redistribution(field, params, previous)
    if mean_m is not None:
        cal = replace(cal, mean_m=mean_m)
    cal = replace(cal, l4=compute_l4(cal, params))
    return replace(cal, g=good_income(field, cal, params), t_t=total_tax_intake(field, cal, params))


def calibrate_sample_step(m, c, weights, params: ModelParams,
                          previous: CalibrationState | None = None) -> CalibrationState:
    """Same closure as :func:`calibrate_step` for a weighted point sample (particles)."""
    m = np.asarray(m, dtype=float)
    c = np.asarray(c, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean_u1 = float(np.dot(w, productivity_u1(m, c, params)))
    cal = calibrate_redistribution_sample(m, w, mean_u1, params, previous)
    cal = replace(cal, l4=compute_l4(cal, params))
    return replace(cal, g=float(np.dot(w, wealth_drift(m, c, cal, params))),
                   t_t=float(np.dot(w, tax_paid(m, c, cal, params))))


def redistribution_neutrality(field: PdfField, cal: CalibrationState) -> float:
    """|integral of U2 P dM| relative to mean productivity; zero by the M* identity."""
    m, masses = _field_wealth_sample(field)
    return abs(float(np.dot(redistribution_u2(m, cal), masses))) / max(cal.mean_u1, 1e-300)

"""Confidence intervals for CV_B, M1 and M2 at a single moderator point.

Three families are provided: Wald-type on the logit(M1) = log(CV_B) scale,
alpha-adjusted substitution of component intervals, and PropImp substitution
with a one-dimensional search over how the pivot is split between tau and
|beta_x|. Substitution intervals are computed on the M1 scale; use
``IntervalResult.to`` for CV_B / M2.
"""

from __future__ import annotations

import math

import numpy as np

from . import links
from .errors import UndefinedMeasure
from .measures import CvEstimate, cv_measures
from .model import IntervalResult
from .regression import RegressionFit, abs_bounds, effect_at, effect_bounds
from .tau import z_of

ALPHA_ADJ_LEVEL = 0.8342
PROPIMP_GRID = 201
PROPIMP_TOL = 1e-6
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

METHODS = ("WT", "AlphaAdj", "PropImp")


def golden_section_min(f, a: float, b: float, tol: float = PROPIMP_TOL):
    """Minimise a unimodal ``f`` on [a, b]; returns ``(x, f(x))``."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _ratio_low(t, b):
    # t/(t+b) with t = 0 mapping to 0 even when b = 0
    t = np.asarray(t, float)
    b = np.asarray(b, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(t > 0, t / (t + b), 0.0)


def _ratio_high(t, b):
    # t/(t+b) with b = 0 mapping to 1 (|beta_x| interval touches zero)
    t = np.asarray(t, float)
    b = np.asarray(b, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(b > 0, t / (t + b), 1.0)


def wt_interval(cv_est: CvEstimate, level: float = 0.95) -> IntervalResult:
    """logit(M1) +/- z sqrt(Var[logit M1]); returned on the logit scale."""
    if not 0.0 < cv_est.m1 < 1.0:
        raise UndefinedMeasure(f"Wald-type interval undefined at M1 = {cv_est.m1}")
    centre = float(links.logit(cv_est.m1))
    half = z_of(level) * math.sqrt(cv_est.var_logit_m1)
    return IntervalResult(centre - half, centre + half, "logit_m1", "WT", level)


def alpha_adjusted_interval(
    fit: RegressionFit,
    point,
    level: float = 0.95,
    component_level: float = ALPHA_ADJ_LEVEL,
    tau_kind: str = "qprofile",
) -> IntervalResult:
    """[L_tau/(L_tau + U_|b|), U_tau/(U_tau + L_|b|)] from 83.42% components."""
    eff = effect_at(fit, point)
    c = z_of(component_level)
    t_lo, t_hi = fit.tau_intervals(tau_kind).bound_at(c)
    a_lo, a_hi = abs_bounds(*effect_bounds(eff.beta_x, eff.se, c))
    lo = float(_ratio_low(t_lo, a_hi))
    hi = float(_ratio_high(t_hi, a_lo))
    return IntervalResult(
        lo, hi, "m1", "AlphaAdj", level,
        {"component_level": component_level, "tau": (t_lo, t_hi), "abs_effect": (float(a_lo), float(a_hi))},
    )


def _grid_tau_bounds(fit: RegressionFit, tau_kind: str, z: float, n: int):
    ti = fit.tau_intervals(tau_kind)
    key = ("grid", z, n)
    if key not in ti._cache:
        theta = np.linspace(0.0, math.pi / 2.0, n)
        lo, hi = ti.bounds(z * np.sin(theta))
        ti._cache[key] = (theta, lo, hi)
    return ti._cache[key]


def propimp_interval(
    fit: RegressionFit,
    point,
    level: float = 0.95,
    tau_kind: str = "qprofile",
    grid: int = PROPIMP_GRID,
    tol: float = PROPIMP_TOL,
) -> IntervalResult:
    """PropImp bounds for M1.

    lower = min over theta of L_tau(z sin t) / (L_tau(z sin t) + U_|b|(z cos t)),
    upper = max over theta of U_tau(z sin t) / (U_tau(z sin t) + L_|b|(z cos t)),
    searched on a uniform theta grid and refined by golden section around the
    best grid node.
    """
    z = z_of(level)
    eff = effect_at(fit, point)
    ti = fit.tau_intervals(tau_kind)
    theta, t_lo, t_hi = _grid_tau_bounds(fit, tau_kind, z, grid)
    a_lo, a_hi = abs_bounds(*effect_bounds(eff.beta_x, eff.se, z * np.cos(theta)))
    f_lo = _ratio_low(t_lo, a_hi)
    f_hi = _ratio_high(t_hi, a_lo)

    bx, se = eff.beta_x, eff.se

    def abs_scalar(c):
        lo, hi = bx - c * se, bx + c * se
        if lo <= 0.0 <= hi:
            return 0.0, max(-lo, hi)
        return min(abs(lo), abs(hi)), max(abs(lo), abs(hi))

    def obj_lo(th):
        tl = ti.lower_at(z * math.sin(th))
        ah = abs_scalar(z * math.cos(th))[1]
        return tl / (tl + ah) if tl > 0 else 0.0

    def obj_hi(th):
        tu = ti.upper_at(z * math.sin(th))
        al = abs_scalar(z * math.cos(th))[0]
        return -(tu / (tu + al)) if al > 0 else -1.0

    def refine(values, obj):
        j = int(np.argmin(values))
        best_t, best = theta[j], float(values[j])
        if grid > 2 and tol > 0:
            a = theta[max(j - 1, 0)]
            b = theta[min(j + 1, grid - 1)]
            t, f = golden_section_min(obj, a, b, tol)
            if f < best:
                best_t, best = t, f
        return best_t, best

    th_lo, lo = refine(f_lo, obj_lo)
    th_hi, neg_hi = refine(-f_hi, obj_hi)
    return IntervalResult(
        lo, -neg_hi, "m1", "PropImp", level, {"theta_lower": th_lo, "theta_upper": th_hi}
    )


def point_intervals(
    fit: RegressionFit,
    point,
    methods=METHODS,
    level: float = 0.95,
    tau_kind: str = "qprofile",
) -> dict[str, IntervalResult | None]:
    """All requested intervals at one point; undefined WT intervals map to None."""
    out: dict[str, IntervalResult | None] = {}
    for m in methods:
        if m == "WT":
            est = cv_measures(fit.tau.tau, effect_at(fit, point), fit.tau.var_tau2)
            try:
                out[m] = wt_interval(est, level)
            except UndefinedMeasure:
                out[m] = None
        elif m == "AlphaAdj":
            out[m] = alpha_adjusted_interval(fit, point, level, tau_kind=tau_kind)
        elif m == "PropImp":
            out[m] = propimp_interval(fit, point, level, tau_kind=tau_kind)
        else:
            raise ValueError(f"unknown interval method {m!r}")
    return out

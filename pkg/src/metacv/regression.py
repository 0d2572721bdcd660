"""Random-effects meta-regression by weighted least squares."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tau as tau_mod
from .errors import ValidationError
from .model import (
    Dataset,
    DesignMatrix,
    IntervalResult,
    ModeratorPoint,
    Schema,
    check_rank,
    prediction_row,
)
from .tau import TauEstimate, TauIntervals


@dataclass(frozen=True, eq=False)
class RegressionFit:
    beta: np.ndarray
    cov_beta: np.ndarray
    tau: TauEstimate
    weights: np.ndarray  # unscaled 1/(v_i + tau^2)
    y: np.ndarray
    v: np.ndarray
    X: np.ndarray
    labels: tuple[str, ...]
    schema: Schema
    _tau_intervals: dict = field(default_factory=dict, repr=False)

    @property
    def scaled_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    @property
    def k(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def fitted(self) -> np.ndarray:
        return self.X @ self.beta

    def tau_intervals(self, kind: str = "qprofile", profile=None) -> TauIntervals:
        """Pivot-indexed tau interval builder, cached per fit.

        ``profile`` lets fits of the same data share Q-profile solutions.
        """
        if kind not in self._tau_intervals:
            self._tau_intervals[kind] = TauIntervals(self.y, self.v, self.X, self.tau, kind, profile)
        return self._tau_intervals[kind]


@dataclass(frozen=True)
class EffectAtPoint:
    beta_x: float
    var_beta_x: float
    point: ModeratorPoint | None = None

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var_beta_x))


def fit_arrays(y, v, X, tau_method="DL", labels=(), schema=()) -> RegressionFit:
    """Fit from raw arrays; ``tau_method`` is 'DL', 'REML', a TauEstimate or a fixed tau^2."""
    y = np.asarray(y, float)
    v = np.asarray(v, float)
    X = np.asarray(X, float)
    if isinstance(tau_method, TauEstimate):
        est = tau_method
    elif isinstance(tau_method, str):
        m = tau_method.upper()
        if m == "DL":
            t2, q = tau_mod.dl_tau2(y, v, X)
            est = TauEstimate(t2, "DL", tau_mod.var_tau2_arrays(v, X, t2), X.shape[0] - X.shape[1], q)
        elif m == "REML":
            t2, ok, its = tau_mod.reml_tau2(y, v, X)
            est = TauEstimate(
                t2, "REML", tau_mod.var_tau2_arrays(v, X, t2), X.shape[0] - X.shape[1], None, ok, its
            )
        else:
            raise ValidationError(f"unknown tau^2 estimator {tau_method!r}")
    else:
        t2 = float(tau_method)
        if t2 < 0:
            raise ValidationError("fixed tau2 must be nonnegative")
        df = X.shape[0] - X.shape[1]
        var = tau_mod.var_tau2_arrays(v, X, t2) if df > 0 else float("nan")
        est = TauEstimate(t2, "fixed", var, df)
    w = 1.0 / (v + est.tau2)
    beta, cov = tau_mod.wls(y, w, X)
    cov = (cov + cov.T) / 2.0
    return RegressionFit(beta, cov, est, w, y, v, X, tuple(labels), tuple(schema))


def fit(dataset: Dataset, design: DesignMatrix, tau_method="DL") -> RegressionFit:
    """Estimate tau^2 first, then beta = (X'WX)^-1 X'WY with W = diag(1/(v+tau^2))."""
    if design.k != dataset.k:
        raise ValidationError("design matrix and dataset sizes differ")
    check_rank(design.values, design.labels)
    return fit_arrays(
        dataset.effects, dataset.variances, design.values, tau_method, design.labels, design.schema
    )


def effect_at(fit: RegressionFit, point: ModeratorPoint | np.ndarray) -> EffectAtPoint:
    if isinstance(point, ModeratorPoint):
        r = prediction_row(point, fit.schema)
    else:
        r = np.asarray(point, float)
        point = None
    if r.shape != fit.beta.shape:
        raise ValidationError(f"prediction row has length {r.size}, expected {fit.p}")
    var = float(r @ fit.cov_beta @ r)
    return EffectAtPoint(float(r @ fit.beta), max(var, 0.0), point)


def effect_bounds(beta_x: float, se: float, c):
    """Effect-scale Wald bounds at pivot ``c`` (scalar or array)."""
    c = np.asarray(c, float)
    return beta_x - c * se, beta_x + c * se


def abs_bounds(lo, hi):
    """Interval for |effect| from an interval for the effect (vectorised)."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    alo, ahi = np.abs(lo), np.abs(hi)
    straddle = (lo <= 0) & (hi >= 0)
    return np.where(straddle, 0.0, np.minimum(alo, ahi)), np.maximum(alo, ahi)


def ci_beta_x(fit: RegressionFit, point, level: float = 0.95) -> IntervalResult:
    eff = effect_at(fit, point)
    lo, hi = effect_bounds(eff.beta_x, eff.se, tau_mod.z_of(level))
    return IntervalResult(float(lo), float(hi), "effect", "Wald", level)


def abs_interval(ci: IntervalResult) -> IntervalResult:
    lo, hi = abs_bounds(ci.lower, ci.upper)
    return replace(ci, lower=float(lo), upper=float(hi), scale="abs_effect")

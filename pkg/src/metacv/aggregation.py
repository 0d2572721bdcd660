"""Averages of CV_B over a grid of moderator points.

Three summaries are supported: ``waLCV`` (weighted average of log CV_B),
``GM`` (geometric mean, exp of the equally weighted waLCV) and ``waCV``
(weighted average of CV_B). Their variances are quadratic forms in
first-order variance-covariance matrices of the per-point estimators, which
are dependent through the shared tau^2 and beta estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NonEqualWeightsForGM, ValidationError, ZeroEffect, ZeroTau
from .measures import CvEstimate, cv_measures
from .model import Dataset, IntervalResult, ModeratorPoint, WeightPolicy, prediction_row
from .regression import RegressionFit, effect_at
from .tau import z_of

KINDS = ("waLCV", "GM", "waCV")


@dataclass(frozen=True, eq=False)
class ModeratorGrid:
    points: tuple[ModeratorPoint, ...]
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        w = np.asarray(self.weights, float)
        object.__setattr__(self, "weights", w)
        if not self.points:
            raise ValidationError("grid needs at least one point")
        if w.shape != (len(self.points),):
            raise ValidationError(f"{w.size} weights for {len(self.points)} points")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("grid weights must be nonnegative and sum to 1")

    @classmethod
    def from_policy(
        cls,
        points: Sequence[ModeratorPoint],
        policy: WeightPolicy | str = "equal",
        dataset: Dataset | None = None,
    ) -> "ModeratorGrid":
        if isinstance(policy, str):
            policy = WeightPolicy(policy)
        points = tuple(points)
        return cls(points, policy.resolve(points, dataset))

    @property
    def r(self) -> int:
        return len(self.points)

    @property
    def equal_weights(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.r) <= 1e-12))

    def rows(self, schema) -> np.ndarray:
        return np.array([prediction_row(p, schema) for p in self.points])


def observed_points(dataset: Dataset) -> list[ModeratorPoint]:
    """Distinct observed moderator vectors, sorted; factor grids list levels in schema order."""
    if len(dataset.schema) == 1 and dataset.schema[0].is_factor:
        return [ModeratorPoint.of(l) for l in dataset.schema[0].levels]
    seen = sorted({tuple(s.moderators) for s in dataset.studies}, key=_sort_key)
    return [ModeratorPoint(v) for v in seen]


def _sort_key(values):
    return tuple((0, v, "") if isinstance(v, float) else (1, 0.0, str(v)) for v in values)


def linspace_points(lo: float, hi: float, n: int) -> list[ModeratorPoint]:
    return [ModeratorPoint.of(float(x)) for x in np.linspace(lo, hi, n)]


@dataclass(frozen=True, eq=False)
class AggregateResult:
    kind: str
    value: float
    variance: float
    ci: IntervalResult
    per_point: tuple[CvEstimate, ...]
    vcov: np.ndarray
    weights: np.ndarray


def _grid_effects(fit: RegressionFit, grid: ModeratorGrid):
    R = grid.rows(fit.schema)
    b = R @ fit.beta
    S = R @ fit.cov_beta @ R.T
    if np.any(b == 0):
        raise ZeroEffect("an estimated effect on the grid is exactly zero")
    if fit.tau.tau2 <= 0:
        raise ZeroTau("tau^2 estimate is zero; log CV_B is undefined")
    return b, (S + S.T) / 2.0


def vcov_log_cv(fit: RegressionFit, grid: ModeratorGrid) -> np.ndarray:
    """First-order covariance of the r log CV_B estimators.

    (i, j) entry: Var(tau2)/(4 tau^4) + sign(b_i) sign(b_j) Cov(b_i, b_j) / (|b_i| |b_j|).
    """
    b, S = _grid_effects(fit, grid)
    t2 = fit.tau.tau2
    inv = 1.0 / b  # sign(b)/|b|
    return fit.tau.var_tau2 / (4.0 * t2 * t2) + np.outer(inv, inv) * S


def vcov_cv(fit: RegressionFit, grid: ModeratorGrid) -> np.ndarray:
    """First-order covariance of the r CV_B estimators.

    (i, j) entry: Var(tau2)/(4 tau^2 |b_i| |b_j|)
                  + tau^2 sign(b_i) sign(b_j) Cov(b_i, b_j) / (b_i^2 b_j^2).
    """
    b, S = _grid_effects(fit, grid)
    t2 = fit.tau.tau2
    ia = 1.0 / np.abs(b)
    sq = np.sign(b) / (b * b)
    return fit.tau.var_tau2 / (4.0 * t2) * np.outer(ia, ia) + t2 * np.outer(sq, sq) * S


def aggregate(
    fit: RegressionFit, grid: ModeratorGrid, kind: str = "waCV", level: float = 0.95
) -> AggregateResult:
    """Grid summary with its Wald interval.

    waLCV: w'log(cv) +/- z sqrt(w'V_log w); GM: exp of the waLCV bounds;
    waCV: w'cv +/- z sqrt(w'V_cv w) with the lower bound truncated at 0.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown aggregate {kind!r}; choose from {KINDS}")
    if kind == "GM" and not grid.equal_weights:
        raise NonEqualWeightsForGM("the geometric mean requires equal weights")
    w = grid.weights
    per_point = tuple(
        cv_measures(fit.tau.tau, effect_at(fit, p), fit.tau.var_tau2) for p in grid.points
    )
    cvs = np.array([c.cv_b for c in per_point])
    z = z_of(level)
    if kind in ("waLCV", "GM"):
        V = vcov_log_cv(fit, grid)
        centre = float(w @ np.log(cvs))
        var = max(float(w @ V @ w), 0.0)
        lo, hi = centre - z * math.sqrt(var), centre + z * math.sqrt(var)
        if kind == "waLCV":
            return AggregateResult(
                kind, centre, var, IntervalResult(lo, hi, "log_cv", "WaldMean", level), per_point, V, w
            )
        ci = IntervalResult(math.exp(lo), math.exp(hi), "cv_b", "WaldMean", level)
        return AggregateResult(kind, math.exp(centre), var, ci, per_point, V, w)
    V = vcov_cv(fit, grid)
    centre = float(w @ cvs)
    var = max(float(w @ V @ w), 0.0)
    half = z * math.sqrt(var)
    ci = IntervalResult(max(centre - half, 0.0), centre + half, "cv_b", "WaldMean", level)
    return AggregateResult(kind, centre, var, ci, per_point, V, w)


def true_aggregate(beta, tau2: float, rows: np.ndarray, weights: np.ndarray, kind: str) -> float:
    """The estimand of :func:`aggregate` evaluated at known parameters."""
    cv = math.sqrt(tau2) / np.abs(rows @ np.asarray(beta, float))
    if kind == "waCV":
        return float(weights @ cv)
    with np.errstate(divide="ignore"):
        lv = float(weights @ np.log(cv))
    return lv if kind == "waLCV" else math.exp(lv)

"""Point estimates of I^2, CV_B, M1 and M2."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, UndefinedMeasure, ValidationError
from .regression import EffectAtPoint


@dataclass(frozen=True)
class CvEstimate:
    cv_b: float
    m1: float
    m2: float
    tau: float
    effect: EffectAtPoint
    var_logit_m1: float

    @property
    def log_cv(self) -> float:
        return math.log(self.cv_b) if 0 < self.cv_b < math.inf else (
            math.inf if self.cv_b == math.inf else -math.inf
        )


def typical_within_variance(variances) -> float:
    """(k-1) S1 / (S1^2 - S2) with S_j = sum (1/v_i)^j."""
    w = 1.0 / np.asarray(variances, float)
    k = w.size
    s1, s2 = w.sum(), np.sum(w * w)
    denom = s1 * s1 - s2
    if k < 2 or denom <= 0:
        raise DegenerateVariance("typical within-study variance needs k >= 2 distinct weights")
    return float((k - 1) * s1 / denom)


def i_squared(tau2: float, variances) -> float:
    if tau2 < 0:
        raise ValidationError("tau2 must be nonnegative")
    s2 = typical_within_variance(variances)
    return float(tau2 / (tau2 + s2))


def cv_measures(tau: float, effect: EffectAtPoint, var_tau2: float) -> CvEstimate:
    """CV_B = tau/|beta_x| with its bounded transforms and logit-scale variance.

    Var[logit M1] = Var(tau2)/(4 tau^4) + Var(beta_x)/beta_x^2, evaluated at the
    estimates; it is infinite when tau or beta_x is zero.
    """
    if tau < 0:
        raise ValidationError("tau must be nonnegative")
    b = abs(effect.beta_x)
    if tau == 0 and b == 0:
        raise UndefinedMeasure("CV_B is 0/0: tau and beta_x are both zero")
    if b == 0:
        cv, m1, m2 = math.inf, 1.0, 1.0
    else:
        cv = tau / b
        m1 = tau / (tau + b)
        m2 = tau * tau / (tau * tau + b * b)
    if tau == 0 or b == 0:
        var_logit = math.inf
    else:
        var_logit = var_tau2 / (4.0 * tau**4) + effect.var_beta_x / (b * b)
    return CvEstimate(cv, m1, m2, tau, effect, var_logit)

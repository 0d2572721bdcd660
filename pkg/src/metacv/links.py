"""Monotone maps between the CV_B, M1, M2, log and logit scales.

All functions accept scalars or arrays and handle the boundary values
(CV_B = 0 or infinity, M = 0 or 1) without warnings.
"""

import numpy as np

MEASURE_SCALES = ("cv_b", "m1", "m2", "log_cv", "logit_m1")


def _arr(x):
    return np.asarray(x, dtype=float)


def logit(p):
    p = _arr(p)
    with np.errstate(divide="ignore"):
        return np.log(p) - np.log1p(-p)


def expit(x):
    x = _arr(x)
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def cv_to_m1(cv):
    cv = _arr(cv)
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(cv), 1.0, cv / (1.0 + cv))


def cv_to_m2(cv):
    cv = _arr(cv)
    with np.errstate(invalid="ignore", over="ignore"):
        return np.where(np.isinf(cv), 1.0, cv**2 / (1.0 + cv**2))


def m1_to_cv(m1):
    m1 = _arr(m1)
    with np.errstate(divide="ignore"):
        return np.where(m1 >= 1.0, np.inf, m1 / (1.0 - m1))


def m2_to_cv(m2):
    m2 = _arr(m2)
    with np.errstate(divide="ignore"):
        return np.where(m2 >= 1.0, np.inf, np.sqrt(m2 / (1.0 - m2)))


def to_cv(value, scale):
    """Map ``value`` given on ``scale`` to the CV_B scale."""
    if scale == "cv_b":
        return _arr(value)
    if scale == "m1":
        return m1_to_cv(value)
    if scale == "m2":
        return m2_to_cv(value)
    if scale in ("log_cv", "logit_m1"):
        with np.errstate(over="ignore"):
            return np.exp(_arr(value))
    raise ValueError(f"not a measure scale: {scale!r}")


def from_cv(cv, scale):
    """Map a CV_B value to ``scale``."""
    if scale == "cv_b":
        return _arr(cv)
    if scale == "m1":
        return cv_to_m1(cv)
    if scale == "m2":
        return cv_to_m2(cv)
    if scale in ("log_cv", "logit_m1"):
        with np.errstate(divide="ignore"):
            return np.log(_arr(cv))
    raise ValueError(f"not a measure scale: {scale!r}")


def convert(value, src, dst):
    """Convert between two measure scales.

    log_cv -> logit_m1 and logit -> m1 go through closed forms so that the
    round trip is exact to rounding error.
    """
    if src == dst:
        return _arr(value)
    if src in ("log_cv", "logit_m1") and dst in ("log_cv", "logit_m1"):
        return _arr(value)
    if src in ("log_cv", "logit_m1") and dst == "m1":
        return expit(value)
    if src in ("log_cv", "logit_m1") and dst == "m2":
        return expit(2.0 * _arr(value))
    if src == "m1" and dst in ("log_cv", "logit_m1"):
        return logit(value)
    return from_cv(to_cv(value, src), dst)

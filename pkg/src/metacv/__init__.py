"""Relative heterogeneity measures for random-effects meta-regression."""

from .aggregation import AggregateResult, ModeratorGrid, aggregate, vcov_cv, vcov_log_cv
from .datasets import load_dataset
from .intervals import alpha_adjusted_interval, propimp_interval, wt_interval
from .measures import CvEstimate, cv_measures, i_squared
from .model import (
    Dataset,
    DesignMatrix,
    IntervalResult,
    Moderator,
    ModeratorPoint,
    StudyRecord,
    WeightPolicy,
    build_design_matrix,
    prediction_row,
)
from .regression import EffectAtPoint, RegressionFit, abs_interval, ci_beta_x, effect_at, fit
from .tau import TauEstimate, ci_tau, estimate_dl, estimate_reml, q_statistic, var_tau2

__version__ = "0.1.0"

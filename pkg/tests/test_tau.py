import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from metacv.errors import InsufficientDf, ValidationError
from metacv.model import Dataset, build_design_matrix
from metacv.tau import (
    QProfile,
    TauEstimate,
    TauIntervals,
    ci_tau,
    dl_tau2,
    estimate,
    estimate_dl,
    estimate_reml,
    q_statistic,
    var_tau2,
)

from conftest import random_dataset


def _intercept_only(y, v):
    data = Dataset.from_arrays(y, v)
    return data, build_design_matrix(data)


def test_dl_hand_case_q_below_df_truncates_to_zero():
    # k = 3, v = 1, intercept only: Q = sum (y - ybar)^2 = 2, df = 2
    data, design = _intercept_only([-1.0, 0.0, 1.0], [1.0, 1.0, 1.0])
    est = estimate_dl(data, design)
    assert est.q_statistic == pytest.approx(2.0, abs=1e-12)
    assert est.tau2 == 0.0


def test_dl_hand_case_q_eight():
    # Q = 8, tr(P0) = 3 - 1 = 2  ->  tau2 = (8 - 2) / 2 = 3
    data, design = _intercept_only([-2.0, 0.0, 2.0], [1.0, 1.0, 1.0])
    est = estimate_dl(data, design)
    assert est.q_statistic == pytest.approx(8.0, abs=1e-12)
    assert est.tau2 == pytest.approx(3.0, abs=1e-12)


def test_bcg_dl_values(bcg_ablat):
    design = build_design_matrix(bcg_ablat)
    est = estimate_dl(bcg_ablat, design)
    assert est.tau2 == pytest.approx(0.063, abs=5e-4)
    assert q_statistic(bcg_ablat, design) == pytest.approx(30.733, abs=5e-4)


def _reml_grid_oracle(y, v, X):
    """Restricted log-likelihood written from the full P matrix, maximised on nested grids."""

    def ll(t):
        W = np.diag(1.0 / (v + t))
        A = X.T @ W @ X
        P = W - W @ X @ np.linalg.inv(A) @ X.T @ W
        return -0.5 * (np.sum(np.log(v + t)) + np.log(np.linalg.det(A)) + y @ P @ y)

    lo, hi = 0.0, 10.0 * max(np.var(y), 1e-3)
    for _ in range(12):
        grid = np.linspace(lo, hi, 201)
        vals = np.array([ll(t) for t in grid])
        j = int(np.argmax(vals))
        lo, hi = grid[max(j - 2, 0)], grid[min(j + 2, 200)]
    return grid[j]


@pytest.mark.parametrize("seed", range(6))
def test_reml_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, k=[6, 10, 13, 20, 30, 8][seed], tau2=[0.0, 0.02, 0.05, 0.2, 0.1, 0.5][seed])
    design = build_design_matrix(data)
    est = estimate_reml(data, design)
    oracle = _reml_grid_oracle(data.effects, data.variances, design.values)
    assert est.converged
    assert est.tau2 == pytest.approx(oracle, abs=1e-5)


def test_reml_on_bundled_data(bcg):
    for mods in (("ablat",), ("allocation",), ("ablat", "allocation")):
        data = bcg.select(*mods)
        design = build_design_matrix(data)
        est = estimate_reml(data, design)
        oracle = _reml_grid_oracle(data.effects, data.variances, design.values)
        assert est.tau2 == pytest.approx(oracle, abs=1e-5)


def test_var_tau2_closed_form_equal_variances():
    # intercept only with common v: tr(P^2) = (k - 1) / (v + t)^2
    k, v, t = 9, 0.3, 0.7
    data, design = _intercept_only(np.linspace(-1, 1, k), np.full(k, v))
    assert var_tau2(data, design, t) == pytest.approx(2 * (v + t) ** 2 / (k - 1), rel=1e-12)


def test_insufficient_df():
    data = Dataset.from_arrays([0.1, 0.2], [1.0, 1.0], {"x": [0.0, 1.0]})
    with pytest.raises(InsufficientDf):
        estimate_dl(data, build_design_matrix(data))


def test_unknown_estimator(bcg_ablat):
    with pytest.raises(ValidationError):
        estimate(bcg_ablat, build_design_matrix(bcg_ablat), "PM")


def test_qprofile_closed_form_equal_variances():
    # intercept only, common v: Q(t) = SS / (v + t), so the bound solving
    # Q(t) = chi2 quantile is SS / quantile - v
    rng = np.random.default_rng(3)
    k, v = 12, 0.05
    y = rng.normal(0.0, 0.6, size=k)
    data, design = _intercept_only(y, np.full(k, v))
    ss = np.sum((y - y.mean()) ** 2)
    est = estimate_dl(data, design)
    ci = ci_tau(data, design, est, 0.95)
    lo2 = max(ss / stats.chi2.ppf(0.975, k - 1) - v, 0.0)
    hi2 = ss / stats.chi2.ppf(0.025, k - 1) - v
    assert ci.lower == pytest.approx(math.sqrt(min(lo2, est.tau2)), rel=1e-9)
    assert ci.upper == pytest.approx(math.sqrt(hi2), rel=1e-9)


def test_qprofile_is_decreasing_with_correct_slope(bcg_ablat):
    design = build_design_matrix(bcg_ablat)
    qp = QProfile(bcg_ablat.effects, bcg_ablat.variances, design.values)
    t = np.linspace(0.0, 2.0, 50)
    q, dq = qp.q(t)
    assert np.all(np.diff(q) < 0)
    h = 1e-6
    num = (qp.q(t + h)[0] - qp.q(t - h + 2 * h * (t == 0))[0]) / np.where(t == 0, h, 2 * h)
    assert_allclose(dq[1:], num[1:], rtol=1e-5)
    assert q[0] == pytest.approx(30.733, abs=5e-4)


def test_scalar_and_vector_solves_agree(bcg_ablat):
    design = build_design_matrix(bcg_ablat)
    qp = QProfile(bcg_ablat.effects, bcg_ablat.variances, design.values)
    targets = np.array([5.0, 11.0, 20.0, 29.0, 40.0])
    vec = qp.solve(targets)
    sc = [qp.solve_scalar(t) for t in targets]
    assert_allclose(vec, sc, rtol=1e-9, atol=1e-14)
    assert vec[-1] == 0.0
    assert_allclose(qp.q(vec[:-1])[0], targets[:-1], rtol=1e-9)


@pytest.mark.parametrize("kind", ["qprofile", "wald"])
def test_tau_intervals_nested_and_centred(bcg_ablat, kind):
    design = build_design_matrix(bcg_ablat)
    est = estimate_dl(bcg_ablat, design)
    ti = TauIntervals(bcg_ablat.effects, bcg_ablat.variances, design.values, est, kind)
    c = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    lo, hi = ti.bounds(c)
    assert lo[0] == pytest.approx(est.tau) and hi[0] == pytest.approx(est.tau)
    assert np.all(np.diff(lo) <= 1e-12) and np.all(np.diff(hi) >= -1e-12)
    for ci, l, h in zip(c, lo, hi):
        assert ti.lower_at(ci) == pytest.approx(l, rel=1e-9, abs=1e-12)
        assert ti.upper_at(ci) == pytest.approx(h, rel=1e-9)
    with pytest.raises(ValidationError):
        ti.bounds(-1.0)


def test_wald_tau_interval_formula(bcg_ablat):
    design = build_design_matrix(bcg_ablat)
    est = estimate_dl(bcg_ablat, design)
    ci = ci_tau(bcg_ablat, design, est, 0.95, kind="wald")
    half = 1.959963984540054 * math.sqrt(est.var_tau2)
    assert ci.upper == pytest.approx(math.sqrt(est.tau2 + half))
    assert ci.lower == pytest.approx(math.sqrt(max(est.tau2 - half, 0.0)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_estimators_scale_equivariant(seed, c):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, k=10, tau2=0.1)
    scaled = Dataset.from_arrays(c * data.effects, c * c * data.variances, {"x": data.column("x")})
    for method in ("DL", "REML"):
        a = estimate(data, build_design_matrix(data), method)
        b = estimate(scaled, build_design_matrix(scaled), method)
        assert b.tau2 == pytest.approx(c * c * a.tau2, rel=1e-6, abs=1e-10)


def test_fixed_tau_estimate_property():
    est = TauEstimate(0.25, "fixed", 0.01, 5)
    assert est.tau == 0.5

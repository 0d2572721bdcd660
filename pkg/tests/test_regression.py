import numpy as np
import pytest
from numpy.testing import assert_allclose

from metacv.model import ModeratorPoint, build_design_matrix, prediction_row
from metacv.regression import abs_bounds, abs_interval, ci_beta_x, effect_at, fit, fit_arrays
from metacv.tau import wls

from conftest import random_dataset


def test_bcg_coefficients(bcg_fit):
    assert bcg_fit.beta[0] == pytest.approx(0.260, abs=5e-4)
    assert bcg_fit.beta[1] == pytest.approx(-0.029, abs=5e-4)


def test_wls_matches_lstsq_and_normal_equations():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(15), rng.normal(size=15), rng.normal(size=15)])
    y = rng.normal(size=15)
    w = rng.uniform(0.5, 3.0, size=15)
    beta, cov = wls(y, w, X)
    sw = np.sqrt(w)
    ref = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
    assert_allclose(beta, ref, rtol=1e-12)
    assert_allclose(cov, np.linalg.inv(X.T @ np.diag(w) @ X), rtol=1e-10)


def test_weighted_residuals_orthogonal_to_design(bcg_fit):
    e = bcg_fit.y - bcg_fit.fitted
    assert_allclose(bcg_fit.X.T @ (bcg_fit.weights * e), 0.0, atol=1e-10)


def test_effect_at_is_linear_combination(bcg_fit):
    p = ModeratorPoint.of(42.0)
    r = prediction_row(p, bcg_fit.schema)
    eff = effect_at(bcg_fit, p)
    assert eff.beta_x == pytest.approx(r @ bcg_fit.beta)
    assert eff.var_beta_x == pytest.approx(r @ bcg_fit.cov_beta @ r)
    assert effect_at(bcg_fit, r).beta_x == eff.beta_x


def test_fixed_tau2_fit(bcg_ablat):
    design = build_design_matrix(bcg_ablat)
    f = fit_arrays(bcg_ablat.effects, bcg_ablat.variances, design.values, 0.0)
    assert_allclose(f.weights, 1.0 / bcg_ablat.variances)
    assert f.tau.tau2 == 0.0


def test_abs_bounds_cases():
    lo, hi = abs_bounds(np.array([-3.0, 1.0, -1.0]), np.array([-1.0, 3.0, 2.0]))
    assert_allclose(lo, [1.0, 1.0, 0.0])
    assert_allclose(hi, [3.0, 3.0, 2.0])


def test_abs_interval_from_effect_interval(bcg_fit):
    ci = ci_beta_x(bcg_fit, ModeratorPoint.of(13.0))
    a = abs_interval(ci)
    assert ci.lower < 0 < ci.upper
    assert a.lower == 0.0 and a.upper == pytest.approx(max(-ci.lower, ci.upper))
    assert a.scale == "abs_effect"


def test_reml_fit_uses_reml_weights(bcg_ablat):
    f = fit(bcg_ablat, build_design_matrix(bcg_ablat), "REML")
    assert f.tau.method == "REML"
    assert_allclose(f.weights, 1.0 / (bcg_ablat.variances + f.tau.tau2))


@pytest.mark.slow
def test_effect_interval_covers_at_nominal_rate_with_known_tau():
    # with tau^2 known the Wald interval for beta_x is exact
    rng = np.random.default_rng(11)
    base = random_dataset(rng, k=12)
    design = build_design_matrix(base)
    X, v = design.values, base.variances
    beta, tau2 = np.array([0.5, -0.8]), 0.05
    r = np.array([1.0, 0.4])
    hits = 0
    n = 4000
    for _ in range(n):
        y = X @ beta + rng.normal(0.0, np.sqrt(tau2 + v))
        f = fit_arrays(y, v, X, tau2)
        ci = ci_beta_x(f, r)
        hits += ci.contains(float(r @ beta))
    cover = hits / n
    assert abs(cover - 0.95) < 4 * np.sqrt(0.95 * 0.05 / n)

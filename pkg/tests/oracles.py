"""Independent reference computations shared by unit and acceptance tests."""

import numpy as np

from conftest import random_dataset
from metacv.aggregation import ModeratorGrid, linspace_points
from metacv.model import build_design_matrix
from metacv.regression import fit


def propagation_oracle(f, rows, n=200_000, eps=1e-4, seed=0):
    """First-order covariance of (log CV_B, CV_B) on ``rows`` by Monte Carlo.

    Small Gaussian perturbations of (tau^2, beta) with covariance
    eps^2 * blockdiag(Var(tau^2), Cov(beta)) are pushed through the exact CV map;
    the sample covariance divided by eps^2 is the delta-method covariance up to
    O(eps). Draws are moment matched (whitened to an exact identity sample
    covariance) so sampling noise does not swamp entries close to zero.
    """
    rng = np.random.default_rng(seed)
    p = len(f.beta)
    S = np.zeros((p + 1, p + 1))
    S[0, 0] = f.tau.var_tau2
    S[1:, 1:] = f.cov_beta
    z = rng.standard_normal((n, p + 1))
    z -= z.mean(axis=0)
    z = z @ np.linalg.inv(np.linalg.cholesky(np.cov(z, rowvar=False))).T
    d = eps * (z @ np.linalg.cholesky(S).T)
    t2 = f.tau.tau2 + d[:, 0]
    b = (f.beta + d[:, 1:]) @ rows.T
    cv = np.sqrt(t2)[:, None] / np.abs(b)
    return np.cov(np.log(cv), rowvar=False) / eps**2, np.cov(cv, rowvar=False) / eps**2


def random_fits(count=20, seed=100):
    """``count`` DL fits with k alternating 6 and 10, p = 2 and positive tau^2."""
    out = []
    s = seed
    while len(out) < count:
        rng = np.random.default_rng(s)
        s += 1
        data = random_dataset(rng, [6, 10][len(out) % 2], beta=(1.0, -0.8), tau2=0.3)
        f = fit(data, build_design_matrix(data))
        if f.tau.tau2 > 0:
            out.append(f)
    return out


def default_grid():
    return ModeratorGrid.from_policy(linspace_points(0.0, 1.0, 5))

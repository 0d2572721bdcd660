"""Between-study variance: DL and REML estimators, Var(tau^2) and tau intervals.

The array-level helpers (``fe_fit``, ``dl_tau2``, ``reml_tau2`` ...) take
``(y, v, X)`` directly and are what the simulation engine calls in its inner
loop; the dataset-level functions wrap them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import InsufficientDf, ValidationError
from .model import Dataset, DesignMatrix, IntervalResult

REML_TOL = 1e-10
REML_MAXITER = 100


class NonConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TauEstimate:
    tau2: float
    method: str
    var_tau2: float
    df: int
    q_statistic: float | None = None
    converged: bool = True
    iterations: int = 0

    @property
    def tau(self) -> float:
        return float(np.sqrt(self.tau2))


def _check_df(k: int, p: int) -> int:
    df = k - p
    if df < 1:
        raise InsufficientDf(f"k={k} studies with p={p} columns leaves no residual df")
    return df


def wls(y: np.ndarray, w: np.ndarray, X: np.ndarray):
    """Weighted least squares through a QR factorisation of sqrt(W) X.

    Returns ``(beta, cov)`` with ``cov = (X'WX)^-1``.
    """
    sw = np.sqrt(w)
    q, r = np.linalg.qr(X * sw[:, None])
    beta = np.linalg.solve(r, q.T @ (y * sw))
    rinv = np.linalg.solve(r, np.eye(r.shape[0]))
    return beta, rinv @ rinv.T


def projection(w: np.ndarray, X: np.ndarray) -> np.ndarray:
    """P = W - W X (X'WX)^-1 X'W."""
    sw = np.sqrt(w)
    q, _ = np.linalg.qr(X * sw[:, None])
    m = np.eye(len(w)) - q @ q.T
    return sw[:, None] * m * sw[None, :]


def q_fe(y, v, X) -> float:
    w = 1.0 / v
    beta, _ = wls(y, w, X)
    e = y - X @ beta
    return float(np.sum(w * e * e))


def dl_tau2(y, v, X) -> tuple[float, float]:
    """Method-of-moments estimate; returns ``(tau2, Q)``."""
    df = _check_df(*X.shape)
    w = 1.0 / v
    P0 = projection(w, X)
    q = float(y @ P0 @ y)
    denom = float(np.trace(P0))
    return max(0.0, (q - df) / denom), q


def restricted_loglik(tau2: float, y, v, X) -> float:
    """Restricted log-likelihood up to an additive constant."""
    w = 1.0 / (v + tau2)
    A = (X.T * w) @ X
    beta = np.linalg.solve(A, X.T @ (w * y))
    e = y - X @ beta
    _, logdet = np.linalg.slogdet(A)
    return -0.5 * (np.sum(np.log(v + tau2)) + logdet + np.sum(w * e * e))


def reml_tau2(y, v, X, start: float | None = None) -> tuple[float, bool, int]:
    """Fisher scoring with step halving; returns ``(tau2, converged, iterations)``."""
    _check_df(*X.shape)
    t = dl_tau2(y, v, X)[0] if start is None else max(0.0, start)
    ll = restricted_loglik(t, y, v, X)
    for it in range(1, REML_MAXITER + 1):
        w = 1.0 / (v + t)
        P = projection(w, X)
        Py = P @ y
        score = 0.5 * (Py @ Py - np.trace(P))
        info = 0.5 * np.sum(P * P)
        step = score / info
        new = max(0.0, t + step)
        new_ll = restricted_loglik(new, y, v, X)
        halvings = 0
        while new_ll < ll - 1e-12 * abs(ll) and halvings < 30:
            step /= 2.0
            new = max(0.0, t + step)
            new_ll = restricted_loglik(new, y, v, X)
            halvings += 1
        delta = abs(new - t)
        t, ll = new, new_ll
        if delta < REML_TOL:
            return t, True, it
    return t, False, REML_MAXITER


def var_tau2_arrays(v, X, tau2: float) -> float:
    """Inverse Fisher information of the restricted likelihood, 2 / tr(P P)."""
    P = projection(1.0 / (v + tau2), X)
    return float(2.0 / np.sum(P * P))


def _arrays(dataset: Dataset, design: DesignMatrix):
    if design.k != dataset.k:
        raise ValidationError("design matrix and dataset sizes differ")
    return dataset.effects, dataset.variances, design.values


def q_statistic(dataset: Dataset, design: DesignMatrix) -> float:
    """Weighted residual sum of squares of the fixed-effect fit."""
    return q_fe(*_arrays(dataset, design))


def estimate_dl(dataset: Dataset, design: DesignMatrix) -> TauEstimate:
    y, v, X = _arrays(dataset, design)
    tau2, q = dl_tau2(y, v, X)
    return TauEstimate(tau2, "DL", var_tau2_arrays(v, X, tau2), X.shape[0] - X.shape[1], q)


def estimate_reml(dataset: Dataset, design: DesignMatrix) -> TauEstimate:
    y, v, X = _arrays(dataset, design)
    tau2, ok, its = reml_tau2(y, v, X)
    if not ok:
        warnings.warn(
            f"REML did not converge in {REML_MAXITER} iterations; returning last iterate",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return TauEstimate(
        tau2, "REML", var_tau2_arrays(v, X, tau2), X.shape[0] - X.shape[1], None, ok, its
    )


ESTIMATORS = {"DL": estimate_dl, "REML": estimate_reml}


def estimate(dataset: Dataset, design: DesignMatrix, method: str = "DL") -> TauEstimate:
    try:
        return ESTIMATORS[method.upper()](dataset, design)
    except KeyError:
        raise ValidationError(f"unknown tau^2 estimator {method!r}") from None


def var_tau2(dataset: Dataset, design: DesignMatrix, tau2: float) -> float:
    if tau2 < 0:
        raise ValidationError("tau2 must be nonnegative")
    _, v, X = _arrays(dataset, design)
    return var_tau2_arrays(v, X, tau2)


class QProfile:
    """Generalised Q statistic Q(t) = y'P(t)y and its inversion.

    Q is strictly decreasing in t, so each chi-square target has at most one
    root; targets at or above Q(0) map to 0. Solutions are cached by pivot
    because they do not depend on which tau^2 estimator was used.
    """

    def __init__(self, y, v, X):
        self.y = np.asarray(y, float)
        self.v = np.asarray(v, float)
        self.X = np.asarray(X, float)
        self.df = _check_df(*self.X.shape)
        self.q0 = self.q_scalar(0.0)[0]
        self.lower_cache: dict[float, float] = {}
        self.upper_cache: dict[float, float] = {}
        self.grid: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    def q(self, t):
        """Return ``(Q(t), dQ/dt)`` for 1-d ``t``."""
        t = np.atleast_1d(np.asarray(t, float))
        w = 1.0 / (self.v[None, :] + t[:, None])
        A = np.einsum("mk,ki,kj->mij", w, self.X, self.X)
        g = (w * self.y) @ self.X
        b = np.linalg.solve(A, g[..., None])[..., 0]
        e = self.y[None, :] - b @ self.X.T
        we = w * e
        return np.sum(we * e, axis=1), -np.sum(we * we, axis=1)

    def q_scalar(self, t: float) -> tuple[float, float]:
        w = 1.0 / (self.v + t)
        Xw = self.X.T * w
        A = Xw @ self.X
        g = Xw @ self.y
        if A.shape == (2, 2):
            # closed form for the common single-moderator case
            det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
            b = np.array([A[1, 1] * g[0] - A[0, 1] * g[1], A[0, 0] * g[1] - A[1, 0] * g[0]]) / det
        else:
            b = np.linalg.solve(A, g)
        e = self.y - self.X @ b
        we = w * e
        return float(we @ e), -float(we @ we)

    def _bracket(self, target: float, hi: float) -> tuple[float, float]:
        lo = 0.0
        hi = max(hi, 1e-8)
        for _ in range(200):
            if self.q_scalar(hi)[0] <= target:
                break
            lo, hi = hi, hi * 4.0
        return lo, hi

    def solve_scalar(self, target: float, guess: float | None = None, tol: float = 1e-12) -> float:
        """Safeguarded Newton solve of Q(t) = target for one target."""
        if target >= self.q0:
            return 0.0
        if guess is not None and guess > 0:
            # tight bracket around the guess, widened only if needed
            lo, hi = 0.0, guess
            q_hi = self.q_scalar(hi)[0]
            step = 1.0
            while q_hi > target:
                lo = hi
                hi = guess * (1.0 + step)
                step *= 4.0
                q_hi = self.q_scalar(hi)[0]
                if hi > 1e12:
                    break
            t = guess
        else:
            lo, hi = self._bracket(target, 1.0)
            t = 0.5 * (lo + hi)
        for _ in range(200):
            qt, dq = self.q_scalar(t)
            f = qt - target
            if f > 0:
                lo = t
            else:
                hi = t
            new = t - f / dq if dq < 0 else 0.5 * (lo + hi)
            if not lo < new < hi:
                new = 0.5 * (lo + hi)
            if abs(new - t) <= tol * (1.0 + t):
                return new
            t = new
        return t

    def solve(self, targets, tol=1e-12, maxiter=200) -> np.ndarray:
        """Vectorised safeguarded Newton solve of Q(t) = target."""
        targets = np.atleast_1d(np.asarray(targets, float))
        out = np.zeros_like(targets)
        act = targets < self.q0
        if not act.any():
            return out
        tg = targets[act]
        lo = np.zeros_like(tg)
        hi = np.ones_like(tg)
        for _ in range(200):
            grow = self.q(hi)[0] > tg
            if not grow.any():
                break
            lo = np.where(grow, hi, lo)
            hi = np.where(grow, hi * 4.0, hi)
        t = (lo + hi) / 2.0
        for _ in range(maxiter):
            qt, dq = self.q(t)
            f = qt - tg
            lo = np.where(f > 0, t, lo)
            hi = np.where(f <= 0, t, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = t - f / dq
            bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
            new = np.where(bad, 0.5 * (lo + hi), newton)
            done = np.abs(new - t) <= tol * (1.0 + t)
            t = new
            if done.all():
                break
        out[act] = t
        return out

    @staticmethod
    def targets(c, df):
        """chi-square targets for the lower and upper tau^2 bound at pivot c."""
        c = np.asarray(c, float)
        tail = special.ndtr(-c)
        return special.chdtri(df, tail), special.chdtri(df, 1.0 - tail)

    def raw_bounds(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Untruncated-by-estimate tau^2 bounds at positive pivots (vectorised)."""
        lo_t, hi_t = self.targets(c, self.df)
        lo, hi = self.solve(lo_t), self.solve(hi_t)
        order = np.argsort(c)
        self.grid = (np.asarray(c)[order], lo[order], hi[order])
        return lo, hi

    def _guess(self, c: float, which: int) -> float | None:
        if self.grid is None:
            return None
        gc = self.grid[0]
        if not gc[0] <= c <= gc[-1]:
            return None
        g = float(np.interp(c, gc, self.grid[which]))
        return g if g > 0 else None

    def lower(self, c: float) -> float:
        if c not in self.lower_cache:
            target = float(special.chdtri(self.df, special.ndtr(-c)))
            self.lower_cache[c] = self.solve_scalar(target, self._guess(c, 1))
        return self.lower_cache[c]

    def upper(self, c: float) -> float:
        if c not in self.upper_cache:
            target = float(special.chdtri(self.df, special.ndtr(c)))
            self.upper_cache[c] = self.solve_scalar(target, self._guess(c, 2))
        return self.upper_cache[c]


class TauIntervals:
    """tau-scale interval bounds at an arbitrary normal pivot ``c``.

    ``kind="qprofile"`` inverts the generalised Q statistic at confidence
    level 2*Phi(c) - 1; ``kind="wald"`` uses tau2 +/- c*sqrt(Var(tau2))
    truncated at zero. Both return the point estimate at c = 0, and the
    Q-profile bounds are widened to contain the point estimate.
    """

    def __init__(self, y, v, X, est: TauEstimate, kind: str = "qprofile", profile: QProfile | None = None):
        if kind not in ("qprofile", "wald"):
            raise ValidationError(f"unknown tau interval kind {kind!r}")
        self.kind = kind
        self.est = est
        if kind == "qprofile":
            self.profile = profile if profile is not None else QProfile(y, v, X)
        else:
            self.profile = None
        self._cache: dict = {}

    def bounds(self, c) -> tuple[np.ndarray, np.ndarray]:
        c = np.atleast_1d(np.asarray(c, float))
        if np.any(c < 0):
            raise ValidationError("pivot must be nonnegative")
        t2 = self.est.tau2
        if self.kind == "wald":
            half = c * np.sqrt(self.est.var_tau2)
            return np.sqrt(np.maximum(t2 - half, 0.0)), np.sqrt(t2 + half)
        lo = np.full(c.shape, t2)
        hi = np.full(c.shape, t2)
        pos = c > 0
        if pos.any():
            lo_t, hi_t = self.profile.raw_bounds(c[pos])
            lo[pos] = np.minimum(lo_t, t2)
            hi[pos] = np.maximum(hi_t, t2)
        return np.sqrt(lo), np.sqrt(hi)

    def lower_at(self, c: float) -> float:
        c = float(c)
        t2 = self.est.tau2
        if self.kind == "wald":
            return math.sqrt(max(t2 - c * math.sqrt(self.est.var_tau2), 0.0))
        if c <= 0:
            return math.sqrt(t2)
        return math.sqrt(min(self.profile.lower(c), t2))

    def upper_at(self, c: float) -> float:
        c = float(c)
        t2 = self.est.tau2
        if self.kind == "wald":
            return math.sqrt(t2 + c * math.sqrt(self.est.var_tau2))
        if c <= 0:
            return math.sqrt(t2)
        return math.sqrt(max(self.profile.upper(c), t2))

    def bound_at(self, c: float) -> tuple[float, float]:
        return self.lower_at(c), self.upper_at(c)


def z_of(level: float) -> float:
    if not 0 < level < 1:
        raise ValidationError(f"confidence level must lie in (0, 1), got {level}")
    return float(stats.norm.isf((1.0 - level) / 2.0))


def ci_tau(
    dataset: Dataset,
    design: DesignMatrix,
    tau_est: TauEstimate,
    level: float = 0.95,
    kind: str = "qprofile",
) -> IntervalResult:
    """Confidence interval for tau (not tau^2)."""
    z = z_of(level)
    y, v, X = _arrays(dataset, design)
    lo, hi = TauIntervals(y, v, X, tau_est, kind).bound_at(z)
    return IntervalResult(lo, hi, "tau", kind, level)

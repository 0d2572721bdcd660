"""Interval bands for M1, CV_B and the fitted effect over a numeric moderator.

Figures are written with the Agg backend, a fixed SVG hash salt and no date
stamp, so the same inputs always give byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import FactorModeratorUnsupported, ValidationError  # noqa: E402
from .intervals import METHODS, point_intervals  # noqa: E402
from .measures import cv_measures  # noqa: E402
from .model import Dataset, ModeratorPoint, build_design_matrix  # noqa: E402
from .regression import ci_beta_x, effect_at, fit  # noqa: E402
from .report import _num, _write  # noqa: E402

DEFAULT_GRID = tuple(float(x) for x in range(10, 61))
CV_DISPLAY_CAP = 5.0
_COLOURS = {"WT": "#1b9e77", "AlphaAdj": "#d95f02", "PropImp": "#7570b3", "Wald": "#444444"}


@dataclass(frozen=True)
class SeriesRow:
    series: str  # "m1", "cv_b" or "beta_x"
    method: str
    x: float
    estimate: float
    lower: float
    upper: float


def compute_series(
    dataset: Dataset,
    moderator: str,
    methods: Sequence[str] = METHODS,
    grid: Sequence[float] = DEFAULT_GRID,
    tau_method: str = "DL",
    level: float = 0.95,
    tau_interval: str = "qprofile",
) -> list[SeriesRow]:
    """Estimate and interval bounds at every grid value of one numeric moderator."""
    data = dataset.select(moderator)
    if data.moderator(moderator).is_factor:
        raise FactorModeratorUnsupported(f"{moderator!r} is a factor; plots need a numeric moderator")
    if len(grid) == 0:
        raise ValidationError("plot grid is empty")
    f = fit(data, build_design_matrix(data), tau_method)
    rows: list[SeriesRow] = []
    for x in grid:
        p = ModeratorPoint.of(float(x))
        eff = effect_at(f, p)
        est = cv_measures(f.tau.tau, eff, f.tau.var_tau2)
        bci = ci_beta_x(f, p, level)
        rows.append(SeriesRow("beta_x", "Wald", float(x), eff.beta_x, bci.lower, bci.upper))
        for m, ci in point_intervals(f, p, methods, level, tau_interval).items():
            if ci is None:
                nan = float("nan")
                rows.append(SeriesRow("m1", m, float(x), est.m1, nan, nan))
                rows.append(SeriesRow("cv_b", m, float(x), est.cv_b, nan, nan))
                continue
            m1, cv = ci.to("m1"), ci.to("cv_b")
            rows.append(SeriesRow("m1", m, float(x), est.m1, m1.lower, m1.upper))
            rows.append(SeriesRow("cv_b", m, float(x), est.cv_b, cv.lower, cv.upper))
    return rows


def write_series_csv(rows: Sequence[SeriesRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return _write(
        path,
        ["series", "method", "x", "estimate", "lower", "upper"],
        [[r.series, r.method, _num(r.x), _num(r.estimate), _num(r.lower), _num(r.upper)] for r in rows],
    )


def _panel(ax, rows, series, ylabel, cap=None):
    methods = []
    for r in rows:
        if r.series == series and r.method not in methods:
            methods.append(r.method)
    for m in methods:
        sel = [r for r in rows if r.series == series and r.method == m]
        x = np.array([r.x for r in sel])
        lo = np.array([r.lower for r in sel])
        hi = np.array([r.upper for r in sel])
        if cap is not None:
            lo, hi = np.minimum(lo, cap), np.minimum(hi, cap)
        colour = _COLOURS.get(m, "#999999")
        ax.fill_between(x, lo, hi, color=colour, alpha=0.18, linewidth=0)
        ax.plot(x, lo, color=colour, linewidth=1.0, label=m)
        ax.plot(x, hi, color=colour, linewidth=1.0)
    sel = [r for r in rows if r.series == series and r.method == methods[0]]
    est = np.array([r.estimate for r in sel])
    if cap is not None:
        est = np.minimum(est, cap)
    ax.plot([r.x for r in sel], est, color="black", linewidth=1.4, label="estimate")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7, frameon=False)


def render_svg(rows: Sequence[SeriesRow], path: str | Path, moderator: str = "x") -> Path:
    """Three stacked panels (M1, CV_B capped for display, beta_x) saved as SVG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "metacv", "svg.fonttype": "none", "path.simplify": False}):
        fig, axes = plt.subplots(3, 1, figsize=(6.0, 8.0), sharex=True)
        _panel(axes[0], rows, "m1", "M1")
        axes[0].set_ylim(0.0, 1.0)
        _panel(axes[1], rows, "cv_b", f"CV_B (capped at {CV_DISPLAY_CAP:g})", cap=CV_DISPLAY_CAP)
        axes[1].set_ylim(0.0, CV_DISPLAY_CAP)
        _panel(axes[2], rows, "beta_x", "beta_x")
        axes[2].axhline(0.0, color="grey", linewidth=0.5)
        axes[2].set_xlabel(moderator)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def parse_grid(text: str | None) -> tuple[float, ...]:
    """``None`` gives the default 10..60 grid; otherwise ``a:b:step`` or a comma list."""
    if text is None:
        return DEFAULT_GRID
    try:
        if ":" in text:
            a, b, step = (float(t) for t in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            n = int(math.floor((b - a) / step + 1e-9)) + 1
            return tuple(a + i * step for i in range(n))
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ValidationError(f"cannot parse grid {text!r}; use a:b:step or a comma list") from None

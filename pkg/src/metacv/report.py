"""Analysis driver and table emission.

Text tables print three decimals; CSV files carry full ``repr`` precision so
that reading them back reproduces the in-memory floats.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import KINDS, AggregateResult, ModeratorGrid, aggregate
from .errors import NonEqualWeightsForGM, NumericalError
from .intervals import METHODS, point_intervals
from .measures import CvEstimate, cv_measures, i_squared
from .model import Dataset, IntervalResult, ModeratorPoint, WeightPolicy, build_design_matrix
from .regression import RegressionFit, ci_beta_x, effect_at, fit
from .simulation import CoverageReport


@dataclass(frozen=True, eq=False)
class PointResult:
    point: ModeratorPoint
    estimate: CvEstimate
    effect_ci: IntervalResult
    intervals: dict[str, IntervalResult | None]


@dataclass(frozen=True, eq=False)
class AnalysisReport:
    dataset: str
    fit: RegressionFit
    i2: float
    points: tuple[PointResult, ...]
    aggregates: dict[str, AggregateResult | str] = field(default_factory=dict)
    grid: ModeratorGrid | None = None
    level: float = 0.95


def analyze(
    dataset: Dataset,
    tau_method: str = "DL",
    methods: Sequence[str] = METHODS,
    points: Sequence[ModeratorPoint] = (),
    weights: WeightPolicy | str = "equal",
    aggregates: Sequence[str] = KINDS,
    level: float = 0.95,
    tau_interval: str = "qprofile",
) -> AnalysisReport:
    """Fit the meta-regression and compute everything the ``analyze`` command prints.

    Aggregates that are undefined for this fit (zero tau^2, zero effect, GM
    with unequal weights) are reported as a message instead of a result.
    """
    design = build_design_matrix(dataset)
    f = fit(dataset, design, tau_method)
    rows = []
    for p in points:
        eff = effect_at(f, p)
        est = cv_measures(f.tau.tau, eff, f.tau.var_tau2)
        ivs = point_intervals(f, p, methods, level, tau_interval)
        rows.append(PointResult(p, est, ci_beta_x(f, p, level), ivs))
    aggs: dict[str, AggregateResult | str] = {}
    grid = None
    if aggregates and points:
        grid = ModeratorGrid.from_policy(points, weights, dataset)
        for kind in aggregates:
            try:
                aggs[kind] = aggregate(f, grid, kind, level)
            except (NumericalError, NonEqualWeightsForGM) as exc:
                aggs[kind] = str(exc)
    return AnalysisReport(
        dataset.name, f, i_squared(f.tau.tau2, dataset.variances), tuple(rows), aggs, grid, level
    )


# --- formatting -------------------------------------------------------------

def fmt(x: float, digits: int = 3) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    if math.isinf(x):
        return "Inf" if x > 0 else "-Inf"
    if abs(x) >= 1000:
        return ">1000" if x > 0 else "<-1000"
    s = f"{x:.{digits}f}"
    return "0.000" if s == "-0.000" else s


def text_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    lines = ["  ".join(str(h).rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(c).rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def format_analysis(rep: AnalysisReport) -> str:
    f = rep.fit
    out = [f"Meta-regression on {rep.dataset or 'dataset'} (k = {f.k}, tau^2 method {f.tau.method})", ""]
    se = np.sqrt(np.diag(f.cov_beta))
    out.append(text_table(
        ["term", "estimate", "variance", "se"],
        [[lab, fmt(b), fmt(v, 5), fmt(s)] for lab, b, v, s in zip(f.labels, f.beta, np.diag(f.cov_beta), se)],
    ))
    out.append("")
    q = f"  Q_E = {fmt(f.tau.q_statistic)}" if f.tau.q_statistic is not None else ""
    out.append(
        f"tau^2 = {fmt(f.tau.tau2)}  tau = {fmt(f.tau.tau)}  Var(tau^2) = {fmt(f.tau.var_tau2, 5)}"
        f"  I^2 = {fmt(100 * rep.i2, 1)}%{q}"
    )
    if not rep.points:
        return "\n".join(out)
    out += ["", "Per-point estimates"]
    out.append(text_table(
        ["x", "beta_x", "CV_B", "M1", "M2"],
        [[r.point.label(), fmt(r.estimate.effect.beta_x), fmt(r.estimate.cv_b), fmt(r.estimate.m1),
          fmt(r.estimate.m2)] for r in rep.points],
    ))
    methods = list(rep.points[0].intervals)
    if methods:
        out += ["", f"{100 * rep.level:g}% intervals (M1 scale and CV_B scale)"]
        rows = []
        for r in rep.points:
            for m in methods:
                ci = r.intervals[m]
                if ci is None:
                    rows.append([r.point.label(), m, "NA", "NA", "NA", "NA"])
                    continue
                m1, cv = ci.to("m1"), ci.to("cv_b")
                rows.append([r.point.label(), m, fmt(m1.lower), fmt(m1.upper), fmt(cv.lower), fmt(cv.upper)])
        out.append(text_table(["x", "method", "M1 lo", "M1 hi", "CV lo", "CV hi"], rows))
    if rep.aggregates:
        out += ["", "Grid aggregates (weights: " + ", ".join(fmt(w) for w in rep.grid.weights) + ")"]
        rows = []
        for kind, a in rep.aggregates.items():
            if isinstance(a, str):
                rows.append([kind, "NA", "NA", "NA", a])
            else:
                rows.append([kind, fmt(a.value), fmt(a.ci.lower), fmt(a.ci.upper), a.ci.scale])
        out.append(text_table(["aggregate", "estimate", "lower", "upper", "scale / note"], rows))
    return "\n".join(out)


# --- CSV --------------------------------------------------------------------

def _num(x) -> str:
    return repr(float(x))


def _write(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def write_analysis_csv(rep: AnalysisReport, out_dir: str | Path) -> list[Path]:
    """Write coefficients, per-point estimates, intervals and aggregates as CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    f = rep.fit
    files = [_write(
        out_dir / "coefficients.csv",
        ["term", "estimate", "variance"],
        [[lab, _num(b), _num(v)] for lab, b, v in zip(f.labels, f.beta, np.diag(f.cov_beta))]
        + [["tau2", _num(f.tau.tau2), _num(f.tau.var_tau2)], ["I2", _num(rep.i2), ""]],
    )]
    files.append(_write(
        out_dir / "points.csv",
        ["x", "beta_x", "var_beta_x", "cv_b", "m1", "m2", "var_logit_m1"],
        [[r.point.label(), _num(r.estimate.effect.beta_x), _num(r.estimate.effect.var_beta_x),
          _num(r.estimate.cv_b), _num(r.estimate.m1), _num(r.estimate.m2), _num(r.estimate.var_logit_m1)]
         for r in rep.points],
    ))
    rows = []
    for r in rep.points:
        for m, ci in r.intervals.items():
            if ci is None:
                rows.append([r.point.label(), m, "NA", "NA", "NA", "NA"])
            else:
                m1, cv = ci.to("m1"), ci.to("cv_b")
                rows.append([r.point.label(), m, _num(m1.lower), _num(m1.upper), _num(cv.lower), _num(cv.upper)])
    files.append(_write(out_dir / "intervals.csv", ["x", "method", "m1_lower", "m1_upper", "cv_lower", "cv_upper"], rows))
    if rep.aggregates:
        rows = []
        for kind, a in rep.aggregates.items():
            if isinstance(a, str):
                rows.append([kind, "NA", "NA", "NA", "NA", ""])
            else:
                rows.append([kind, _num(a.value), _num(a.variance), _num(a.ci.lower), _num(a.ci.upper), a.ci.scale])
        files.append(_write(out_dir / "aggregates.csv", ["aggregate", "estimate", "variance", "lower", "upper", "scale"], rows))
    return files


def read_points_csv(path: str | Path) -> list[dict]:
    """Load a ``points.csv`` written by :func:`write_analysis_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (v if k == "x" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


# --- coverage tables ----------------------------------------------------------

def coverage_table(rep: CoverageReport, value: str = "coverage") -> str:
    """Method-by-target grid: one row per (method, tau method), one column per target."""
    targets: list[str] = []
    keys: list[tuple[str, str]] = []
    for r in rep.rows:
        if r.target not in targets:
            targets.append(r.target)
        if (r.method, r.tau_method) not in keys:
            keys.append((r.method, r.tau_method))
    order = {m: i for i, m in enumerate(("AlphaAdj", "PropImp", "WT", "WaldMean"))}
    keys.sort(key=lambda k: (order.get(k[0], len(order)), k[1]))
    cells = {(r.method, r.tau_method, r.target): r for r in rep.rows}
    rows = []
    for m, tm in keys:
        line = [f"{m} [{tm}]"]
        for t in targets:
            r = cells.get((m, tm, t))
            line.append(fmt(getattr(r, value)) if r is not None else "")
        rows.append(line)
    title = (f"{rep.scenario}: {value} over {rep.n_trials} trials (seed {rep.seed}, "
             f"undefined intervals: {rep.undefined_policy})")
    return title + "\n" + text_table(["method"] + targets, rows)


def write_coverage_csv(rep: CoverageReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["method", "tau_method", "target", "n_trials", "n_covered", "n_undefined", "coverage", "se",
              "mean_width_cv", "median_width_cv", "mean_width_m1", "median_width_m1"]
    rows = []
    for r in rep.rows:
        rows.append([getattr(r, k) if k in ("method", "tau_method", "target") else
                     (str(getattr(r, k)) if isinstance(getattr(r, k), int) else _num(getattr(r, k)))
                     for k in fields])
    return _write(path, fields, rows)

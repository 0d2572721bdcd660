"""Command-line driver: ``metacv analyze | simulate | plot | datasets list``.

Exit status is 0 on success, 2 for invalid input and 3 for numerical
failures (rank deficiency, undefined measures).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .aggregation import KINDS, observed_points
from .datasets import available_datasets, load_dataset
from .errors import NumericalError, ValidationError
from .intervals import METHODS
from .model import ModeratorPoint, WeightPolicy

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

_METHOD_ALIASES = {
    "wt": "WT", "wald": "WT",
    "alphaadj": "AlphaAdj", "alpha": "AlphaAdj", "aadj": "AlphaAdj", "alpha-adjusted": "AlphaAdj",
    "propimp": "PropImp", "prop": "PropImp",
}


def _methods(text: str) -> tuple[str, ...]:
    if text.strip().lower() in ("", "none"):
        return ()
    out = []
    for t in text.split(","):
        key = t.strip().lower()
        if key not in _METHOD_ALIASES:
            raise ValidationError(f"unknown interval method {t.strip()!r}; choose from {', '.join(METHODS)}")
        out.append(_METHOD_ALIASES[key])
    return tuple(out)


def _aggregates(text: str) -> tuple[str, ...]:
    if text.strip().lower() in ("", "none"):
        return ()
    lookup = {k.lower(): k for k in KINDS}
    out = []
    for t in text.split(","):
        if t.strip().lower() not in lookup:
            raise ValidationError(f"unknown aggregate {t.strip()!r}; choose from {', '.join(KINDS)}")
        out.append(lookup[t.strip().lower()])
    return tuple(out)


def _factors(items) -> dict:
    """``--factor name`` or ``--factor name:l1,l2,l3``."""
    out = {}
    for item in items or ():
        name, _, levels = item.partition(":")
        out[name.strip()] = tuple(l.strip() for l in levels.split(",") if l.strip()) or None
    return out


def _points(text: str, data) -> list[ModeratorPoint]:
    if text == "observed":
        return observed_points(data)
    if text.startswith("linspace"):
        from .simulation import _points as parse_points

        return list(parse_points(text, data))
    pts = []
    for tok in text.split(";" if ";" in text else ","):
        vals = []
        for v in tok.split("/"):
            v = v.strip()
            try:
                vals.append(float(v))
            except ValueError:
                vals.append(v)
        pts.append(ModeratorPoint(tuple(vals)))
    return pts


def _weights(text: str) -> WeightPolicy:
    if text in ("equal", "proportion"):
        return WeightPolicy(text)
    try:
        return WeightPolicy("user", tuple(float(w) for w in text.split(",")))
    except ValueError:
        raise ValidationError(f"weights must be 'equal', 'proportion' or a comma list, got {text!r}") from None


def _level(text: str) -> float:
    x = float(text)
    if not 0.0 < x < 1.0:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return x


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metacv", description="Relative heterogeneity in meta-regression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="fit a meta-regression and report CV_B / M1 / M2 with intervals")
    a.add_argument("--data", required=True, help="bundled dataset name or CSV path")
    a.add_argument("--moderator", action="append", required=True, help="moderator column (repeatable)")
    a.add_argument("--factor", action="append", help="declare a factor column: name or name:l1,l2,...")
    a.add_argument("--tau", default="dl", choices=["dl", "reml", "DL", "REML"])
    a.add_argument("--methods", default=",".join(METHODS), help="comma list of WT, AlphaAdj, PropImp or 'none'")
    a.add_argument("--grid", default="observed",
                   help="'observed', 'linspace(a,b,n)' or a list: '13,55' (one moderator) or 'a/b;c/d'")
    a.add_argument("--weights", default="equal", help="'equal', 'proportion' or comma-separated weights")
    a.add_argument("--aggregates", default=",".join(KINDS), help="comma list of waLCV, GM, waCV or 'none'")
    a.add_argument("--level", type=_level, default=0.95)
    a.add_argument("--tau-interval", default="qprofile", choices=["qprofile", "wald"])
    a.add_argument("--out", help="directory for CSV output")

    s = sub.add_parser("simulate", help="run a coverage scenario from a TOML config")
    s.add_argument("config", help="scenario TOML file or a bundled scenario name (e.g. bcg_coverage)")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--undefined", choices=["miss", "exclude"])
    s.add_argument("--out", help="directory for coverage.csv and coverage.txt")
    s.add_argument("--quiet", action="store_true", help="no progress output on stderr")

    g = sub.add_parser("plot", help="interval bands over a numeric moderator (CSV + SVG)")
    g.add_argument("--data", required=True)
    g.add_argument("--moderator", required=True)
    g.add_argument("--factor", action="append")
    g.add_argument("--tau", default="dl", choices=["dl", "reml", "DL", "REML"])
    g.add_argument("--methods", default=",".join(METHODS))
    g.add_argument("--grid", help="a:b:step or comma list (default 10:60:1)")
    g.add_argument("--level", type=_level, default=0.95)
    g.add_argument("--tau-interval", default="qprofile", choices=["qprofile", "wald"])
    g.add_argument("--out", required=True, help="output directory for series.csv and plot.svg")

    d = sub.add_parser("datasets", help="bundled datasets")
    d.add_argument("action", choices=["list"])
    return p


def cmd_analyze(args) -> int:
    from .report import analyze, format_analysis, write_analysis_csv

    data = load_dataset(args.data, _factors(args.factor)).select(*args.moderator)
    rep = analyze(
        data,
        tau_method=args.tau.upper(),
        methods=_methods(args.methods),
        points=_points(args.grid, data),
        weights=_weights(args.weights),
        aggregates=_aggregates(args.aggregates),
        level=args.level,
        tau_interval=args.tau_interval,
    )
    print(format_analysis(rep))
    if args.out:
        for f in write_analysis_csv(rep, args.out):
            print(f"wrote {f}", file=sys.stderr)
    return EXIT_OK


def _scenario_path(name: str) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    from importlib import resources

    res = resources.files("metacv").joinpath("scenarios", f"{name}.toml")
    if res.is_file():
        return Path(str(res))
    raise ValidationError(f"no scenario file or bundled scenario named {name!r}")


def cmd_simulate(args) -> int:
    from .report import coverage_table, write_coverage_csv
    from .simulation import load_scenario, run_scenario

    if args.workers < 1:
        raise ValidationError("--workers must be >= 1")
    spec = load_scenario(_scenario_path(args.config), n_trials=args.trials, seed=args.seed, undefined=args.undefined)

    def progress(i, n):
        if i == n or i % max(1, n // 20) == 0:
            print(f"\r{i}/{n} trials", end="\n" if i == n else "", file=sys.stderr)

    rep = run_scenario(spec, workers=args.workers, progress=None if args.quiet else progress)
    text = coverage_table(rep) + "\n\n" + coverage_table(rep, "mean_width_m1") + "\n\n" + \
        coverage_table(rep, "median_width_cv")
    print(text)
    if args.out:
        out = Path(args.out)
        write_coverage_csv(rep, out / "coverage.csv")
        (out / "coverage.txt").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import compute_series, parse_grid, render_svg, write_series_csv

    data = load_dataset(args.data, _factors(args.factor))
    rows = compute_series(
        data, args.moderator, _methods(args.methods), parse_grid(args.grid),
        args.tau.upper(), args.level, args.tau_interval,
    )
    out = Path(args.out)
    write_series_csv(rows, out / "series.csv")
    render_svg(rows, out / "plot.svg", args.moderator)
    print(f"wrote {out / 'series.csv'} and {out / 'plot.svg'}")
    return EXIT_OK


def cmd_datasets(args) -> int:
    for name, desc, present in available_datasets():
        status = "" if present else "  [not shipped: see data/PROVENANCE.md]"
        print(f"{name:8s} {desc}{status}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "plot": cmd_plot, "datasets": cmd_datasets}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

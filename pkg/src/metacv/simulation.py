"""Monte Carlo coverage of the CV_B / M1 intervals.

Each trial draws Y_i ~ N(r_i' beta, tau^2 + v_i) on a (possibly replicated)
template dataset, refits the meta-regression with every requested tau^2
estimator and records whether each interval contains the true value.

Trials use independent Philox streams keyed by ``(seed, trial)``, so a report
depends only on the spec and never on how trials are spread over workers.
"""

from __future__ import annotations

import math
import multiprocessing
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import links
from .aggregation import KINDS, ModeratorGrid, aggregate, linspace_points, observed_points, true_aggregate
from .datasets import load_dataset
from .errors import NumericalError, ValidationError
from .intervals import METHODS, point_intervals
from .model import Dataset, ModeratorPoint, WeightPolicy, build_design_matrix, prediction_row
from .regression import fit_arrays
from .tau import QProfile

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

TAU_METHODS = ("DL", "REML")
UNDEFINED_POLICIES = ("miss", "exclude")


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    name: str
    template: Dataset
    true_beta: tuple[float, ...]
    true_tau2: float
    replication_factor: int = 1
    n_trials: int = 1000
    methods: tuple[str, ...] = METHODS
    tau_methods: tuple[str, ...] = TAU_METHODS
    points: tuple[ModeratorPoint, ...] = ()
    aggregates: tuple[str, ...] = ()
    aggregate_points: tuple[ModeratorPoint, ...] = ()
    aggregate_weights: WeightPolicy = WeightPolicy("equal")
    level: float = 0.95
    seed: int = 0
    tau_interval: str = "qprofile"
    undefined: str = "miss"

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValidationError("n_trials must be >= 1")
        if self.true_tau2 < 0:
            raise ValidationError("true_tau2 must be >= 0")
        if self.replication_factor < 1:
            raise ValidationError("replication_factor must be >= 1")
        if not self.tau_methods or any(m not in TAU_METHODS for m in self.tau_methods):
            raise ValidationError(f"tau_methods must be a non-empty subset of {TAU_METHODS}")
        if any(m not in METHODS for m in self.methods):
            raise ValidationError(f"methods must be a subset of {METHODS}")
        if not self.methods and not self.aggregates:
            raise ValidationError("nothing to simulate: methods and aggregates are both empty")
        if self.methods and not self.points:
            raise ValidationError("per-point methods need at least one moderator point")
        if any(a not in KINDS for a in self.aggregates):
            raise ValidationError(f"aggregates must be a subset of {KINDS}")
        if self.aggregates and not self.aggregate_points:
            raise ValidationError("aggregates need a grid")
        if self.undefined not in UNDEFINED_POLICIES:
            raise ValidationError(f"undefined policy must be one of {UNDEFINED_POLICIES}")
        if len(self.true_beta) != build_design_matrix(self.template).p:
            raise ValidationError("true_beta length does not match the design matrix")

    @property
    def dataset(self) -> Dataset:
        return self.template.replicate(self.replication_factor)

    def targets(self) -> list[tuple[str, str, str]]:
        """(method, tau_method, target label) for every tallied quantity."""
        out = []
        for tm in self.tau_methods:
            for m in self.methods:
                out.extend((m, tm, p.label()) for p in self.points)
            out.extend(("WaldMean", tm, a) for a in self.aggregates)
        return out


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(trial,))))


def generate_trial(spec: ScenarioSpec, rng: np.random.Generator) -> Dataset:
    data = spec.dataset
    X = build_design_matrix(data).values
    mean = X @ np.asarray(spec.true_beta, float)
    y = rng.normal(mean, np.sqrt(spec.true_tau2 + data.variances))
    return data.with_effects(y)


class _Engine:
    """Per-scenario constants shared by all trials (picklable)."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        data = spec.dataset
        design = build_design_matrix(data)
        self.X = design.values
        self.v = data.variances
        self.schema = design.schema
        self.sd = np.sqrt(spec.true_tau2 + self.v)
        beta = np.asarray(spec.true_beta, float)
        self.mean = self.X @ beta
        tau = math.sqrt(spec.true_tau2)
        self.true_m1 = []
        for p in spec.points:
            b = abs(float(prediction_row(p, self.schema) @ beta))
            self.true_m1.append(1.0 if b == 0 else tau / (tau + b))
        self.grid = None
        self.true_agg = {}
        if spec.aggregates:
            self.grid = ModeratorGrid.from_policy(spec.aggregate_points, spec.aggregate_weights, data)
            rows = self.grid.rows(self.schema)
            for a in spec.aggregates:
                self.true_agg[a] = true_aggregate(beta, spec.true_tau2, rows, self.grid.weights, a)
        self.n_targets = len(spec.targets())

    def run(self, trial: int) -> np.ndarray:
        """Row per target: covered, defined, width on CV_B, width on M1."""
        spec = self.spec
        rng = trial_rng(spec.seed, trial)
        y = rng.normal(self.mean, self.sd)
        out = np.zeros((self.n_targets, 4))
        i = 0
        profile = QProfile(y, self.v, self.X) if spec.tau_interval == "qprofile" else None
        for tm in spec.tau_methods:
            f = fit_arrays(y, self.v, self.X, tm, schema=self.schema)
            f.tau_intervals(spec.tau_interval, profile)
            per_point = [
                point_intervals(f, p, spec.methods, spec.level, spec.tau_interval) for p in spec.points
            ]
            for m in spec.methods:
                for res, truth in zip(per_point, self.true_m1):
                    ci = res[m]
                    if ci is not None:
                        m1 = ci.to("m1")
                        cv = ci.to("cv_b")
                        out[i] = (m1.contains(truth), 1.0, cv.width, m1.width)
                    else:
                        out[i] = (0.0, 0.0, np.nan, np.nan)
                    i += 1
            for a in spec.aggregates:
                try:
                    agg = aggregate(f, self.grid, a, spec.level)
                    ci = agg.ci
                    w_cv = ci.to("cv_b").width if ci.scale in links.MEASURE_SCALES else ci.width
                    out[i] = (ci.contains(self.true_agg[a]), 1.0, w_cv, np.nan)
                except NumericalError:
                    out[i] = (0.0, 0.0, np.nan, np.nan)
                i += 1
        return out


@dataclass(frozen=True)
class CoverageRow:
    method: str
    tau_method: str
    target: str
    n_trials: int
    n_covered: int
    n_undefined: int
    coverage: float
    se: float
    mean_width_cv: float
    median_width_cv: float
    mean_width_m1: float
    median_width_m1: float


@dataclass(frozen=True, eq=False)
class CoverageReport:
    scenario: str
    n_trials: int
    seed: int
    undefined_policy: str
    rows: tuple[CoverageRow, ...]
    meta: dict = field(default_factory=dict)

    def row(self, method: str, tau_method: str, target) -> CoverageRow:
        target = target if isinstance(target, str) else ModeratorPoint.of(target).label()
        for r in self.rows:
            if (r.method, r.tau_method, r.target) == (method, tau_method, target):
                return r
        raise KeyError((method, tau_method, target))

    def coverage(self, method: str, tau_method: str, target) -> float:
        return self.row(method, tau_method, target).coverage


def _summarise(spec: ScenarioSpec, results: np.ndarray) -> CoverageReport:
    rows = []
    n = spec.n_trials
    for j, (m, tm, tgt) in enumerate(spec.targets()):
        cov, dfn, wcv, wm1 = (results[:, j, c] for c in range(4))
        n_undef = int(n - dfn.sum())
        denom = n if spec.undefined == "miss" else n - n_undef
        c = float(cov.sum() / denom) if denom else float("nan")
        se = math.sqrt(c * (1 - c) / denom) if denom else float("nan")

        def stats_(w):
            w = w[~np.isnan(w)]
            if w.size == 0:
                return float("nan"), float("nan")
            with np.errstate(invalid="ignore"):
                return float(np.mean(w)), float(np.median(w))

        mcv, medcv = stats_(wcv)
        mm1, medm1 = stats_(wm1)
        rows.append(CoverageRow(m, tm, tgt, n, int(cov.sum()), n_undef, c, se, mcv, medcv, mm1, medm1))
    return CoverageReport(
        spec.name, n, spec.seed, spec.undefined, tuple(rows),
        {"true_beta": list(spec.true_beta), "true_tau2": spec.true_tau2,
         "k": spec.dataset.k, "tau_interval": spec.tau_interval},
    )


def run_scenario(spec: ScenarioSpec, workers: int = 1, progress=None) -> CoverageReport:
    """Run all trials and reduce them into a :class:`CoverageReport`.

    ``workers > 1`` spreads trials over processes; the output is identical.
    """
    engine = _Engine(spec)
    trials = range(spec.n_trials)
    if workers > 1:
        with multiprocessing.get_context("spawn").Pool(workers, _init_worker, (spec,)) as pool:
            parts = pool.map(_run_in_worker, trials, chunksize=max(1, spec.n_trials // (8 * workers)))
    else:
        parts = []
        for t in trials:
            parts.append(engine.run(t))
            if progress is not None:
                progress(t + 1, spec.n_trials)
    return _summarise(spec, np.stack(parts))


_WORKER_ENGINE = None


def _init_worker(spec):
    global _WORKER_ENGINE
    _WORKER_ENGINE = _Engine(spec)


def _run_in_worker(trial):
    return _WORKER_ENGINE.run(trial)


# --- declarative scenario files -------------------------------------------

_LINSPACE = re.compile(r"^\s*linspace\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*,\s*(\d+)\s*\)\s*$")


def _points(value, data: Dataset) -> tuple[ModeratorPoint, ...]:
    if value in (None, "observed"):
        return tuple(observed_points(data))
    if isinstance(value, str):
        m = _LINSPACE.match(value)
        if not m:
            raise ValidationError(f"grid must be 'observed', 'linspace(a,b,n)' or a list, got {value!r}")
        return tuple(linspace_points(float(m.group(1)), float(m.group(2)), int(m.group(3))))
    pts = []
    for v in value:
        pts.append(ModeratorPoint(tuple(v)) if isinstance(v, list) else ModeratorPoint.of(v))
    return tuple(pts)


def spec_from_mapping(cfg: dict, base_dir: Path | None = None) -> ScenarioSpec:
    """Build a scenario from a parsed config mapping (see README for the keys)."""
    known = {
        "name", "dataset", "moderators", "factors", "truth", "true_beta", "true_tau2",
        "replication_factor", "n_trials", "methods", "tau_methods", "points", "level",
        "seed", "tau_interval", "undefined", "aggregates",
    }
    extra = set(cfg) - known
    if extra:
        raise ValidationError(f"unknown scenario keys: {sorted(extra)}")
    if "dataset" not in cfg:
        raise ValidationError("scenario needs a 'dataset'")
    src = cfg["dataset"]
    if base_dir is not None and not str(src).isidentifier():
        cand = base_dir / src
        src = cand if cand.exists() else src
    data = load_dataset(src, cfg.get("factors"))
    if "moderators" in cfg:
        data = data.select(*cfg["moderators"])
    if "true_beta" in cfg or "true_tau2" in cfg:
        if "true_beta" not in cfg or "true_tau2" not in cfg:
            raise ValidationError("give both true_beta and true_tau2, or 'truth'")
        beta, tau2 = tuple(float(b) for b in cfg["true_beta"]), float(cfg["true_tau2"])
    else:
        truth = str(cfg.get("truth", "DL"))
        design = build_design_matrix(data)
        f = fit_arrays(data.effects, data.variances, design.values, truth)
        beta, tau2 = tuple(float(b) for b in f.beta), float(f.tau.tau2)
    agg = cfg.get("aggregates", {})
    methods = cfg.get("methods", list(METHODS))
    if not methods and not agg.get("kinds"):
        raise ValidationError("methods list is empty")
    return ScenarioSpec(
        name=str(cfg.get("name", "scenario")),
        template=data,
        true_beta=beta,
        true_tau2=tau2,
        replication_factor=int(cfg.get("replication_factor", 1)),
        n_trials=int(cfg.get("n_trials", 1000)),
        methods=tuple(methods),
        tau_methods=tuple(m.upper() for m in cfg.get("tau_methods", list(TAU_METHODS))),
        points=_points(cfg.get("points", "observed"), data) if methods else (),
        aggregates=tuple(agg.get("kinds", ())),
        aggregate_points=_points(agg.get("grid", "observed"), data) if agg.get("kinds") else (),
        aggregate_weights=WeightPolicy(
            "user" if isinstance(agg.get("weights"), list) else agg.get("weights", "equal"),
            tuple(agg["weights"]) if isinstance(agg.get("weights"), list) else (),
        ),
        level=float(cfg.get("level", 0.95)),
        seed=int(cfg.get("seed", 0)),
        tau_interval=str(cfg.get("tau_interval", "qprofile")),
        undefined=str(cfg.get("undefined", "miss")),
    )


def load_scenario(path: str | Path, **overrides) -> ScenarioSpec:
    """Read a TOML scenario file; keyword overrides replace top-level keys."""
    path = Path(path)
    try:
        cfg = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return spec_from_mapping(cfg, path.parent)

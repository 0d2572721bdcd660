"""Core domain types: studies, datasets, design matrices and intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from . import links
from .errors import RankDeficient, UnknownLevel, ValidationError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class Moderator:
    """A moderator column. ``levels`` is ``None`` for numeric moderators."""

    name: str
    levels: tuple[str, ...] | None = None

    @property
    def is_factor(self) -> bool:
        return self.levels is not None

    @property
    def n_columns(self) -> int:
        return len(self.levels) - 1 if self.is_factor else 1

    def column_labels(self) -> list[str]:
        if not self.is_factor:
            return [self.name]
        return [f"{self.name}[{lev}]" for lev in self.levels[1:]]

    def encode(self, value) -> list[float]:
        if not self.is_factor:
            try:
                x = float(value)
            except (TypeError, ValueError):
                raise ValidationError(f"moderator {self.name!r}: {value!r} is not numeric") from None
            if not math.isfinite(x):
                raise ValidationError(f"moderator {self.name!r}: non-finite value {value!r}")
            return [x]
        value = str(value)
        if value not in self.levels:
            raise UnknownLevel(
                f"moderator {self.name!r}: level {value!r} not in {list(self.levels)}"
            )
        # reference coding: first declared level is the baseline
        return [1.0 if value == lev else 0.0 for lev in self.levels[1:]]


Schema = tuple[Moderator, ...]


@dataclass(frozen=True)
class StudyRecord:
    effect: float
    within_variance: float
    moderators: tuple = ()
    label: str = ""

    def __post_init__(self):
        if not (self.within_variance > 0 and math.isfinite(self.within_variance)):
            raise ValidationError(
                f"study {self.label or '?'}: within-study variance must be positive, "
                f"got {self.within_variance!r}"
            )
        if not math.isfinite(self.effect):
            raise ValidationError(f"study {self.label or '?'}: effect must be finite")


@dataclass(frozen=True)
class Dataset:
    studies: tuple[StudyRecord, ...]
    schema: Schema = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "studies", tuple(self.studies))
        object.__setattr__(self, "schema", tuple(self.schema))
        if not self.studies:
            raise ValidationError("dataset has no studies")
        names = [m.name for m in self.schema]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate moderator names: {names}")
        bad = []
        for i, s in enumerate(self.studies):
            if len(s.moderators) != len(self.schema):
                raise ValidationError(
                    f"study {i + 1} has {len(s.moderators)} moderator values, "
                    f"schema has {len(self.schema)}"
                )
            for mod, val in zip(self.schema, s.moderators):
                if mod.is_factor and str(val) not in mod.levels:
                    bad.append(f"study {i + 1}: {mod.name}={val!r}")
        if bad:
            raise UnknownLevel("factor levels absent from schema: " + "; ".join(bad))

    @classmethod
    def from_arrays(
        cls,
        effects: Sequence[float],
        variances: Sequence[float],
        moderators: Mapping[str, Sequence] | None = None,
        factors: Mapping[str, Sequence[str]] | None = None,
        name: str = "",
        labels: Sequence[str] | None = None,
    ) -> "Dataset":
        """Build a dataset from columns.

        ``factors`` maps a moderator name to its ordered levels; any moderator
        not listed there is numeric.
        """
        moderators = dict(moderators or {})
        factors = dict(factors or {})
        schema = tuple(
            Moderator(n, tuple(str(l) for l in factors[n]) if n in factors else None)
            for n in moderators
        )
        k = len(effects)
        if len(variances) != k or any(len(c) != k for c in moderators.values()):
            raise ValidationError("column lengths differ")
        cols = [moderators[m.name] for m in schema]
        studies = []
        for i in range(k):
            vals = tuple(
                str(c[i]) if m.is_factor else float(c[i]) for m, c in zip(schema, cols)
            )
            studies.append(
                StudyRecord(
                    float(effects[i]),
                    float(variances[i]),
                    vals,
                    labels[i] if labels is not None else str(i + 1),
                )
            )
        return cls(tuple(studies), schema, name)

    @property
    def k(self) -> int:
        return len(self.studies)

    @property
    def effects(self) -> np.ndarray:
        return np.array([s.effect for s in self.studies])

    @property
    def variances(self) -> np.ndarray:
        return np.array([s.within_variance for s in self.studies])

    def moderator(self, name: str) -> Moderator:
        for m in self.schema:
            if m.name == name:
                return m
        raise ValidationError(
            f"unknown moderator {name!r}; available: {[m.name for m in self.schema]}"
        )

    def column(self, name: str) -> list:
        idx = [m.name for m in self.schema].index(self.moderator(name).name)
        return [s.moderators[idx] for s in self.studies]

    def select(self, *names: str) -> "Dataset":
        """Keep only the named moderators, in the given order."""
        mods = [self.moderator(n) for n in names]
        idx = [self.schema.index(m) for m in mods]
        studies = tuple(
            replace(s, moderators=tuple(s.moderators[i] for i in idx)) for s in self.studies
        )
        return Dataset(studies, tuple(mods), self.name)

    def replicate(self, times: int) -> "Dataset":
        """Stack ``times`` copies of the studies (``times=1`` is the identity)."""
        if times < 1:
            raise ValidationError("replication factor must be >= 1")
        return Dataset(self.studies * times, self.schema, self.name)

    def with_effects(self, effects: Sequence[float]) -> "Dataset":
        if len(effects) != self.k:
            raise ValidationError("wrong number of effects")
        studies = tuple(replace(s, effect=float(y)) for s, y in zip(self.studies, effects))
        return Dataset(studies, self.schema, self.name)

    def level_counts(self, name: str) -> dict[str, int]:
        mod = self.moderator(name)
        if not mod.is_factor:
            raise ValidationError(f"{name!r} is numeric")
        col = self.column(name)
        return {lev: sum(1 for c in col if c == lev) for lev in mod.levels}


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    labels: tuple[str, ...]
    schema: Schema

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def _encode_row(values: Sequence, schema: Schema) -> list[float]:
    if len(values) != len(schema):
        raise ValidationError(f"expected {len(schema)} moderator values, got {len(values)}")
    row = [1.0]
    numeric = [(m, v) for m, v in zip(schema, values) if not m.is_factor]
    factor = [(m, v) for m, v in zip(schema, values) if m.is_factor]
    for m, v in numeric + factor:
        row.extend(m.encode(v))
    return row


def column_labels(schema: Schema) -> tuple[str, ...]:
    labels = ["intercept"]
    for m in [m for m in schema if not m.is_factor] + [m for m in schema if m.is_factor]:
        labels.extend(m.column_labels())
    return tuple(labels)


def check_rank(X: np.ndarray, labels: Sequence[str] = ()) -> None:
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if X.shape[0] < X.shape[1] or d.size == 0 or d[-1] <= RANK_TOL * d[0]:
        bad = [labels[piv[i]] for i in range(len(d)) if d[i] <= RANK_TOL * d[0]] if labels else []
        raise RankDeficient(
            "design matrix is rank deficient" + (f" (collinear: {bad})" if bad else "")
        )


def build_design_matrix(dataset: Dataset) -> DesignMatrix:
    """Intercept, numeric moderators, then dummy columns for factor levels.

    Numeric columns come before dummy columns regardless of schema order.
    """
    X = np.array([_encode_row(s.moderators, dataset.schema) for s in dataset.studies])
    labels = column_labels(dataset.schema)
    check_rank(X, labels)
    return DesignMatrix(X, labels, dataset.schema)


@dataclass(frozen=True)
class ModeratorPoint:
    values: tuple

    def __post_init__(self):
        if not isinstance(self.values, tuple):
            object.__setattr__(self, "values", tuple(self.values))

    @classmethod
    def of(cls, *values) -> "ModeratorPoint":
        return cls(tuple(values))

    def label(self) -> str:
        parts = []
        for v in self.values:
            parts.append(f"{v:g}" if isinstance(v, (int, float)) else str(v))
        return ",".join(parts) if parts else "(intercept)"


def prediction_row(point: ModeratorPoint, schema: Schema) -> np.ndarray:
    """Row ``r`` such that ``r @ beta`` is the mean effect at ``point``."""
    return np.array(_encode_row(point.values, schema))


@dataclass(frozen=True)
class WeightPolicy:
    kind: str = "equal"
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("equal", "proportion", "user"):
            raise ValidationError(f"unknown weight policy {self.kind!r}")
        if self.kind == "user":
            w = np.asarray(self.weights, dtype=float)
            if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValidationError("user weights must be nonnegative and sum to 1")

    def resolve(self, points: Sequence[ModeratorPoint], dataset: Dataset | None = None) -> np.ndarray:
        r = len(points)
        if self.kind == "equal":
            return np.full(r, 1.0 / r)
        if self.kind == "user":
            if len(self.weights) != r:
                raise ValidationError(f"{len(self.weights)} weights for {r} points")
            return np.asarray(self.weights, dtype=float)
        if dataset is None:
            raise ValidationError("proportion weights need the dataset")
        observed = [tuple(s.moderators) for s in dataset.studies]
        counts = np.array([sum(1 for o in observed if o == p.values) for p in points], float)
        if counts.sum() == 0:
            raise ValidationError("no study matches any grid point")
        return counts / counts.sum()


@dataclass(frozen=True)
class IntervalResult:
    lower: float
    upper: float
    scale: str
    method: str
    level: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"interval lower {self.lower} > upper {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return bool(self.lower <= value <= self.upper)

    def to(self, scale: str) -> "IntervalResult":
        """Re-express a measure interval on another measure scale."""
        if scale == self.scale:
            return self
        if self.scale not in links.MEASURE_SCALES or scale not in links.MEASURE_SCALES:
            raise ValueError(f"cannot convert {self.scale} interval to {scale}")
        lo = float(links.convert(self.lower, self.scale, scale))
        hi = float(links.convert(self.upper, self.scale, scale))
        return replace(self, lower=lo, upper=hi, scale=scale)

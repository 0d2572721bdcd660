"""Study-file parsing and bundled example datasets.

File format: CSV with a header row holding ``yi`` (effect), ``vi``
(within-study variance) and one column per moderator. An optional ``study``
column carries labels. Factor moderators are declared either in a schema block
of comment lines before the header::

    # factor allocation: random, alternate, systematic

or through the ``factors`` argument (``--factor`` on the command line). A
factor declared without levels takes its levels in order of first appearance.
"""

from __future__ import annotations

import csv
import io
import math
import re
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ParseError, ValidationError
from .model import Dataset, Moderator, StudyRecord

BUNDLED = {
    "bcg": ("bcg.csv", "BCG vaccine trials (Colditz et al. 1994): log RR, moderators ablat, allocation"),
    "haart": ("haart.csv", "Standard care quality and HAART adherence (de Bruin et al. 2009): moderators scq, ethnicity"),
}
RESERVED = ("yi", "vi", "study")
_FACTOR_LINE = re.compile(r"^#\s*factor\s+([A-Za-z_][\w.]*)\s*(?::\s*(.*))?$")


def _data_path(filename: str):
    return resources.files("metacv").joinpath("data", filename)


def available_datasets() -> list[tuple[str, str, bool]]:
    """(name, description, present) for every bundled dataset name."""
    return [(n, d, _data_path(f).is_file()) for n, (f, d) in BUNDLED.items()]


def _parse_number(text: str, row: int, col: str) -> float:
    try:
        # float() is locale independent; reject comma decimals explicitly
        if "," in text:
            raise ValueError
        x = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number", row, col) from None
    if not math.isfinite(x):
        raise ParseError(f"non-finite value {text!r}", row, col)
    return x


def parse_dataset(
    text: str,
    factors: Mapping[str, Sequence[str] | None] | Sequence[str] | None = None,
    name: str = "",
) -> Dataset:
    """Parse study-file text into a validated :class:`Dataset`."""
    declared: dict[str, tuple[str, ...] | None] = {}
    body = []
    for line in text.splitlines():
        s = line.strip()
        if s.startswith("#"):
            m = _FACTOR_LINE.match(s)
            if m:
                levels = m.group(2)
                declared[m.group(1)] = (
                    tuple(l.strip() for l in levels.split(",") if l.strip()) if levels else None
                )
            continue
        if s:
            body.append(line)
    if isinstance(factors, Mapping):
        declared.update({k: tuple(v) if v else None for k, v in factors.items()})
    elif factors:
        for f in factors:
            declared.setdefault(f, None)

    reader = csv.reader(io.StringIO("\n".join(body)))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty file") from None
    for req in ("yi", "vi"):
        if req not in header:
            raise ParseError(f"missing required column {req!r}", 1)
    if len(set(header)) != len(header):
        raise ParseError(f"duplicate column names in header {header}", 1)
    mod_names = [h for h in header if h not in RESERVED]
    unknown = [f for f in declared if f not in mod_names]
    if unknown:
        raise ValidationError(f"declared factor(s) {unknown} not found in header {header}")

    rows = []
    for i, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(rec)}", i)
        rows.append((i, dict(zip(header, (c.strip() for c in rec)))))
    if not rows:
        raise ParseError("no data rows")

    schema = []
    for mn in mod_names:
        if mn in declared:
            levels = declared[mn]
            if levels is None:
                seen: list[str] = []
                for _, r in rows:
                    if r[mn] not in seen:
                        seen.append(r[mn])
                levels = tuple(seen)
            schema.append(Moderator(mn, levels))
        else:
            schema.append(Moderator(mn))

    studies, problems = [], []
    for i, r in rows:
        yi = _parse_number(r["yi"], i, "yi")
        vi = _parse_number(r["vi"], i, "vi")
        if vi <= 0:
            problems.append(f"row {i}: vi must be positive, got {r['vi']}")
            continue
        vals = []
        for m in schema:
            cell = r[m.name]
            if cell == "":
                raise ParseError("missing moderator value", i, m.name)
            if m.is_factor:
                if cell not in m.levels:
                    problems.append(f"row {i}: level {cell!r} of {m.name!r} not in {list(m.levels)}")
                vals.append(cell)
            else:
                vals.append(_parse_number(cell, i, m.name))
        studies.append(StudyRecord(yi, vi, tuple(vals), r.get("study", str(i - 1))))
    if problems:
        raise ValidationError("invalid records: " + "; ".join(problems))
    return Dataset(tuple(studies), tuple(schema), name)


def load_dataset(
    path_or_name: str | Path,
    factors: Mapping[str, Sequence[str] | None] | Sequence[str] | None = None,
) -> Dataset:
    """Load a study file, or a bundled dataset by name (``bcg``, ``haart``)."""
    key = str(path_or_name)
    if key in BUNDLED:
        res = _data_path(BUNDLED[key][0])
        if not res.is_file():
            raise ValidationError(
                f"bundled dataset {key!r} is not shipped with this build "
                f"(see data/PROVENANCE.md); pass a CSV path instead"
            )
        return parse_dataset(res.read_text(encoding="utf-8"), factors, key)
    p = Path(key)
    if not p.is_file():
        raise ValidationError(f"no such dataset or file: {key!r}")
    return parse_dataset(p.read_text(encoding="utf-8"), factors, p.stem)

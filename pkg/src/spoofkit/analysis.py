"""Reliability and bias reporting over score sets.

Bins scores by duration or quality and reports per-bin EER (where both
classes are present), plus per-category accuracy tables with deviation
flags. Output rows are plot-ready: each bin carries a marker size
proportional to its count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .evaluation import ScoreSet, compute_eer, thresholded_metrics

DEFAULT_DURATION_EDGES = (0.0, 2.0, 4.0, 8.0, 16.0, float("inf"))
DEFAULT_SISDR_STEP_DB = 5.0

BIN_FIELDS = ("duration_s", "quality_sisdr_db")


@dataclass(frozen=True)
class BinSpec:
    field: str
    edges: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.field not in BIN_FIELDS:
            raise ValueError(f"bin field must be one of {BIN_FIELDS}, got {self.field!r}")
        if len(self.edges) < 2:
            raise ValueError("need at least 2 edges")
        if any(a >= b for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("edges must be strictly increasing")


@dataclass
class BinRow:
    low: float
    high: float
    count: int
    eer: Optional[float] = None
    note: Optional[str] = None
    marker_size: float = 0.0


@dataclass
class BinReport:
    spec: BinSpec
    rows: list[BinRow]
    n_missing: int = 0
    n_out_of_range: int = 0


def binned_eer(s: ScoreSet, spec: BinSpec) -> BinReport:
    """Per-bin EER over [e_i, e_{i+1}) bins of the chosen field.

    Records with the field missing are counted separately, not binned.
    Bins holding a single class report their count with a note instead of
    an EER. Marker sizes are counts normalized by the largest bin.
    """
    missing = 0
    out_of_range = 0
    binned: list[list] = [[] for _ in range(len(spec.edges) - 1)]
    for r in s.records:
        value = getattr(r, spec.field)
        if value is None:
            missing += 1
            continue
        if value < spec.edges[0] or value >= spec.edges[-1]:
            out_of_range += 1
            continue
        idx = int(np.searchsorted(spec.edges, value, side="right")) - 1
        binned[idx].append(r)

    rows = []
    for i, records in enumerate(binned):
        row = BinRow(low=spec.edges[i], high=spec.edges[i + 1], count=len(records))
        if not records:
            row.note = "empty bin"
        else:
            subset = ScoreSet(records)
            if len(np.unique(subset.labels())) < 2:
                row.note = "single-class bin"
            else:
                row.eer = compute_eer(subset)[0]
        rows.append(row)
    max_count = max((row.count for row in rows), default=0)
    for row in rows:
        row.marker_size = row.count / max_count if max_count else 0.0
    return BinReport(spec=spec, rows=rows, n_missing=missing,
                     n_out_of_range=out_of_range)


def write_bin_report_csv(report: BinReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count", "eer", "marker_size", "note"])
        for row in report.rows:
            writer.writerow([
                format(row.low, ".9g"), format(row.high, ".9g"), row.count,
                "" if row.eer is None else format(row.eer, ".9g"),
                format(row.marker_size, ".9g"), row.note or "",
            ])


@dataclass
class CategoryRow:
    category: str
    count: int
    accuracy: float
    flagged: bool


@dataclass
class CategoryReport:
    field: str
    threshold: float
    global_accuracy: float
    rows: list[CategoryRow] = field(default_factory=list)
    n_missing: int = 0


def category_report(s: ScoreSet, category_field: str, threshold: float = 0.5,
                    flag_delta: float = 0.1) -> CategoryReport:
    """Accuracy per category value at a threshold, with bias flags.

    A category is flagged when its accuracy deviates from the global
    accuracy by more than flag_delta. Records missing the field are
    counted separately; if none carry it, that is an error.
    """
    if not s.records:
        raise ValueError("empty score set")
    if not hasattr(s.records[0], category_field):
        raise ValueError(f"records have no field {category_field!r}")
    tagged = [r for r in s.records if getattr(r, category_field) is not None]
    if not tagged:
        raise ValueError(f"no record carries the field {category_field!r}")
    global_acc, _, _ = thresholded_metrics(s, threshold)
    by_cat: dict[str, list] = {}
    for r in tagged:
        by_cat.setdefault(str(getattr(r, category_field)), []).append(r)
    rows = []
    for cat in sorted(by_cat):
        acc, _, _ = thresholded_metrics(ScoreSet(by_cat[cat]), threshold)
        rows.append(CategoryRow(category=cat, count=len(by_cat[cat]), accuracy=acc,
                                flagged=abs(acc - global_acc) > flag_delta))
    return CategoryReport(field=category_field, threshold=threshold,
                          global_accuracy=global_acc, rows=rows,
                          n_missing=len(s) - len(tagged))


def write_category_report_csv(report: CategoryReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "count", "accuracy", "flagged"])
        for row in report.rows:
            writer.writerow([row.category, row.count,
                             format(row.accuracy, ".9g"), int(row.flagged)])

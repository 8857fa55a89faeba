"""Utterance scoring and metrics: EER, AUC, thresholded accuracy/F1.

Scores are always p(fake): higher means more likely spoofed. EER uses a
threshold sweep over all distinct scores with linear interpolation at the
FAR/FRR crossing, which makes it checkable against a brute-force oracle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import dsp, model
from .manifest import Manifest, ManifestEntry


@dataclass(frozen=True)
class ScoreRecord:
    id: str
    score: float
    label: str
    duration_s: float = 0.0
    quality_sisdr_db: Optional[float] = None
    attack: Optional[str] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.label not in ("real", "fake"):
            raise ValueError(f"label must be 'real' or 'fake', got {self.label!r}")


@dataclass
class ScoreSet:
    records: list[ScoreRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records], dtype=np.float64)

    def labels(self) -> np.ndarray:
        """0 = real, 1 = fake."""
        return np.array([1 if r.label == "fake" else 0 for r in self.records])


CSV_HEADER = ("id", "score", "label", "duration_s", "quality_sisdr_db", "attack")


def write_scores_csv(s: ScoreSet, path: str | Path) -> None:
    """Score CSV with 9-significant-digit scores; round-trips byte-stably."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in s.records:
            writer.writerow([
                r.id, format(r.score, ".9g"), r.label, format(r.duration_s, ".9g"),
                "" if r.quality_sisdr_db is None else format(r.quality_sisdr_db, ".9g"),
                r.attack or "",
            ])


def read_scores_csv(path: str | Path) -> ScoreSet:
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for row in reader:
            records.append(ScoreRecord(
                id=row["id"], score=float(row["score"]), label=row["label"],
                duration_s=float(row["duration_s"]) if row["duration_s"] else 0.0,
                quality_sisdr_db=float(row["quality_sisdr_db"])
                if row["quality_sisdr_db"] else None,
                attack=row["attack"] or None,
            ))
    return ScoreSet(records)


# ---------------------------------------------------------------------------
# Scoring

def aggregate_scores(window_scores, agg: str) -> float:
    if agg == "mean":
        return float(np.mean(window_scores))
    if agg == "max":
        return float(np.max(window_scores))
    raise ValueError(f"unknown aggregation {agg!r} (expected 'mean' or 'max')")


def score_utterance(state: model.ModelState, provider, entry: ManifestEntry,
                    mode: str = "windowed", agg: str = "mean",
                    win_s: float = dsp.WINDOW_S, step_s: float = dsp.STEP_S) -> float:
    """p(fake) for one utterance, whole or windowed-and-aggregated."""
    if mode == "whole":
        trace = model.forward(state, provider.embed(entry))
        return model.fake_probability(trace.logits)
    if mode == "windowed":
        segments = provider.windows(entry, win_s, step_s)
        window_scores = [model.fake_probability(model.forward(state, seg).logits)
                         for seg in segments]
        return aggregate_scores(window_scores, agg)
    raise ValueError(f"unknown scoring mode {mode!r} (expected 'whole' or 'windowed')")


# ---------------------------------------------------------------------------
# Metrics

def _far_frr_at(scores: np.ndarray, labels: np.ndarray,
                thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """FAR/FRR at each threshold for the rule: score >= t predicts fake."""
    real = scores[labels == 0]
    fake = scores[labels == 1]
    far = np.array([(real >= t).sum() for t in thresholds], dtype=np.float64) / len(real)
    frr = np.array([(fake < t).sum() for t in thresholds], dtype=np.float64) / len(fake)
    return far, frr


def _interpolate_crossing(thresholds, far, frr) -> tuple[float, float]:
    """First adjacent pair where FAR-FRR changes sign, linearly interpolated."""
    d = far - frr
    for i in range(len(thresholds) - 1):
        if d[i] >= 0.0 >= d[i + 1]:
            denom = d[i] - d[i + 1]
            lam = 0.0 if denom == 0.0 else d[i] / denom
            eer = far[i] + lam * (far[i + 1] - far[i])
            thr = thresholds[i] + lam * (thresholds[i + 1] - thresholds[i])
            return float(eer), float(thr)
    # d runs from +1 (everything accepted as fake) to -1; a crossing exists.
    raise AssertionError("no FAR/FRR crossing found")


def compute_eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its operating threshold.

    Sweeps every distinct score plus a sentinel just above the maximum,
    then interpolates linearly between the adjacent operating points that
    bracket the FAR = FRR crossing.
    """
    scores, labels = s.scores(), s.labels()
    if len(np.unique(labels)) < 2:
        raise ValueError("EER needs at least one record of each class")
    distinct = np.unique(scores)
    thresholds = np.append(distinct, np.nextafter(distinct[-1], np.inf))
    far, frr = _far_frr_at(scores, labels, thresholds)
    return _interpolate_crossing(thresholds, far, frr)


def compute_auc(s: ScoreSet) -> float:
    """Mann-Whitney AUC: P(score_fake > score_real), ties counted half."""
    scores, labels = s.scores(), s.labels()
    if len(np.unique(labels)) < 2:
        raise ValueError("AUC needs at least one record of each class")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    n_fake = int((labels == 1).sum())
    n_real = len(labels) - n_fake
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_fake * (n_fake + 1) / 2.0) / (n_fake * n_real)


def thresholded_metrics(s: ScoreSet, threshold: float = 0.5
                        ) -> tuple[float, float, dict[str, int]]:
    """Accuracy, fake-class F1, and confusion counts at a fixed threshold.

    F1 is 0 by convention when its denominator vanishes (no true or
    predicted fakes).
    """
    if len(s) == 0:
        raise ValueError("empty score set")
    scores, labels = s.scores(), s.labels()
    pred = (scores >= threshold).astype(int)
    tp = int(((pred == 1) & (labels == 1)).sum())
    fn = int(((pred == 0) & (labels == 1)).sum())
    fp = int(((pred == 1) & (labels == 0)).sum())
    tn = int(((pred == 0) & (labels == 0)).sum())
    accuracy = (tp + tn) / len(s)
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom > 0 else 0.0
    return accuracy, f1, {"tp": tp, "fn": fn, "fp": fp, "tn": tn}


# ---------------------------------------------------------------------------
# Manifest-level evaluation

def evaluate_manifest(state: model.ModelState, provider, m: Manifest,
                      mode: str = "windowed", agg: str = "mean",
                      threshold: float = 0.5, win_s: float = dsp.WINDOW_S,
                      step_s: float = dsp.STEP_S, workers: int = 1
                      ) -> tuple[ScoreSet, dict]:
    """Score every entry and assemble the metrics report.

    Entries that fail to load are excluded from the metrics and surfaced in
    the report rather than silently counted against either class. Record
    order matches manifest order regardless of the worker count.
    """
    def one(entry: ManifestEntry):
        return score_utterance(state, provider, entry, mode, agg, win_s, step_s)

    results: list[Optional[float]] = []
    failures: list[tuple[str, str]] = []
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        def safe(entry):
            try:
                return one(entry)
            except Exception as exc:  # noqa: BLE001 - reported, not swallowed
                return exc
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for entry, res in zip(m.entries, pool.map(safe, m.entries)):
                if isinstance(res, Exception):
                    failures.append((entry.id, str(res)))
                    results.append(None)
                else:
                    results.append(res)
    else:
        for entry in m.entries:
            try:
                results.append(one(entry))
            except Exception as exc:  # noqa: BLE001
                failures.append((entry.id, str(exc)))
                results.append(None)

    records = [ScoreRecord(id=e.id, score=score, label=e.label,
                           duration_s=e.duration_s,
                           quality_sisdr_db=e.quality_sisdr_db, attack=e.attack)
               for e, score in zip(m.entries, results) if score is not None]
    score_set = ScoreSet(records)

    report: dict = {
        "manifest": m.name, "mode": mode, "agg": agg, "threshold": threshold,
        "n_scored": len(records), "n_failed": len(failures),
        "failed": [{"id": i, "error": msg} for i, msg in failures],
    }
    labels = score_set.labels()
    if len(score_set) and len(np.unique(labels)) == 2:
        eer, eer_thr = compute_eer(score_set)
        auc = compute_auc(score_set)
        accuracy, f1, confusion = thresholded_metrics(score_set, threshold)
        report["metrics"] = {"eer": eer, "eer_threshold": eer_thr, "auc": auc,
                             "accuracy": accuracy, "f1": f1, "confusion": confusion}
        report["per_attack_eer"] = _per_attack_eer(score_set)
    else:
        report["metrics"] = None
        report["note"] = "need both classes for EER/AUC"
    return score_set, report


def _per_attack_eer(s: ScoreSet) -> dict:
    """EER per attack tag: that attack's fakes pooled against all reals."""
    reals = [r for r in s.records if r.label == "real"]
    fakes = [r for r in s.records if r.label == "fake"]
    out: dict[str, dict] = {}
    attacks = sorted({r.attack or "untagged" for r in fakes})
    for attack in attacks:
        subset = [r for r in fakes if (r.attack or "untagged") == attack]
        if not reals:
            out[attack] = {"n_fake": len(subset), "note": "no real records"}
            continue
        eer, _ = compute_eer(ScoreSet(reals + subset))
        out[attack] = {"n_fake": len(subset), "eer": eer}
    return out

"""Dataset manifests: JSONL parsing, deterministic sampling, subset splits.

A manifest is a line-delimited JSON file, one entry per line. Iteration
order is file order, and all sampling is a deterministic function of
(manifest order, arguments, seed) using the PCG64 generator, so an
experiment is reproducible from a manifest file plus a seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

LABELS = ("real", "fake")
SUBSETS = ("train", "val", "test")

# Serialized field order; `root` is runtime-only bookkeeping.
_FIELDS = ("id", "source", "label", "attack", "duration_s",
           "quality_sisdr_db", "codec_tag", "subset")


class ManifestError(ValueError):
    """Malformed manifest content or an unsatisfiable sampling request."""


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    source: str
    label: str
    duration_s: float
    attack: Optional[str] = None
    quality_sisdr_db: Optional[float] = None
    codec_tag: Optional[str] = None
    subset: Optional[str] = None
    # Directory that relative `source` paths are resolved against. Set by
    # load_manifest / synthdata; never serialized.
    root: Optional[str] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("entry id must be non-empty")
        if self.label not in LABELS:
            raise ManifestError(
                f"entry {self.id!r}: label must be one of {LABELS}, got {self.label!r}")
        if not (self.duration_s >= 0):
            raise ManifestError(f"entry {self.id!r}: duration_s must be >= 0")
        if self.subset is not None and self.subset not in SUBSETS:
            raise ManifestError(
                f"entry {self.id!r}: subset must be one of {SUBSETS}, got {self.subset!r}")

    def resolved_source(self) -> str:
        """Absolute path (or path relative to cwd) of the backing file."""
        if os.path.isabs(self.source) or self.root is None:
            return self.source
        return os.path.join(self.root, self.source)


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    name: str = "manifest"

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for e in self.entries:
            if e.id in seen:
                raise ManifestError(f"duplicate entry id {e.id!r}")
            seen.add(e.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def counts_by_label(self) -> dict[str, int]:
        counts = {label: 0 for label in LABELS}
        for e in self.entries:
            counts[e.label] += 1
        return counts


def _entry_from_dict(d: dict, lineno: int, root: Optional[str]) -> ManifestEntry:
    missing = [k for k in ("id", "source", "label", "duration_s") if k not in d]
    if missing:
        raise ManifestError(f"line {lineno}: missing required fields {missing}")
    try:
        return ManifestEntry(
            id=str(d["id"]),
            source=str(d["source"]),
            label=d["label"],
            duration_s=float(d["duration_s"]),
            attack=d.get("attack"),
            quality_sisdr_db=None if d.get("quality_sisdr_db") is None
            else float(d["quality_sisdr_db"]),
            codec_tag=d.get("codec_tag"),
            subset=d.get("subset"),
            root=root,
        )
    except ManifestError as exc:
        raise ManifestError(f"line {lineno}: {exc}") from exc


def load_manifest(path: str | Path) -> Manifest:
    """Parse a JSONL manifest. Unknown fields are ignored; duplicate ids rejected."""
    path = Path(path)
    entries: list[ManifestEntry] = []
    root = str(path.parent)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"line {lineno}: expected a JSON object")
            entries.append(_entry_from_dict(obj, lineno, root))
    return Manifest(entries=entries, name=path.stem)


def save_manifest(m: Manifest, path: str | Path) -> None:
    """Write JSONL, rewriting relative sources against the new location."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_root = str(path.parent)
    with path.open("w", encoding="utf-8") as fh:
        for e in m.entries:
            source = e.source
            if e.root is not None and not os.path.isabs(source):
                if os.path.abspath(e.root) != os.path.abspath(new_root):
                    source = os.path.relpath(os.path.join(e.root, source), new_root)
            record = {
                "id": e.id, "source": source, "label": e.label,
                "attack": e.attack, "duration_s": e.duration_s,
                "quality_sisdr_db": e.quality_sisdr_db,
                "codec_tag": e.codec_tag, "subset": e.subset,
            }
            fh.write(json.dumps({k: record[k] for k in _FIELDS
                                 if record[k] is not None}) + "\n")


def _rng(seed: int) -> np.random.Generator:
    # PCG64: fixed, documented 64-bit generator; identical streams on
    # every platform for a given seed.
    return np.random.Generator(np.random.PCG64(seed))


def sample_fixed(m: Manifest, n: int, seed: int) -> Manifest:
    """Uniform sample of n entries without replacement, preserving order."""
    if not 0 <= n <= len(m.entries):
        raise ManifestError(
            f"cannot sample {n} entries from a manifest of {len(m.entries)}")
    idx = _rng(seed).choice(len(m.entries), size=n, replace=False)
    keep = sorted(int(i) for i in idx)
    return Manifest(entries=[m.entries[i] for i in keep], name=m.name)


def sample_proportioned(m: Manifest, n: int, fake_fraction: float, seed: int) -> Manifest:
    """Sample with an exact class mix: round(n * fake_fraction) fakes, rest real.

    Each class is sampled uniformly without replacement; the output keeps
    the input's relative order.
    """
    if not 0.0 <= fake_fraction <= 1.0:
        raise ManifestError("fake_fraction must lie in [0, 1]")
    n_fake = int(np.floor(n * fake_fraction + 0.5))
    n_real = n - n_fake
    by_class = {label: [i for i, e in enumerate(m.entries) if e.label == label]
                for label in LABELS}
    if n_fake > len(by_class["fake"]):
        raise ManifestError(
            f"need {n_fake} fake entries but manifest has {len(by_class['fake'])}")
    if n_real > len(by_class["real"]):
        raise ManifestError(
            f"need {n_real} real entries but manifest has {len(by_class['real'])}")
    rng = _rng(seed)
    keep: list[int] = []
    for label, want in (("real", n_real), ("fake", n_fake)):
        pool = by_class[label]
        chosen = rng.choice(len(pool), size=want, replace=False)
        keep.extend(pool[int(i)] for i in chosen)
    keep.sort()
    return Manifest(entries=[m.entries[i] for i in keep], name=m.name)


def split_by_subset(m: Manifest) -> tuple[Manifest, Manifest, Manifest]:
    """Partition into (train, val, test) by the subset tag."""
    buckets: dict[str, list[ManifestEntry]] = {s: [] for s in SUBSETS}
    for e in m.entries:
        if e.subset is None:
            raise ManifestError(f"entry {e.id!r} has no subset tag")
        buckets[e.subset].append(e)
    return tuple(Manifest(entries=buckets[s], name=f"{m.name}.{s}")
                 for s in SUBSETS)  # type: ignore[return-value]

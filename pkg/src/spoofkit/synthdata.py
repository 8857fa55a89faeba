"""Deterministic synthetic corpora for tests and desk-scale acceptance runs.

Two generators: a WAV corpus of harmonic "speech-like" tones whose spectral
tilt (and a touch of harmonic jitter) differs between the real and fake
classes, and a Gaussian class-conditional embedding store. The separation
parameter controls how far apart the classes are; zero makes them
identically distributed. Everything is a pure function of the spec's seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import dsp, model
from .manifest import Manifest, ManifestEntry, save_manifest

BASE_NOISE_SNR_DB = 40.0  # fixed noise floor under every synthetic utterance
WAV_POWER = 0.01          # headroom so PCM16 writing never clips
SUBSET_FRACTIONS = (0.7, 0.15, 0.15)
ATTACK_TAGS = ("synth_a", "synth_b")


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int
    duration_range_s: tuple[float, float] = (1.0, 3.0)
    separation: float = 1.0
    seed: int = 0
    # When set, each file gets extra noise at an SNR interpolated linearly
    # from (short-duration SNR, long-duration SNR) over the duration range;
    # this is how duration-dependent reliability corpora are built.
    snr_by_duration_db: Optional[tuple[float, float]] = None
    embedding_dim: int = 16

    def __post_init__(self) -> None:
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        lo, hi = self.duration_range_s
        if not 0.0 < lo <= hi:
            raise ValueError("duration range must satisfy 0 < low <= high")
        if self.separation < 0:
            raise ValueError("separation must be >= 0")


def _subsets(n: int, rng: np.random.Generator) -> list[str]:
    """Shuffled train/val/test assignment with the standard fractions."""
    n_train = int(np.ceil(SUBSET_FRACTIONS[0] * n))
    n_val = int(np.ceil(SUBSET_FRACTIONS[1] * n))
    tags = ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)
    order = rng.permutation(n)
    return [tags[int(i)] for i in order]


def _synth_utterance(rng: np.random.Generator, n_samples: int, tilt: float,
                     jitter_std: float, extra_snr_db: Optional[float]
                     ) -> np.ndarray:
    rate = dsp.PIPELINE_RATE_HZ
    t = np.arange(n_samples) / rate
    f0 = float(rng.uniform(110.0, 240.0))
    x = np.zeros(n_samples)
    k = 1
    while k * f0 < 3600.0:
        freq = k * f0 * (1.0 + float(rng.normal(0.0, jitter_std)))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        x += k ** (-tilt) * np.sin(2.0 * np.pi * freq * t + phase)
        k += 1
    # gentle amplitude modulation so analysis windows are not identical
    x *= 1.0 + 0.3 * np.sin(2.0 * np.pi * float(rng.uniform(1.0, 4.0)) * t
                            + float(rng.uniform(0.0, 2.0 * np.pi)))
    buf = dsp.AudioBuffer(x, rate)
    buf = dsp.add_awgn(buf, BASE_NOISE_SNR_DB, rng)
    if extra_snr_db is not None:
        buf = dsp.add_awgn(buf, extra_snr_db, rng)
    return dsp.set_power(buf, WAV_POWER).samples


def _class_tilt(label: str, separation: float) -> float:
    return 1.0 + (0.35 if label == "fake" else -0.35) * separation


def _class_jitter(label: str, separation: float) -> float:
    return 0.0005 + (0.002 * separation if label == "fake" else 0.0)


def generate_corpus(spec: SynthSpec, out_dir: str | Path) -> Manifest:
    """Write a WAV corpus plus manifest.jsonl; returns the manifest.

    Exactly n_per_class files per class, with stratified train/val/test
    tags, synthetic SI-SDR-style quality scores (the realized extra-noise
    SNR, or the noise floor), and attack tags on the fake class.
    """
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    lo, hi = spec.duration_range_s
    entries: list[ManifestEntry] = []
    for label in ("real", "fake"):
        tilt = _class_tilt(label, spec.separation)
        jitter = _class_jitter(label, spec.separation)
        subsets = _subsets(spec.n_per_class, rng)
        for i in range(spec.n_per_class):
            duration = float(rng.uniform(lo, hi))
            n_samples = int(round(duration * dsp.PIPELINE_RATE_HZ))
            extra_snr = None
            if spec.snr_by_duration_db is not None:
                s_lo, s_hi = spec.snr_by_duration_db
                frac = 0.0 if hi == lo else (duration - lo) / (hi - lo)
                extra_snr = s_lo + (s_hi - s_lo) * frac
            samples = _synth_utterance(rng, n_samples, tilt, jitter, extra_snr)
            utt_id = f"{label}_{i:05d}"
            rel_path = f"audio/{utt_id}.wav"
            dsp.save_wav(audio_dir / f"{utt_id}.wav",
                         dsp.AudioBuffer(samples, dsp.PIPELINE_RATE_HZ))
            entries.append(ManifestEntry(
                id=utt_id, source=rel_path, label=label,
                duration_s=n_samples / dsp.PIPELINE_RATE_HZ,
                attack=ATTACK_TAGS[i % len(ATTACK_TAGS)] if label == "fake" else None,
                quality_sisdr_db=extra_snr if extra_snr is not None
                else BASE_NOISE_SNR_DB,
                subset=subsets[i], root=str(out_dir),
            ))
    m = Manifest(entries=entries, name="synth_corpus")
    save_manifest(m, out_dir / "manifest.jsonl")
    return m


def generate_embedding_store(spec: SynthSpec, out_dir: str | Path) -> Manifest:
    """Write Gaussian class-conditional embeddings plus manifest.jsonl.

    Class means are Euclidean-separated by exactly the separation
    parameter; per-frame noise is unit isotropic Gaussian. Frame counts
    derive from the drawn duration at a 10 ms hop.
    """
    out_dir = Path(out_dir)
    emb_dir = out_dir / "embeddings"
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    d = spec.embedding_dim
    offset = spec.separation / np.sqrt(d)
    means = {"real": np.zeros(d), "fake": np.full(d, offset)}
    lo, hi = spec.duration_range_s
    hop_s = 0.010
    entries: list[ManifestEntry] = []
    for label in ("real", "fake"):
        subsets = _subsets(spec.n_per_class, rng)
        for i in range(spec.n_per_class):
            duration = float(rng.uniform(lo, hi))
            t = max(1, int(round(duration / hop_s)))
            frames = means[label] + rng.standard_normal((t, d))
            utt_id = f"{label}_{i:05d}"
            rel_path = f"embeddings/{utt_id}.emb"
            model.save_embedding(emb_dir / f"{utt_id}.emb", utt_id, frames,
                                 frame_hop_s=hop_s)
            entries.append(ManifestEntry(
                id=utt_id, source=rel_path, label=label, duration_s=duration,
                attack=ATTACK_TAGS[i % len(ATTACK_TAGS)] if label == "fake" else None,
                subset=subsets[i], root=str(out_dir),
            ))
    m = Manifest(entries=entries, name="synth_embeddings")
    save_manifest(m, out_dir / "manifest.jsonl")
    return m

"""Waveform-domain processing.

Covers the full signal path: standardization and bandpass conditioning,
power scaling, additive white Gaussian noise at a target SNR, room impulse
response convolution, the 8 kHz resampling round trip, segmentation and
cropping, and the built-in log band-energy feature front end.

Every stochastic operation takes an explicit numpy Generator so outputs
are a pure function of (input, parameters, seed).
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.signal import fftconvolve

log = logging.getLogger(__name__)

PIPELINE_RATE_HZ = 16000

# Conditioning / augmentation defaults.
BANDPASS_LOW_HZ = 300.0
BANDPASS_HIGH_HZ = 3400.0
BANDPASS_TAPS = 511
POWER_SCALE_RANGE = (1e-5, 1.2)
AWGN_SNR_RANGE_DB = (5.0, 30.0)
WINDOW_S = 3.5
STEP_S = 0.5

_LOG_FLOOR = 1e-10  # band-energy floor before log


class AudioFormatError(ValueError):
    """Unsupported or malformed audio input."""


@dataclass(frozen=True)
class AudioBuffer:
    """Mono sample sequence with its sample rate. Samples are float64."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioFormatError("AudioBuffer samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise AudioFormatError("AudioBuffer samples must be finite")
        if self.sample_rate_hz <= 0:
            raise AudioFormatError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def _require_pipeline_rate(a: AudioBuffer, op: str) -> None:
    if a.sample_rate_hz != PIPELINE_RATE_HZ:
        raise AudioFormatError(
            f"{op} requires {PIPELINE_RATE_HZ} Hz input, got {a.sample_rate_hz} Hz")


# ---------------------------------------------------------------------------
# WAV I/O (PCM 16-bit signed LE, mono, 16 kHz)

def load_wav(path: str | Path) -> AudioBuffer:
    """Load a mono 16 kHz PCM16 WAV file, scaled to [-1, 1)."""
    path = Path(path)
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise AudioFormatError(
                f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        if wf.getframerate() != PIPELINE_RATE_HZ:
            raise AudioFormatError(
                f"{path}: expected {PIPELINE_RATE_HZ} Hz, got {wf.getframerate()} Hz")
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples=samples, sample_rate_hz=PIPELINE_RATE_HZ)


def save_wav(path: str | Path, a: AudioBuffer) -> None:
    """Write PCM16 mono WAV; samples are clipped to the representable range."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(a.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(a.sample_rate_hz)
        wf.writeframes(pcm.tobytes())


def load_rir_bank(directory: str | Path) -> list[AudioBuffer]:
    """Load every .wav in a directory (sorted by name) as impulse responses."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.wav"))
    if not paths:
        raise AudioFormatError(f"no .wav files in RIR directory {directory}")
    return [load_wav(p) for p in paths]


# ---------------------------------------------------------------------------
# Conditioning

def standardize(a: AudioBuffer) -> AudioBuffer:
    """Remove the mean and scale to unit variance.

    A constant input has no scale to normalize; it comes back zero-mean and
    otherwise untouched, with a warning logged (degenerate case).
    """
    if len(a) == 0:
        raise ValueError("cannot standardize an empty buffer")
    x = a.samples
    mu = x.mean()
    var = np.mean((x - mu) ** 2)
    if var == 0.0:
        log.warning("standardize: constant input (degenerate), returning zeros")
        return AudioBuffer(x - mu, a.sample_rate_hz)
    return AudioBuffer((x - mu) / np.sqrt(var), a.sample_rate_hz)


def _lowpass_taps(num_taps: int, cutoff_hz: float, rate: int) -> np.ndarray:
    """Hamming-windowed sinc lowpass, unit DC gain, odd length."""
    n = np.arange(num_taps) - (num_taps - 1) / 2.0
    h = 2.0 * cutoff_hz / rate * np.sinc(2.0 * cutoff_hz * n / rate)
    return h * np.hamming(num_taps)


def _bandpass_taps(num_taps: int, low_hz: float, high_hz: float, rate: int) -> np.ndarray:
    n = np.arange(num_taps) - (num_taps - 1) / 2.0

    def lp(fc: float) -> np.ndarray:
        return 2.0 * fc / rate * np.sinc(2.0 * fc * n / rate)

    return (lp(high_hz) - lp(low_hz)) * np.hamming(num_taps)


def _filter_compensated(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Apply a linear-phase FIR and remove its group delay; output len == input len."""
    delay = (len(taps) - 1) // 2
    full = fftconvolve(x, taps)
    return full[delay:delay + len(x)]


def bandpass(a: AudioBuffer,
             low_hz: float = BANDPASS_LOW_HZ,
             high_hz: float = BANDPASS_HIGH_HZ,
             num_taps: int = BANDPASS_TAPS) -> AudioBuffer:
    """Linear-phase FIR bandpass (Hamming-windowed sinc), delay compensated."""
    nyquist = a.sample_rate_hz / 2.0
    if not (0.0 < low_hz < high_hz < nyquist):
        raise ValueError(
            f"bandpass cutoffs must satisfy 0 < low < high < {nyquist} Hz, "
            f"got ({low_hz}, {high_hz})")
    taps = _bandpass_taps(num_taps, low_hz, high_hz, a.sample_rate_hz)
    return AudioBuffer(_filter_compensated(a.samples, taps), a.sample_rate_hz)


def condition(a: AudioBuffer,
              low_hz: float = BANDPASS_LOW_HZ,
              high_hz: float = BANDPASS_HIGH_HZ) -> AudioBuffer:
    """Standard signal-conditioning entry point: standardize, then bandpass."""
    _require_pipeline_rate(a, "condition")
    return bandpass(standardize(a), low_hz, high_hz)


# ---------------------------------------------------------------------------
# Power

def power(a: AudioBuffer) -> float:
    """Mean squared amplitude."""
    return float(np.mean(a.samples ** 2)) if len(a) else 0.0


def set_power(a: AudioBuffer, target_power: float) -> AudioBuffer:
    """Scale so the mean squared amplitude equals target_power."""
    if target_power <= 0:
        raise ValueError("target power must be positive")
    p = power(a)
    if p == 0.0:
        raise ValueError("cannot set the power of a zero-energy buffer")
    return AudioBuffer(a.samples * np.sqrt(target_power / p), a.sample_rate_hz)


def random_power_scale(a: AudioBuffer,
                       scale_range: tuple[float, float] = POWER_SCALE_RANGE,
                       rng: Optional[np.random.Generator] = None) -> AudioBuffer:
    """Scale to a power drawn uniformly from scale_range."""
    lo, hi = scale_range
    if not (0.0 < lo <= hi):
        raise ValueError(f"power range must satisfy 0 < low <= high, got {scale_range}")
    if rng is None:
        raise ValueError("random_power_scale requires an explicit rng")
    return set_power(a, float(rng.uniform(lo, hi)))


# ---------------------------------------------------------------------------
# Augmentations

def add_awgn(a: AudioBuffer, snr_db: float, rng: np.random.Generator) -> AudioBuffer:
    """Add white Gaussian noise at an exact realized signal-to-noise ratio.

    The drawn noise is rescaled so its realized power matches the target
    exactly, so 10*log10(P_signal / P_noise) == snr_db up to float error.
    """
    p_sig = power(a)
    if p_sig == 0.0:
        raise ValueError("cannot add noise to a zero-power signal")
    noise = rng.standard_normal(len(a))
    p_noise_target = p_sig / (10.0 ** (snr_db / 10.0))
    noise *= np.sqrt(p_noise_target / np.mean(noise ** 2))
    return AudioBuffer(a.samples + noise, a.sample_rate_hz)


def convolve_rir(a: AudioBuffer, rir: AudioBuffer) -> AudioBuffer:
    """Convolve with an impulse response; truncate to input length and
    re-normalize to the input power so reverberation does not change level."""
    if a.sample_rate_hz != rir.sample_rate_hz:
        raise ValueError(
            f"sample rate mismatch: signal {a.sample_rate_hz} Hz, RIR {rir.sample_rate_hz} Hz")
    if len(rir) == 0:
        raise ValueError("empty impulse response")
    y = fftconvolve(a.samples, rir.samples)[:len(a)]
    p_in, p_out = power(a), float(np.mean(y ** 2))
    if p_out > 0.0:
        y = y * np.sqrt(p_in / p_out)
    return AudioBuffer(y, a.sample_rate_hz)


def resample_roundtrip(a: AudioBuffer) -> AudioBuffer:
    """Decimate 16 kHz -> 8 kHz and interpolate back, windowed-sinc both ways.

    Preserves length; content above the 4 kHz fold is strongly attenuated
    (the anti-alias lowpass is applied twice).
    """
    _require_pipeline_rate(a, "resample_roundtrip")
    taps = _lowpass_taps(255, 3800.0, PIPELINE_RATE_HZ)
    low = _filter_compensated(a.samples, taps)
    down = low[::2]
    up = np.zeros(2 * len(down))
    up[0::2] = down
    out = 2.0 * _filter_compensated(up, taps)[:len(a)]
    return AudioBuffer(out, a.sample_rate_hz)


# ---------------------------------------------------------------------------
# Segmentation

def _cyclic_pad(x: np.ndarray, length: int) -> np.ndarray:
    """Repeat the signal cyclically out to `length` samples."""
    reps = int(np.ceil(length / len(x)))
    return np.tile(x, reps)[:length]


def window_segments(a: AudioBuffer, win_s: float = WINDOW_S,
                    step_s: float = STEP_S) -> list[AudioBuffer]:
    """Slice into fixed windows at a fixed step.

    Inputs shorter than one window yield a single segment built by cyclic
    repetition padding, which keeps spectral statistics intact.
    """
    if win_s <= 0 or step_s <= 0:
        raise ValueError("window and step must be positive")
    win = int(round(win_s * a.sample_rate_hz))
    step = int(round(step_s * a.sample_rate_hz))
    if len(a) == 0:
        raise ValueError("cannot window an empty buffer")
    if len(a) < win:
        return [AudioBuffer(_cyclic_pad(a.samples, win), a.sample_rate_hz)]
    count = (len(a) - win) // step + 1
    return [AudioBuffer(a.samples[k * step:k * step + win], a.sample_rate_hz)
            for k in range(count)]


def center_crop(a: AudioBuffer, win_s: float = WINDOW_S) -> AudioBuffer:
    """Deterministic centered window; short inputs repetition-padded."""
    win = int(round(win_s * a.sample_rate_hz))
    if len(a) <= win:
        return AudioBuffer(_cyclic_pad(a.samples, win), a.sample_rate_hz)
    off = (len(a) - win) // 2
    return AudioBuffer(a.samples[off:off + win], a.sample_rate_hz)


def random_crop(a: AudioBuffer, win_s: float = WINDOW_S,
                rng: Optional[np.random.Generator] = None) -> AudioBuffer:
    """Uniformly random window of win_s; short inputs repetition-padded."""
    if rng is None:
        raise ValueError("random_crop requires an explicit rng")
    win = int(round(win_s * a.sample_rate_hz))
    if len(a) == 0:
        raise ValueError("cannot crop an empty buffer")
    if len(a) <= win:
        return AudioBuffer(_cyclic_pad(a.samples, win), a.sample_rate_hz)
    off = int(rng.integers(0, len(a) - win + 1))
    return AudioBuffer(a.samples[off:off + win], a.sample_rate_hz)


# ---------------------------------------------------------------------------
# Augmentation policy

@dataclass
class AugmentationPolicy:
    """Training-time augmentation recipe.

    Stages are applied in a fixed order: plugin, AWGN, RIR, optional
    resampling round trip, then the random power scale. Each stage draws
    its gate from the supplied rng in that order, so a given (input,
    policy, seed) always produces the same output.
    """

    awgn_probability: float = 0.0
    awgn_snr_range_db: tuple[float, float] = AWGN_SNR_RANGE_DB
    rir_probability: float = 0.0
    rir_bank: list[AudioBuffer] = field(default_factory=list)
    resample_roundtrip: bool = False
    power_scale_range: tuple[float, float] = POWER_SCALE_RANGE
    plugin: Optional[Callable[[AudioBuffer, np.random.Generator], AudioBuffer]] = None
    plugin_probability: float = 0.75

    def __post_init__(self) -> None:
        for name in ("awgn_probability", "rir_probability", "plugin_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        lo, hi = self.awgn_snr_range_db
        if lo > hi:
            raise ValueError(f"awgn snr range low must be <= high, got {self.awgn_snr_range_db}")
        lo, hi = self.power_scale_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"power scale range must satisfy 0 < low <= high, "
                             f"got {self.power_scale_range}")
        if self.rir_probability > 0.0 and not self.rir_bank:
            raise ValueError("rir_probability > 0 requires a non-empty rir_bank")


def apply_policy(a: AudioBuffer, p: AugmentationPolicy,
                 rng: np.random.Generator) -> AudioBuffer:
    """Apply an augmentation policy: plugin, AWGN, RIR, resample, power scale."""
    x = a
    if p.plugin is not None and rng.uniform() < p.plugin_probability:
        x = p.plugin(x, rng)
    if rng.uniform() < p.awgn_probability:
        snr = float(rng.uniform(*p.awgn_snr_range_db))
        x = add_awgn(x, snr, rng)
    if rng.uniform() < p.rir_probability:
        rir = p.rir_bank[int(rng.integers(len(p.rir_bank)))]
        x = convolve_rir(x, rir)
    if p.resample_roundtrip:
        x = resample_roundtrip(x)
    return random_power_scale(x, p.power_scale_range, rng)


# ---------------------------------------------------------------------------
# Spectral feature front end

def _triangular_filterbank(n_bands: int, n_fft: int, rate: int) -> np.ndarray:
    """Triangular bands with linearly spaced edges over 0 .. rate/2."""
    edges = np.linspace(0.0, rate / 2.0, n_bands + 2)
    freqs = np.arange(n_fft // 2 + 1) * (rate / n_fft)
    fb = np.zeros((n_bands, len(freqs)))
    for i in range(n_bands):
        left, center, right = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - left) / (center - left)
        falling = (right - freqs) / (right - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def spectral_features(a: AudioBuffer, n_bands: int,
                      frame_s: float = 0.025, hop_s: float = 0.010) -> np.ndarray:
    """Per-frame log band energies: the built-in embedding front end.

    Frames are Hann-windowed, power spectra are pooled through n_bands
    triangular bands spanning 0 to the Nyquist frequency, floored at a
    small constant before the log so silence maps to a finite value.
    Returns a (frames x n_bands) float64 matrix.
    """
    _require_pipeline_rate(a, "spectral_features")
    if n_bands < 2:
        raise ValueError("n_bands must be >= 2")
    frame = int(round(frame_s * a.sample_rate_hz))
    hop = int(round(hop_s * a.sample_rate_hz))
    if len(a) < frame:
        raise ValueError(f"input of {len(a)} samples is shorter than one "
                         f"{frame}-sample frame")
    n_fft = 1
    while n_fft < frame:
        n_fft *= 2
    frames = np.lib.stride_tricks.sliding_window_view(a.samples, frame)[::hop]
    windowed = frames * np.hanning(frame)
    spectra = np.abs(np.fft.rfft(windowed, n=n_fft, axis=1)) ** 2
    fb = _triangular_filterbank(n_bands, n_fft, a.sample_rate_hz)
    energies = spectra @ fb.T
    return np.log(np.maximum(energies, _LOG_FLOOR))

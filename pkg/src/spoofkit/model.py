"""Embedding providers, pooling, and the classifier head with manual autodiff.

The head is a fixed three-layer MLP (embedding dim -> 512 -> 64 -> 2 with
LeakyReLU between layers). An optional square linear adapter in front of
the head stands in for a fine-tunable backbone, giving the optimizer its
two parameter groups. Forward and backward passes are written out by hand
so losses can attach gradients both at the logits and at the 64-dim
penultimate embedding (where the center and one-class terms live).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import dsp
from .manifest import ManifestEntry

HIDDEN_1 = 512
HIDDEN_2 = 64
N_CLASSES = 2

CHECKPOINT_VERSION = "1"
_MAGIC = b"SPFK"


class CheckpointError(ValueError):
    """Malformed checkpoint or embedding-store file."""


# ---------------------------------------------------------------------------
# State

@dataclass
class ModelState:
    dim: int
    w1: np.ndarray  # (512, D)
    b1: np.ndarray  # (512,)
    w2: np.ndarray  # (64, 512)
    b2: np.ndarray  # (64,)
    w3: np.ndarray  # (2, 64)
    b3: np.ndarray  # (2,)
    centers: np.ndarray  # (2, 64) class centers over the penultimate embedding
    oc_direction: np.ndarray  # (64,) one-class softmax target direction
    adapter_w: Optional[np.ndarray] = None  # (D, D)
    adapter_b: Optional[np.ndarray] = None  # (D,)
    leaky_relu_slope: float = 0.01
    version: str = CHECKPOINT_VERSION

    @property
    def with_adapter(self) -> bool:
        return self.adapter_w is not None

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Trainable parameters in canonical (checkpoint) order."""
        params: dict[str, np.ndarray] = {}
        if self.with_adapter:
            params["adapter_w"] = self.adapter_w
            params["adapter_b"] = self.adapter_b
        params.update(w1=self.w1, b1=self.b1, w2=self.w2, b2=self.b2,
                      w3=self.w3, b3=self.b3,
                      centers=self.centers, oc_direction=self.oc_direction)
        return params

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        if name in ("adapter_w", "adapter_b") and not self.with_adapter:
            raise KeyError(f"state has no adapter parameter {name!r}")
        setattr(self, name, value)

    def copy(self) -> "ModelState":
        return ModelState(
            dim=self.dim,
            w1=self.w1.copy(), b1=self.b1.copy(),
            w2=self.w2.copy(), b2=self.b2.copy(),
            w3=self.w3.copy(), b3=self.b3.copy(),
            centers=self.centers.copy(), oc_direction=self.oc_direction.copy(),
            adapter_w=None if self.adapter_w is None else self.adapter_w.copy(),
            adapter_b=None if self.adapter_b is None else self.adapter_b.copy(),
            leaky_relu_slope=self.leaky_relu_slope,
            version=self.version,
        )


def init_state(seed: int, dim: int, with_adapter: bool = False,
               leaky_relu_slope: float = 0.01) -> ModelState:
    """Fresh state: fan-in-scaled uniform weights (bound sqrt(6/fan_in)),
    zero biases, zero centers, unit-norm random one-class direction."""
    if dim < 1:
        raise ValueError("embedding dim must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))

    def uniform(rows: int, cols: int) -> np.ndarray:
        bound = np.sqrt(6.0 / cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    adapter_w = adapter_b = None
    if with_adapter:
        adapter_w = uniform(dim, dim)
        adapter_b = np.zeros(dim)
    w1 = uniform(HIDDEN_1, dim)
    w2 = uniform(HIDDEN_2, HIDDEN_1)
    w3 = uniform(N_CLASSES, HIDDEN_2)
    direction = rng.standard_normal(HIDDEN_2)
    direction /= np.linalg.norm(direction)
    return ModelState(
        dim=dim, w1=w1, b1=np.zeros(HIDDEN_1), w2=w2, b2=np.zeros(HIDDEN_2),
        w3=w3, b3=np.zeros(N_CLASSES), centers=np.zeros((N_CLASSES, HIDDEN_2)),
        oc_direction=direction, adapter_w=adapter_w, adapter_b=adapter_b,
        leaky_relu_slope=leaky_relu_slope,
    )


# ---------------------------------------------------------------------------
# Forward / backward

@dataclass
class ForwardTrace:
    """Activations kept from a forward pass for exact backprop."""

    pooled: np.ndarray       # (D,)
    head_in: np.ndarray      # (D,) pooled, or adapter output when enabled
    h1: np.ndarray           # (512,) pre-activation
    a1: np.ndarray           # (512,)
    h2: np.ndarray           # (64,) pre-activation
    penultimate: np.ndarray  # (64,) post-activation input to the final layer
    logits: np.ndarray       # (2,)


def pool_temporal_mean(frames: np.ndarray) -> np.ndarray:
    """Temporal average pooling: frame-axis mean of a (T x D) sequence."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError("expected a non-empty (frames x dim) matrix")
    return frames.mean(axis=0)


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)


def forward(state: ModelState, frames: np.ndarray) -> ForwardTrace:
    """Pool -> optional adapter -> head. Softmax of the logits gives
    (p_real, p_fake); index 1 is the fake class throughout the toolkit."""
    pooled = pool_temporal_mean(frames)
    if pooled.shape[0] != state.dim:
        raise ValueError(f"embedding dim {pooled.shape[0]} does not match "
                         f"model dim {state.dim}")
    head_in = pooled
    if state.with_adapter:
        head_in = state.adapter_w @ pooled + state.adapter_b
    slope = state.leaky_relu_slope
    h1 = state.w1 @ head_in + state.b1
    a1 = _leaky(h1, slope)
    h2 = state.w2 @ a1 + state.b2
    a2 = _leaky(h2, slope)
    logits = state.w3 @ a2 + state.b3
    return ForwardTrace(pooled=pooled, head_in=head_in, h1=h1, a1=a1, h2=h2,
                        penultimate=a2, logits=logits)


def fake_probability(logits: np.ndarray) -> float:
    """softmax(logits)[fake], computed stably."""
    z = logits - logits.max()
    e = np.exp(z)
    return float(e[1] / e.sum())


def backward(state: ModelState, trace: ForwardTrace,
             d_logits: np.ndarray,
             d_penultimate: Optional[np.ndarray] = None) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for one sample.

    Accepts an upstream gradient at the logits and, optionally, one at the
    penultimate embedding (center / one-class losses attach there). Only
    parameters on the active path appear in the result; center and
    one-class direction gradients are produced by the losses themselves.
    """
    d_logits = np.asarray(d_logits, dtype=np.float64)
    if d_logits.shape != (N_CLASSES,):
        raise ValueError(f"d_logits must have shape ({N_CLASSES},)")
    slope = state.leaky_relu_slope
    grads: dict[str, np.ndarray] = {}
    grads["w3"] = np.outer(d_logits, trace.penultimate)
    grads["b3"] = d_logits.copy()
    d_a2 = state.w3.T @ d_logits
    if d_penultimate is not None:
        d_penultimate = np.asarray(d_penultimate, dtype=np.float64)
        if d_penultimate.shape != (HIDDEN_2,):
            raise ValueError(f"d_penultimate must have shape ({HIDDEN_2},)")
        d_a2 = d_a2 + d_penultimate
    d_h2 = d_a2 * _leaky_grad(trace.h2, slope)
    grads["w2"] = np.outer(d_h2, trace.a1)
    grads["b2"] = d_h2
    d_a1 = state.w2.T @ d_h2
    d_h1 = d_a1 * _leaky_grad(trace.h1, slope)
    grads["w1"] = np.outer(d_h1, trace.head_in)
    grads["b1"] = d_h1
    if state.with_adapter:
        d_head_in = state.w1.T @ d_h1
        grads["adapter_w"] = np.outer(d_head_in, trace.pooled)
        grads["adapter_b"] = d_head_in
    return grads


# ---------------------------------------------------------------------------
# Checkpoint serialization: one JSON header line, then per-parameter
# little-endian float32 flat arrays in header order. Float32 is the
# canonical on-disk precision; arrays come back as float64 for math.

def save_state(state: ModelState, path: str | Path,
               seed: Optional[int] = None, config_hash: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = state.named_parameters()
    header = {
        "version": state.version,
        "seed": seed,
        "config_hash": config_hash,
        "dim": state.dim,
        "with_adapter": state.with_adapter,
        "leaky_relu_slope": state.leaky_relu_slope,
        "params": [[name, list(arr.shape)] for name, arr in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_state(path: str | Path) -> tuple[ModelState, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        if fh.read(4) != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)
    try:
        state = ModelState(
            dim=header["dim"],
            w1=arrays["w1"], b1=arrays["b1"], w2=arrays["w2"], b2=arrays["b2"],
            w3=arrays["w3"], b3=arrays["b3"], centers=arrays["centers"],
            oc_direction=arrays["oc_direction"],
            adapter_w=arrays.get("adapter_w"), adapter_b=arrays.get("adapter_b"),
            leaky_relu_slope=header.get("leaky_relu_slope", 0.01),
            version=header.get("version", CHECKPOINT_VERSION),
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing parameter {exc}") from exc
    return state, header


# ---------------------------------------------------------------------------
# Embedding store: one file per utterance id, same header+float32 layout.

def save_embedding(path: str | Path, utt_id: str, frames: np.ndarray,
                   frame_hop_s: Optional[float] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError("embedding must be a (frames x dim) matrix")
    header = {"version": CHECKPOINT_VERSION, "id": utt_id,
              "shape": list(frames.shape), "frame_hop_s": frame_hop_s}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def load_embedding(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.read(4) != _MAGIC:
            raise CheckpointError(f"{path}: not an embedding file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        t, d = header["shape"]
        buf = fh.read(4 * t * d)
        if len(buf) != 4 * t * d:
            raise CheckpointError(f"{path}: truncated embedding data")
    frames = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(t, d)
    return frames, header


# ---------------------------------------------------------------------------
# Providers

class SpectralEmbeddingProvider:
    """Built-in deterministic front end: WAV -> conditioning -> log band energies.

    Stands in for a pretrained backbone so the full pipeline runs without
    external weights. Conditioned waveforms are cached in memory by entry
    id (desk-scale datasets), which keeps repeated epochs cheap.
    """

    kind = "spectral"

    def __init__(self, n_bands: int = 80, frame_s: float = 0.025,
                 hop_s: float = 0.010, base_dir: Optional[str] = None,
                 cache_conditioned: bool = True):
        self.n_bands = n_bands
        self.frame_s = frame_s
        self.hop_s = hop_s
        self.base_dir = base_dir
        self.cache_conditioned = cache_conditioned
        self._cache: dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self.n_bands

    def _resolve(self, entry: ManifestEntry) -> str:
        path = entry.resolved_source()
        if self.base_dir is not None and not Path(path).is_absolute():
            path = str(Path(self.base_dir) / path)
        return path

    def conditioned(self, entry: ManifestEntry) -> dsp.AudioBuffer:
        cached = self._cache.get(entry.id)
        if cached is not None:
            return dsp.AudioBuffer(cached, dsp.PIPELINE_RATE_HZ)
        buf = dsp.condition(dsp.load_wav(self._resolve(entry)))
        if self.cache_conditioned:
            self._cache[entry.id] = buf.samples
        return buf

    def _features(self, buf: dsp.AudioBuffer) -> np.ndarray:
        return dsp.spectral_features(buf, self.n_bands, self.frame_s, self.hop_s)

    def embed(self, entry: ManifestEntry) -> np.ndarray:
        """Deterministic whole-utterance embedding (power-normalized)."""
        return self._features(dsp.set_power(self.conditioned(entry), 1.0))

    def windows(self, entry: ManifestEntry, win_s: float = dsp.WINDOW_S,
                step_s: float = dsp.STEP_S) -> list[np.ndarray]:
        buf = dsp.set_power(self.conditioned(entry), 1.0)
        return [self._features(seg) for seg in dsp.window_segments(buf, win_s, step_s)]

    def training_view(self, entry: ManifestEntry, rng: np.random.Generator,
                      policy: dsp.AugmentationPolicy,
                      win_s: float = dsp.WINDOW_S) -> np.ndarray:
        """Random crop + augmentation policy + features, for one train step."""
        crop = dsp.random_crop(self.conditioned(entry), win_s, rng)
        return self._features(dsp.apply_policy(crop, policy, rng))


class FileEmbeddingProvider:
    """Precomputed embeddings keyed by manifest entry, bit-exact as stored."""

    kind = "file"

    def __init__(self, base_dir: Optional[str] = None):
        self.base_dir = base_dir
        self._dim: Optional[int] = None

    @property
    def dim(self) -> Optional[int]:
        return self._dim

    def _resolve(self, entry: ManifestEntry) -> Path:
        path = entry.resolved_source()
        if self.base_dir is not None and not Path(path).is_absolute():
            path = str(Path(self.base_dir) / path)
        return Path(path)

    def _load(self, entry: ManifestEntry) -> tuple[np.ndarray, dict]:
        path = self._resolve(entry)
        if not path.exists():
            raise CheckpointError(f"no stored embedding for id {entry.id!r} "
                                  f"(looked at {path})")
        frames, header = load_embedding(path)
        if self._dim is None:
            self._dim = frames.shape[1]
        elif frames.shape[1] != self._dim:
            raise CheckpointError(
                f"embedding dim {frames.shape[1]} for id {entry.id!r} does not "
                f"match dataset dim {self._dim}")
        return frames, header

    def embed(self, entry: ManifestEntry) -> np.ndarray:
        frames, _ = self._load(entry)
        return frames

    def windows(self, entry: ManifestEntry, win_s: float = dsp.WINDOW_S,
                step_s: float = dsp.STEP_S) -> list[np.ndarray]:
        """Frame-domain windows when the store records its hop; else whole."""
        frames, header = self._load(entry)
        hop = header.get("frame_hop_s")
        if not hop:
            return [frames]
        win = max(1, int(round(win_s / hop)))
        step = max(1, int(round(step_s / hop)))
        t = frames.shape[0]
        if t < win:
            reps = int(np.ceil(win / t))
            return [np.tile(frames, (reps, 1))[:win]]
        return [frames[k * step:k * step + win]
                for k in range((t - win) // step + 1)]

    def training_view(self, entry: ManifestEntry, rng: np.random.Generator,
                      policy: dsp.AugmentationPolicy,
                      win_s: float = dsp.WINDOW_S) -> np.ndarray:
        # Waveform augmentation does not apply to stored embeddings.
        return self.embed(entry)


def load_provider(spec: dict, base_dir: Optional[str] = None):
    """Build a provider from a config mapping: {"kind": "spectral"|"file", ...}."""
    kind = spec.get("kind")
    if kind == "spectral":
        return SpectralEmbeddingProvider(
            n_bands=int(spec.get("n_bands", 80)),
            frame_s=float(spec.get("frame_s", 0.025)),
            hop_s=float(spec.get("hop_s", 0.010)),
            base_dir=spec.get("base_dir", base_dir),
            cache_conditioned=bool(spec.get("cache_conditioned", True)),
        )
    if kind == "file":
        return FileEmbeddingProvider(base_dir=spec.get("base_dir", base_dir))
    raise ValueError(f"unknown provider kind {kind!r} (expected 'spectral' or 'file')")

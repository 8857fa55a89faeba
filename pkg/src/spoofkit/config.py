"""Experiment configuration: one declarative JSON file per experiment.

The config is plain data; builder helpers turn sections into the typed
objects the pipeline consumes. A short hash of the canonical JSON is
embedded in every output artifact so results can be traced to the exact
configuration that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import dsp, losses, optim
from .manifest import Manifest, load_manifest, split_by_subset


@dataclass
class ExperimentConfig:
    seed: int = 0
    # Either explicit {"train":…, "val":…, "test":…} paths or {"all": path}
    # for a single subset-tagged manifest.
    manifests: dict[str, str] = field(default_factory=dict)
    provider: dict = field(default_factory=lambda: {"kind": "spectral", "n_bands": 80})
    augmentation: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    model: dict = field(default_factory=lambda: {"with_adapter": False,
                                                 "leaky_relu_slope": 0.01})
    scoring: dict = field(default_factory=lambda: {"mode": "windowed", "agg": "mean",
                                                   "window_s": 3.5, "step_s": 0.5})
    teacher_checkpoint: Optional[str] = None
    output_dir: str = "runs/exp"

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def load_config(path: str | Path) -> ExperimentConfig:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    return ExperimentConfig(**obj)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    payload = {"config": cfg.to_dict(), "config_hash": cfg.config_hash()}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def build_loss_config(cfg: ExperimentConfig) -> losses.LossConfig:
    section = dict(cfg.loss)
    weights = section.pop("weights", None)
    kwargs = {}
    for name in ("gamma", "beta", "hinge_margin", "oc_alpha", "oc_margin_real",
                 "oc_margin_fake", "distill_weight", "distill_temperature"):
        if name in section:
            kwargs[name] = float(section.pop(name))
    for name in ("center_mean_reduction", "smooth_hinge_scale_by_beta"):
        if name in section:
            kwargs[name] = bool(section.pop(name))
    if section:
        raise ValueError(f"unknown loss config keys {sorted(section)}")
    if weights is not None:
        kwargs["weights"] = {k: float(v) for k, v in weights.items()}
    return losses.LossConfig(**kwargs)


def build_optimizer_config(cfg: ExperimentConfig) -> optim.OptimizerConfig:
    section = dict(cfg.optimizer)
    out = optim.OptimizerConfig()
    if "backbone" in section:
        g = section.pop("backbone")
        out.group_backbone = optim.GroupConfig(float(g.get("lr", 1e-6)),
                                               float(g.get("weight_decay", 0.0)))
    if "head" in section:
        g = section.pop("head")
        out.group_head = optim.GroupConfig(float(g.get("lr", 1e-3)),
                                           float(g.get("weight_decay", 0.1)))
    if "betas" in section:
        b = section.pop("betas")
        out.betas = (float(b[0]), float(b[1]))
    for name, cast in (("eps", float), ("epochs", int), ("batch_size", int)):
        if name in section:
            setattr(out, name, cast(section.pop(name)))
    if "schedule" in section:
        s = section.pop("schedule")
        out.schedule = optim.ScheduleConfig(
            pct_up=float(s.get("pct_up", 0.3)),
            div_initial=float(s.get("div_initial", 25.0)),
            div_final=float(s.get("div_final", 1e4)))
    if section:
        raise ValueError(f"unknown optimizer config keys {sorted(section)}")
    return out


def build_policy(cfg: ExperimentConfig, base_dir: Optional[Path] = None
                 ) -> dsp.AugmentationPolicy:
    section = dict(cfg.augmentation)
    rir_dir = section.pop("rir_dir", None)
    bank: list[dsp.AudioBuffer] = []
    if rir_dir:
        path = Path(rir_dir)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        bank = dsp.load_rir_bank(path)
    kwargs = {}
    for name, cast in (("awgn_probability", float), ("rir_probability", float),
                       ("plugin_probability", float),
                       ("resample_roundtrip", bool)):
        if name in section:
            kwargs[name] = cast(section.pop(name))
    for name in ("awgn_snr_range_db", "power_scale_range"):
        if name in section:
            lo, hi = section.pop(name)
            kwargs[name] = (float(lo), float(hi))
    if section:
        raise ValueError(f"unknown augmentation config keys {sorted(section)}")
    return dsp.AugmentationPolicy(rir_bank=bank, **kwargs)


def resolve_manifests(cfg: ExperimentConfig, base_dir: Optional[Path] = None
                      ) -> dict[str, Manifest]:
    """Load the configured manifests, splitting an 'all' manifest by subset."""
    def resolve(p: str) -> Path:
        path = Path(p)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return path

    if "all" in cfg.manifests:
        train, val, test = split_by_subset(load_manifest(resolve(cfg.manifests["all"])))
        out = {"train": train, "val": val, "test": test}
    else:
        out = {name: load_manifest(resolve(path))
               for name, path in cfg.manifests.items()}
    return out

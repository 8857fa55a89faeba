"""Two-group AdamW, one-cycle schedule, training loop, checkpoint selection.

The optimizer mirrors the two-group setup of the training protocol: the
adapter (backbone stand-in) trains at a small learning rate with no weight
decay, while the classifier head, class centers, and one-class direction
train at the large rate with decay. Training is single-threaded and fully
deterministic given (config, seed, manifests).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import dsp, losses, model
from .manifest import Manifest

log = logging.getLogger(__name__)

BACKBONE_PARAMS = ("adapter_w", "adapter_b")


class TrainingDivergedError(RuntimeError):
    """Loss or a gradient became non-finite during training."""


@dataclass
class GroupConfig:
    lr: float
    weight_decay: float

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")


@dataclass
class ScheduleConfig:
    pct_up: float = 0.3
    div_initial: float = 25.0
    div_final: float = 1e4

    def __post_init__(self) -> None:
        if not 0.0 < self.pct_up < 1.0:
            raise ValueError("pct_up must lie strictly in (0, 1)")
        if self.div_initial <= 0 or self.div_final <= 0:
            raise ValueError("schedule divisors must be positive")


@dataclass
class OptimizerConfig:
    group_backbone: GroupConfig = field(default_factory=lambda: GroupConfig(1e-6, 0.0))
    group_head: GroupConfig = field(default_factory=lambda: GroupConfig(1e-3, 0.1))
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)


@dataclass
class AdamMoments:
    """Per-parameter first/second moments plus the shared step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               moments: AdamMoments, group_cfg: GroupConfig, lr_t: float,
               betas: tuple[float, float] = (0.9, 0.999),
               eps: float = 1e-8) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Only parameters with a gradient are touched; decay is decoupled, so a
    zero gradient with decay lambda scales a parameter by (1 - lr * lambda).
    """
    b1, b2 = betas
    moments.t += 1
    t = moments.t
    for name in params:
        if name not in grads:
            continue
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for parameter {name!r}")
        if name not in moments.m:
            moments.m[name] = np.zeros_like(params[name])
            moments.v[name] = np.zeros_like(params[name])
        m = moments.m[name]
        v = moments.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p = params[name]
        p -= lr_t * (m_hat / (np.sqrt(v_hat) + eps) + group_cfg.weight_decay * p)


def one_cycle_lr(step: int, total_steps: int, base_lr: float,
                 cfg: ScheduleConfig) -> float:
    """Cosine warmup to base_lr, cosine anneal down, over total_steps.

    step 0 gives base_lr/div_initial exactly, the peak base_lr is hit
    exactly once at round(pct_up * total_steps), and the final step gives
    base_lr/div_final exactly.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    up = int(round(cfg.pct_up * total_steps))
    up = min(max(up, 1), total_steps - 1)
    lo = base_lr / cfg.div_initial
    end = base_lr / cfg.div_final
    if step == 0:
        return lo
    if step == up:
        return base_lr
    if step == total_steps - 1:
        return end
    if step < up:
        frac = step / up
        return lo + (base_lr - lo) * 0.5 * (1.0 - math.cos(math.pi * frac))
    frac = (step - up) / (total_steps - 1 - up)
    return end + (base_lr - end) * 0.5 * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# Training loop

@dataclass
class CheckpointRecord:
    epoch: int
    path: str
    val_loss: float


@dataclass
class TrainRunState:
    run_dir: str
    checkpoints: list[CheckpointRecord]
    step: int
    moments_head: AdamMoments
    moments_backbone: AdamMoments
    rng: np.random.Generator
    final_state: model.ModelState


def _split_param_groups(state: model.ModelState
                        ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    params = state.named_parameters()
    backbone = {k: v for k, v in params.items() if k in BACKBONE_PARAMS}
    head = {k: v for k, v in params.items() if k not in BACKBONE_PARAMS}
    return backbone, head


def _validation_view(provider, entry, win_s: float) -> np.ndarray:
    """Centered crop, power 1.0, no augmentation (clean validation input)."""
    if provider.kind == "spectral":
        buf = dsp.center_crop(provider.conditioned(entry), win_s)
        return provider._features(dsp.set_power(buf, 1.0))
    return provider.embed(entry)


def _teacher_probs(teacher: Optional[model.ModelState], views, temperature: float):
    if teacher is None:
        return None
    probs = []
    for frames in views:
        logits = model.forward(teacher, frames).logits
        probs.append(losses.softmax(logits / temperature))
    return probs


def train(train_manifest: Manifest, val_manifest: Manifest, provider,
          state: model.ModelState, loss_cfg: losses.LossConfig,
          opt_cfg: OptimizerConfig, policy: dsp.AugmentationPolicy, seed: int,
          run_dir: str | Path, teacher_state: Optional[model.ModelState] = None,
          config_hash: str = "", win_s: float = dsp.WINDOW_S) -> TrainRunState:
    """Run the full training protocol and write one checkpoint per epoch.

    Each epoch shuffles the training manifest (seeded), takes one random
    crop per utterance, applies the augmentation policy, and optimizes the
    composite loss with per-group one-cycle learning rates. Validation loss
    is the mean composite loss over clean centered crops; it is logged per
    epoch alongside the checkpoint in run_log.jsonl.
    """
    if len(train_manifest) == 0:
        raise ValueError("training manifest is empty")
    if len(val_manifest) == 0:
        raise ValueError("validation manifest is empty")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))
    label_of = {"real": 0, "fake": 1}

    backbone_params, head_params = _split_param_groups(state)
    mom_head = AdamMoments()
    mom_backbone = AdamMoments()
    entries = list(train_manifest.entries)
    n = len(entries)
    batch_size = opt_cfg.batch_size
    n_batches = math.ceil(n / batch_size)
    total_steps = opt_cfg.epochs * n_batches
    step = 0
    checkpoints: list[CheckpointRecord] = []
    log_path = run_dir / "run_log.jsonl"

    with log_path.open("w", encoding="utf-8") as log_fh:
        for epoch in range(opt_cfg.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for b in range(n_batches):
                batch_entries = [entries[int(i)]
                                 for i in order[b * batch_size:(b + 1) * batch_size]]
                views = [provider.training_view(e, rng, policy, win_s)
                         for e in batch_entries]
                batch = [(v, label_of[e.label])
                         for v, e in zip(views, batch_entries)]
                teacher = _teacher_probs(teacher_state, views,
                                         loss_cfg.distill_temperature)
                loss, grads = losses.composite_loss(batch, state, loss_cfg, teacher)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"loss diverged at epoch {epoch}, step {step}")
                lr_head = one_cycle_lr(step, total_steps,
                                       opt_cfg.group_head.lr, opt_cfg.schedule)
                adamw_step(head_params, grads, mom_head, opt_cfg.group_head,
                           lr_head, opt_cfg.betas, opt_cfg.eps)
                lr_backbone = one_cycle_lr(step, total_steps,
                                           opt_cfg.group_backbone.lr, opt_cfg.schedule)
                if backbone_params:
                    adamw_step(backbone_params, grads, mom_backbone,
                               opt_cfg.group_backbone, lr_backbone,
                               opt_cfg.betas, opt_cfg.eps)
                epoch_loss += loss * len(batch)
                step += 1
            train_loss = epoch_loss / n

            val_loss = validation_loss(val_manifest, provider, state, loss_cfg,
                                       teacher_state, win_s)
            ckpt_name = f"epoch_{epoch:03d}.ckpt"
            model.save_state(state, run_dir / ckpt_name, seed=seed,
                             config_hash=config_hash)
            checkpoints.append(CheckpointRecord(epoch, str(run_dir / ckpt_name),
                                                val_loss))
            log_fh.write(json.dumps({
                "epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                "lr_head": lr_head, "lr_backbone": lr_backbone,
                "checkpoint": ckpt_name,
            }) + "\n")
            log_fh.flush()
            log.info("epoch %d: train %.6f val %.6f", epoch, train_loss, val_loss)

    return TrainRunState(run_dir=str(run_dir), checkpoints=checkpoints, step=step,
                         moments_head=mom_head, moments_backbone=mom_backbone,
                         rng=rng, final_state=state)


def validation_loss(val_manifest: Manifest, provider, state: model.ModelState,
                    loss_cfg: losses.LossConfig,
                    teacher_state: Optional[model.ModelState] = None,
                    win_s: float = dsp.WINDOW_S) -> float:
    """Mean per-utterance composite loss on clean, power-normalized crops."""
    label_of = {"real": 0, "fake": 1}
    total = 0.0
    for entry in val_manifest.entries:
        view = _validation_view(provider, entry, win_s)
        teacher = _teacher_probs(teacher_state, [view], loss_cfg.distill_temperature)
        loss, _ = losses.composite_loss([(view, label_of[entry.label])],
                                        state, loss_cfg, teacher)
        total += loss
    return total / len(val_manifest)


# ---------------------------------------------------------------------------
# Checkpoint selection

def read_run_log(run_dir: str | Path) -> list[CheckpointRecord]:
    run_dir = Path(run_dir)
    log_path = run_dir / "run_log.jsonl"
    if not log_path.exists():
        raise FileNotFoundError(f"no run_log.jsonl in {run_dir}")
    records = []
    with log_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(CheckpointRecord(
                epoch=obj["epoch"], path=str(run_dir / obj["checkpoint"]),
                val_loss=obj["val_loss"]))
    return records


def select_checkpoint(checkpoints: list[CheckpointRecord], strategy: str = "best_val",
                      k: Optional[int] = None) -> model.ModelState:
    """Pick the best-validation checkpoint, or the SWA average around it.

    swa averages k consecutive checkpoints centered on the best-validation
    epoch, clipping the window at the run boundaries. The recommended k
    range is 3 to 10; swa with k=1 reduces to best_val.
    """
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    ordered = sorted(checkpoints, key=lambda r: r.epoch)
    losses_arr = np.array([r.val_loss for r in ordered])
    best = int(np.argmin(losses_arr))  # ties resolve to the earliest epoch
    if strategy == "best_val":
        state, _ = model.load_state(ordered[best].path)
        return state
    if strategy == "swa":
        if k is None or not 1 <= k <= len(ordered):
            raise ValueError(
                f"swa window k must lie in [1, {len(ordered)}], got {k}")
        start = min(max(best - (k - 1) // 2, 0), len(ordered) - k)
        window = ordered[start:start + k]
        states = [model.load_state(r.path)[0] for r in window]
        avg = states[0].copy()
        for name in avg.named_parameters():
            acc = np.zeros_like(getattr(avg, name))
            for s in states:
                acc += getattr(s, name)
            acc /= k
            avg.set_parameter(name, acc)
        return avg
    raise ValueError(f"unknown selection strategy {strategy!r}")

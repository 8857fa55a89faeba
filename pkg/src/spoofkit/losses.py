"""Training objectives and their exact gradients.

Implements cross-entropy, focal loss, center loss and its hinged and
smooth-hinged variants, one-class softmax, and soft-target distillation,
plus the weighted composite that routes gradients through the model.
Class convention everywhere: 0 = real (bona fide), 1 = fake (spoof).

The center-family losses are computed over the 64-dim penultimate
embedding and return gradients both for the embeddings (to be backpropped
through the head) and for their own parameters (centers, the one-class
direction).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import model

TERM_NAMES = ("cross_entropy", "focal", "center", "hinged_center",
              "smooth_hinged_center", "oc_softmax")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    return z - np.log(np.sum(np.exp(z)))


def sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def softplus(x):
    """log(1 + e^x), linear for large x to avoid overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


# ---------------------------------------------------------------------------
# Per-sample classification losses

def cross_entropy(logits: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Negative log softmax probability of the target class.

    Stabilized with max subtraction; gradient is softmax - onehot.
    """
    logits = np.asarray(logits, dtype=np.float64)
    p = softmax(logits)
    loss = -log_softmax(logits)[y]
    grad = p.copy()
    grad[y] -= 1.0
    return float(loss), grad


def focal_loss(logits: np.ndarray, y: int, gamma: float) -> tuple[float, np.ndarray]:
    """-(1 - p_t)^gamma * log(p_t); reduces to cross-entropy at gamma = 0."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if gamma == 0.0:
        return cross_entropy(logits, y)
    logits = np.asarray(logits, dtype=np.float64)
    p = softmax(logits)
    pt = p[y]
    log_pt = log_softmax(logits)[y]
    one_minus = 1.0 - pt
    loss = -(one_minus ** gamma) * log_pt
    # d loss / d logits = A * (onehot - p), with
    # A = gamma * (1-pt)^(gamma-1) * log(pt) * pt - (1-pt)^gamma
    if one_minus == 0.0:
        coeff = 0.0
    else:
        coeff = gamma * one_minus ** (gamma - 1.0) * log_pt * pt - one_minus ** gamma
    onehot = np.zeros_like(p)
    onehot[y] = 1.0
    grad = coeff * (onehot - p)
    return float(loss), grad


def distillation_loss(student_logits: np.ndarray, teacher_probs: np.ndarray,
                      temperature: float) -> tuple[float, np.ndarray]:
    """Soft-target cross-entropy against a teacher distribution.

    The student logits are softened at the given temperature and the loss
    is scaled by temperature^2 so gradient magnitudes stay comparable
    across temperatures.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    teacher_probs = np.asarray(teacher_probs, dtype=np.float64)
    if teacher_probs.shape != (2,) or np.any(teacher_probs < -1e-12) \
            or abs(teacher_probs.sum() - 1.0) > 1e-6:
        raise ValueError("teacher_probs must be a length-2 distribution summing to 1")
    student_logits = np.asarray(student_logits, dtype=np.float64)
    soft = student_logits / temperature
    q = softmax(soft)
    loss = -temperature ** 2 * float(teacher_probs @ log_softmax(soft))
    grad = temperature * (q - teacher_probs)
    return loss, grad


# ---------------------------------------------------------------------------
# Embedding-space losses

def center_loss(embeddings: np.ndarray, labels: np.ndarray, centers: np.ndarray,
                mean_reduction: bool = False
                ) -> tuple[float, np.ndarray, np.ndarray]:
    """(1/2) sum_i ||x_i - c_{y_i}||^2 over the batch.

    Summed over samples as printed; pass mean_reduction=True for a 1/N
    scaling. Returns (loss, d_embeddings, d_centers).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("embeddings must be a non-empty (N x dim) matrix")
    diff = x - centers[labels]
    loss = 0.5 * float(np.sum(diff ** 2))
    d_x = diff.copy()
    d_c = np.zeros_like(centers)
    np.add.at(d_c, labels, -diff)
    if mean_reduction:
        n = x.shape[0]
        loss /= n
        d_x /= n
        d_c /= n
    return loss, d_x, d_c


def hinged_center_loss(embeddings: np.ndarray, labels: np.ndarray,
                       centers: np.ndarray, margin: float = 1.0,
                       mean_reduction: bool = False) -> float:
    """max(0, L_center - margin): center loss that stops competing with the
    classification terms once intra-class spread is small enough."""
    loss, _, _ = center_loss(embeddings, labels, centers, mean_reduction)
    return max(0.0, loss - margin)


def smooth_hinged_center_loss(embeddings: np.ndarray, labels: np.ndarray,
                              centers: np.ndarray, beta: float = 20.0,
                              margin: float = 1.0, mean_reduction: bool = False,
                              scale_by_beta: bool = False
                              ) -> tuple[float, np.ndarray, np.ndarray]:
    """softplus(beta * (L_center - margin)), the differentiable hinge.

    As printed the softplus output is not rescaled, so the large-loss slope
    is beta * dL_center; scale_by_beta=True divides the whole term by beta.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    lc, d_x, d_c = center_loss(embeddings, labels, centers, mean_reduction)
    z = beta * (lc - margin)
    loss = float(softplus(z))
    scale = float(sigmoid(z)) * beta
    if scale_by_beta:
        loss /= beta
        scale /= beta
    return loss, scale * d_x, scale * d_c


def oc_softmax_loss(embeddings: np.ndarray, labels: np.ndarray, w0: np.ndarray,
                    alpha: float = 20.0, margin_real: float = 0.9,
                    margin_fake: float = 0.2
                    ) -> tuple[float, np.ndarray, np.ndarray]:
    """One-class softmax over cosine similarity to a learned direction.

    Both the direction and the embeddings are L2-normalized before the
    inner product. Real samples are pulled above margin_real along the
    direction, fakes pushed below margin_fake; mean-reduced over the batch.
    Returns (loss, d_embeddings, d_w0).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = x.shape[0]
    w_norm = np.linalg.norm(w0)
    if w_norm < 1e-12:
        raise ValueError("one-class direction must be nonzero")
    x_norms = np.linalg.norm(x, axis=1)
    if np.any(x_norms < 1e-12):
        raise ValueError("zero-norm embedding in one-class softmax batch")
    w_hat = w0 / w_norm
    x_hat = x / x_norms[:, None]
    scores = x_hat @ w_hat
    margins = np.where(labels == 0, margin_real, margin_fake)
    signs = np.where(labels == 0, 1.0, -1.0)  # (-1)^y
    args = alpha * (margins - scores) * signs
    loss = float(np.mean(softplus(args)))
    d_scores = sigmoid(args) * (-alpha * signs) / n
    # through x normalization: ds/dx = (w_hat - s * x_hat) / ||x||
    d_x = d_scores[:, None] * (w_hat[None, :] - scores[:, None] * x_hat) \
        / x_norms[:, None]
    # through w0 normalization: ds/dw0 = (x_hat - s * w_hat) / ||w0||
    d_w0 = (d_scores[:, None] * (x_hat - scores[:, None] * w_hat[None, :])).sum(axis=0) \
        / w_norm
    return loss, d_x, d_w0


# ---------------------------------------------------------------------------
# Composite

@dataclass
class LossConfig:
    """Mixing weights and shape parameters for the composite objective."""

    gamma: float = 2.0                 # focal focusing parameter
    beta: float = 20.0                 # softplus sharpness of the smooth hinge
    hinge_margin: float = 1.0
    oc_alpha: float = 20.0
    oc_margin_real: float = 0.9
    oc_margin_fake: float = 0.2
    weights: dict[str, float] = field(
        default_factory=lambda: {"focal": 1.0, "smooth_hinged_center": 1.0})
    distill_weight: float = 0.5
    distill_temperature: float = 2.0
    center_mean_reduction: bool = False
    smooth_hinge_scale_by_beta: bool = False

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.distill_temperature <= 0:
            raise ValueError("distill_temperature must be positive")
        if self.distill_weight < 0:
            raise ValueError("distill_weight must be >= 0")
        unknown = set(self.weights) - set(TERM_NAMES)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")


def composite_loss(batch: Sequence[tuple[np.ndarray, int]], state: model.ModelState,
                   cfg: LossConfig,
                   teacher_probs: Optional[Sequence[np.ndarray]] = None
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted sum of the enabled terms over one batch.

    Per-sample classification terms (cross-entropy, focal, distillation)
    are mean-reduced over the batch; the center family follows its own
    reduction flag and the one-class term is mean-reduced by definition.
    Returns the scalar loss and a gradient per touched parameter.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    if teacher_probs is not None and len(teacher_probs) != n:
        raise ValueError("teacher_probs must match the batch length")
    traces = [model.forward(state, frames) for frames, _ in batch]
    labels = np.array([y for _, y in batch], dtype=np.int64)
    w = cfg.weights

    total = 0.0
    d_logits = np.zeros((n, model.N_CLASSES))
    d_pen = np.zeros((n, model.HIDDEN_2))
    grads: dict[str, np.ndarray] = {}

    w_ce = w.get("cross_entropy", 0.0)
    w_focal = w.get("focal", 0.0)
    for i, trace in enumerate(traces):
        y = int(labels[i])
        if w_ce:
            loss, g = cross_entropy(trace.logits, y)
            total += w_ce * loss / n
            d_logits[i] += w_ce * g / n
        if w_focal:
            loss, g = focal_loss(trace.logits, y, cfg.gamma)
            total += w_focal * loss / n
            d_logits[i] += w_focal * g / n
        if teacher_probs is not None and cfg.distill_weight > 0:
            loss, g = distillation_loss(trace.logits, teacher_probs[i],
                                        cfg.distill_temperature)
            total += cfg.distill_weight * loss / n
            d_logits[i] += cfg.distill_weight * g / n

    needs_embeddings = any(w.get(t, 0.0) for t in
                           ("center", "hinged_center", "smooth_hinged_center",
                            "oc_softmax"))
    if needs_embeddings:
        emb = np.stack([t.penultimate for t in traces])
        w_center = w.get("center", 0.0)
        if w_center:
            loss, d_x, d_c = center_loss(emb, labels, state.centers,
                                         cfg.center_mean_reduction)
            total += w_center * loss
            d_pen += w_center * d_x
            grads["centers"] = grads.get("centers", 0.0) + w_center * d_c
        w_hinge = w.get("hinged_center", 0.0)
        if w_hinge:
            lc, d_x, d_c = center_loss(emb, labels, state.centers,
                                       cfg.center_mean_reduction)
            total += w_hinge * max(0.0, lc - cfg.hinge_margin)
            if lc > cfg.hinge_margin:  # subgradient 0 at and below the margin
                d_pen += w_hinge * d_x
                grads["centers"] = grads.get("centers", 0.0) + w_hinge * d_c
        w_smooth = w.get("smooth_hinged_center", 0.0)
        if w_smooth:
            loss, d_x, d_c = smooth_hinged_center_loss(
                emb, labels, state.centers, cfg.beta, cfg.hinge_margin,
                cfg.center_mean_reduction, cfg.smooth_hinge_scale_by_beta)
            total += w_smooth * loss
            d_pen += w_smooth * d_x
            grads["centers"] = grads.get("centers", 0.0) + w_smooth * d_c
        w_oc = w.get("oc_softmax", 0.0)
        if w_oc:
            loss, d_x, d_w0 = oc_softmax_loss(
                emb, labels, state.oc_direction, cfg.oc_alpha,
                cfg.oc_margin_real, cfg.oc_margin_fake)
            total += w_oc * loss
            d_pen += w_oc * d_x
            grads["oc_direction"] = grads.get("oc_direction", 0.0) + w_oc * d_w0

    for i, trace in enumerate(traces):
        for name, g in model.backward(state, trace, d_logits[i], d_pen[i]).items():
            if name in grads:
                grads[name] = grads[name] + g
            else:
                grads[name] = g
    return float(total), grads

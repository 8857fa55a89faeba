"""Platt calibration of fake scores.

Two-coefficient sigmoid remap: calibrated = 1 / (1 + exp(a0 + a1 * p)).
With a1 < 0 the map is strictly increasing in p, so ranking metrics (EER,
AUC) are untouched while threshold metrics can improve. The expanded
variant with quality/duration covariates is deliberately not offered: it
breaks order preservation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import ScoreRecord, ScoreSet

COEFF_BOUND = 50.0  # keeps separable-data fits finite


class CalibrationError(RuntimeError):
    """Fit failed to converge or produced an order-reversing model."""


@dataclass
class PlattModel:
    a0: float
    a1: float
    separation_flag: bool = False   # a coefficient hit the bound during fitting
    orientation_warning: bool = False  # fitted a1 >= 0: scores anti-correlated

    def to_dict(self) -> dict:
        return {"a0": self.a0, "a1": self.a1,
                "separation_flag": self.separation_flag,
                "orientation_warning": self.orientation_warning}


def platt_apply(m: PlattModel, p: float) -> float:
    """Calibrated probability 1 / (1 + exp(a0 + a1 * p)); always in (0, 1)."""
    z = m.a0 + m.a1 * p
    if z >= 0:
        e = np.exp(-z)
        return float(e / (1.0 + e))
    return float(1.0 / (1.0 + np.exp(z)))


def platt_fit(cal: ScoreSet, max_iter: int = 100, tol: float = 1e-8,
              smooth_targets: bool = False) -> PlattModel:
    """Fit (a0, a1) by minimizing mean NLL of the labels with damped Newton.

    Deterministic given the calibration set. Coefficients are clamped to
    +/-COEFF_BOUND (perfectly separated sets would otherwise diverge); a
    clamped fit is flagged, as is a fit whose slope fails to be negative.
    Optional Platt target smoothing replaces the 0/1 targets with the
    (N+1)/(N+2)-style priors from the original procedure.
    """
    p = cal.scores()
    y = cal.labels().astype(np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("calibration set must contain both classes")
    if smooth_targets:
        n_fake = y.sum()
        n_real = len(y) - n_fake
        hi = (n_fake + 1.0) / (n_fake + 2.0)
        lo = 1.0 / (n_real + 2.0)
        y = np.where(y == 1.0, hi, lo)

    # q = sigmoid(-(a0 + a1 p)) is the predicted fake probability, i.e.
    # logistic regression with features (-1, -p).
    a = np.zeros(2)
    feats = np.column_stack([-np.ones_like(p), -p])
    hit_bound = False
    grad_norm = np.inf
    for _ in range(max_iter):
        u = feats @ a
        q = 1.0 / (1.0 + np.exp(-u))
        grad = feats.T @ (q - y) / len(y)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            break
        w = np.maximum(q * (1.0 - q), 1e-12)
        hess = (feats * w[:, None]).T @ feats / len(y)
        hess[0, 0] += 1e-12
        hess[1, 1] += 1e-12
        step = -np.linalg.solve(hess, grad)
        # (Near-)separable data: the MLE diverges. Walk the Newton direction
        # only as far as the coefficient bound, flag, and stop; past the
        # bound the quadratic model is meaningless.
        with np.errstate(divide="ignore", invalid="ignore"):
            limits = np.where(step > 0, (COEFF_BOUND - a) / step,
                              np.where(step < 0, (-COEFF_BOUND - a) / step, np.inf))
        t = float(min(1.0, limits.min()))
        a = a + t * step
        if t < 1.0:
            hit_bound = True
            break
    else:
        q = 1.0 / (1.0 + np.exp(-(feats @ a)))
        grad_norm = float(np.linalg.norm(feats.T @ (q - y) / len(y)))
        if grad_norm >= tol and not hit_bound:
            raise CalibrationError(
                f"Platt fit did not converge in {max_iter} iterations "
                f"(final gradient norm {grad_norm:.3e})")
    return PlattModel(a0=float(a[0]), a1=float(a[1]),
                      separation_flag=hit_bound,
                      orientation_warning=bool(a[1] >= 0.0))


def calibrate_scores(m: PlattModel, s: ScoreSet) -> ScoreSet:
    """Apply the calibration map to every record.

    Refuses models with a1 >= 0: those reverse (or flatten) the score
    order, which would silently corrupt ranking metrics.
    """
    if m.a1 >= 0.0:
        raise CalibrationError(
            f"refusing to apply a non-order-preserving model (a1 = {m.a1})")
    records = [ScoreRecord(id=r.id, score=platt_apply(m, r.score), label=r.label,
                           duration_s=r.duration_s,
                           quality_sisdr_db=r.quality_sisdr_db, attack=r.attack)
               for r in s.records]
    return ScoreSet(records)


def save_model(m: PlattModel, path: str | Path, fitted_on: str = "",
               n_records: int = 0, extra: dict | None = None) -> None:
    payload = {"a0": m.a0, "a1": m.a1, "fitted_on": fitted_on,
               "n_records": n_records, **m.to_dict(), **(extra or {})}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_model(path: str | Path) -> PlattModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return PlattModel(a0=float(obj["a0"]), a1=float(obj["a1"]),
                      separation_flag=bool(obj.get("separation_flag", False)),
                      orientation_warning=bool(obj.get("orientation_warning", False)))

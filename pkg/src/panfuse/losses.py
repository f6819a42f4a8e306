"""Reference loss functions on arrays, used for exporter parity checks.

Pure evaluations only; no gradients or training loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DenseMap, ValidationError


@dataclass(frozen=True)
class LossConfig:
    t_k: float = 0.2
    epsilon: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.t_k <= 1.0:
            raise ValidationError(f"t_k must be in (0, 1], got {self.t_k}")
        if not 0.0 < self.epsilon < 1e-3:
            raise ValidationError(f"epsilon must be a tiny positive value, got {self.epsilon}")


def bootstrapped_ce(
    probs: DenseMap, targets: DenseMap, cfg: LossConfig, ignore_id: int = 255
) -> float:
    """Cross-entropy averaged over the pixels whose true-class probability
    falls below ``t_k``.

    Selecting no pixel yields 0; with t_k = 1.0 every non-ignore pixel is
    selected and the value equals plain mean cross-entropy.
    """
    tgt = targets.plane()
    if tgt.shape != (probs.h, probs.w):
        raise ValidationError(
            f"targets shape {tgt.shape} does not match probs {(probs.h, probs.w)}"
        )
    valid = tgt != ignore_id
    if not valid.any():
        raise ValidationError("no non-ignore pixels to evaluate")
    tgt_v = tgt[valid].astype(np.int64)
    if tgt_v.max() >= probs.c or tgt_v.min() < 0:
        raise ValidationError(f"target class {int(tgt_v.max())} outside {probs.c} channels")
    flat = probs.data[valid].astype(np.float64)
    p_true = flat[np.arange(flat.shape[0]), tgt_v]
    selected = p_true < cfg.t_k
    k = int(selected.sum())
    if k == 0:
        return 0.0
    clamped = np.clip(p_true[selected], cfg.epsilon, 1.0)
    return float(-np.log(clamped).sum() / k)


def binary_ce(probs: DenseMap, targets: DenseMap, cfg: LossConfig) -> float:
    """Mean binary cross-entropy with probabilities clamped to
    [epsilon, 1 - epsilon]."""
    p = probs.plane().astype(np.float64)
    y = targets.plane()
    if y.shape != p.shape:
        raise ValidationError(f"targets shape {y.shape} does not match probs {p.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("binary targets must be 0 or 1")
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValidationError("probabilities outside [0, 1]")
    y = y.astype(np.float64)
    p = np.clip(p, cfg.epsilon, 1.0 - cfg.epsilon)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))

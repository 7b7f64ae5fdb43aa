"""Pixel losses, small-loss selection, and their weighted reductions.

All per-pixel quantities are float64 grids; reductions return python
floats.  Cross-entropy and KL terms clamp probabilities at a fixed floor
before taking logarithms, and the matching gradient helpers in
:mod:`gsdnet.model` zero the gradient through clamped entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import clamp_probs, take_class_prob
from .validation import check_labels, check_mask, check_probs, check_weights, same_shape


def ce_pixelwise(probs, target):
    """Per-pixel cross-entropy -log p[target]."""
    p = check_probs(probs)
    y = check_labels(target, num_classes=p.shape[-1])
    same_shape(("probs", p), ("target", y))
    return -np.log(clamp_probs(take_class_prob(p, y)))


def sup_loss(p1, p2, target):
    """Summed cross-entropy of two predictors against shared labels."""
    return ce_pixelwise(p1, target) + ce_pixelwise(p2, target)


def sym_kl_pixelwise(p1, p2):
    """Per-pixel symmetric KL divergence KL(p1||p2) + KL(p2||p1)."""
    a = check_probs(p1, "p1")
    b = check_probs(p2, "p2")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: p1 {a.shape} vs p2 {b.shape}")
    la = np.log(clamp_probs(a))
    lb = np.log(clamp_probs(b))
    return ((a - b) * (la - lb)).sum(axis=-1)


@dataclass
class SelectionSchedule:
    """Retention schedule for small-loss selection.

    ``tau`` is the asymptotic fraction of pixels to drop; the drop ramps
    up linearly over ``warmup_epochs`` so early epochs keep everything.
    """

    tau: float
    warmup_epochs: int = 10

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError(f"tau must be in [0, 1), got {self.tau}")
        if self.warmup_epochs < 1:
            raise ValueError(f"warmup_epochs must be >= 1, got {self.warmup_epochs}")


def retention_rate(epoch, schedule):
    """Fraction of pixels retained at the given epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return 1.0 - min((epoch / schedule.warmup_epochs) * schedule.tau, schedule.tau)


def select_clean(loss_grid, rate):
    """Mask of the ceil(rate * N) smallest-loss pixels.

    Ties at the threshold break toward raster order, so the mask size is
    exact.  Returns a bool grid.
    """
    g = np.asarray(loss_grid, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"loss grid: expected 2 dims, got shape {g.shape}")
    if not np.isfinite(g).all():
        raise ValueError("loss grid contains non-finite values")
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    k = int(np.ceil(rate * g.size))
    order = np.argsort(g.ravel(), kind="stable")
    mask = np.zeros(g.size, dtype=bool)
    mask[order[:k]] = True
    return mask.reshape(g.shape)


def jocor_loss(l_sup, l_con, clean, kl_weight=1.0):
    """Mean over selected pixels of supervision plus weighted agreement."""
    s = check_weights(np.asarray(l_sup, dtype=np.float64), "l_sup")
    c = np.asarray(l_con, dtype=np.float64)
    m = check_mask(clean, "clean")
    same_shape(("l_sup", s), ("l_con", c), ("clean", m))
    n = int(m.sum())
    if n == 0:
        raise ValueError("selection mask is empty")
    return float(((s + kl_weight * c) * m).sum() / n)


def weighted_clean_loss(l_sup, l_con, clean, weights):
    """Boundary-weighted mean of per-pixel losses over the selected set."""
    s = np.asarray(l_sup, dtype=np.float64)
    c = np.asarray(l_con, dtype=np.float64)
    m = check_mask(clean, "clean")
    w = check_weights(weights)
    same_shape(("l_sup", s), ("l_con", c), ("clean", m), ("weights", w))
    n = int(m.sum())
    if n == 0:
        raise ValueError("selection mask is empty")
    return float(((s + c) * w * m).sum() / n)


def dice_loss(probs, target, foreground=1, eps=1e-5):
    """Soft Dice loss of the foreground-class probability map."""
    p = check_probs(probs)
    y = check_labels(target, num_classes=p.shape[-1])
    same_shape(("probs", p), ("target", y))
    pf = p[..., foreground]
    yf = (y == foreground).astype(np.float64)
    num = 2.0 * (pf * yf).sum() + eps
    den = pf.sum() + yf.sum() + eps
    return float(1.0 - num / den)


@dataclass
class LossReport:
    """Decomposed objective for one iteration or one epoch."""

    l_gda: float
    l_kt: float
    l_cor: float
    l_total: float
    clean_fraction: float

    @classmethod
    def build(cls, l_gda=0.0, l_kt=0.0, l_cor=0.0, clean_fraction=1.0):
        return cls(
            l_gda=float(l_gda),
            l_kt=float(l_kt),
            l_cor=float(l_cor),
            l_total=float(l_gda) + float(l_kt) + float(l_cor),
            clean_fraction=float(clean_fraction),
        )

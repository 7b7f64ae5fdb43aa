"""Cross-image region transfer and the losses trained on fused pairs.

A rectangular region sampled on one image is pasted into its partner,
carrying image content, (refined) labels, and supervision weights along.
Both swap directions are formed for every pair.  Supervision on fused
images is weighted cross-entropy plus soft Dice; a second term keeps the
two predictors consistent on the fused content, weighted the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import ce_pixelwise, dice_loss, sym_kl_pixelwise
from .validation import check_binary, check_image, check_mask, check_weights, same_shape


@dataclass
class RegionConfig:
    """Rectangle sampling policy for region transfer."""

    area_min: float = 0.1
    area_max: float = 0.4
    aspect_min: float = 0.5
    aspect_max: float = 2.0
    foreground_bias: bool = True

    def __post_init__(self):
        if not 0.0 < self.area_min <= self.area_max <= 1.0:
            raise ValueError(f"invalid area range [{self.area_min}, {self.area_max}]")
        if not 0.0 < self.aspect_min <= self.aspect_max:
            raise ValueError(f"invalid aspect range [{self.aspect_min}, {self.aspect_max}]")


@dataclass
class FusedPair:
    """Both transfer directions of one image pair."""

    x_1to2: np.ndarray
    x_2to1: np.ndarray
    y_1to2: np.ndarray
    y_2to1: np.ndarray
    w_1to2: np.ndarray
    w_2to1: np.ndarray
    mask_1: np.ndarray
    mask_2: np.ndarray


def sample_region_mask(labels, cfg, rng):
    """Random axis-aligned rectangle as a bool mask.

    Area (before border clipping) is drawn from the configured fraction
    range, aspect from the aspect range.  With foreground bias the
    rectangle centers on a random foreground pixel with probability equal
    to the foreground fraction, otherwise on a random background pixel.
    """
    y = check_binary(labels)
    h, w = y.shape
    lo = int(np.ceil(cfg.area_min * h * w))
    hi = int(np.floor(cfg.area_max * h * w))
    area = rng.uniform(cfg.area_min, cfg.area_max) * h * w
    aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max)
    rh = min(h, max(1, int(round(np.sqrt(area * aspect)))))
    rw = min(w, max(1, int(round(np.sqrt(area / aspect)))))
    # Rounding can push the product outside the requested range; nudge the
    # longer/shorter side back until it fits or the image bounds stop us.
    while rh * rw < lo and (rh < h or rw < w):
        if (rh <= rw and rh < h) or rw >= w:
            rh += 1
        else:
            rw += 1
    while rh * rw > hi and (rh > 1 or rw > 1):
        if (rh >= rw and rh > 1) or rw <= 1:
            rh -= 1
        else:
            rw -= 1
    fg = np.argwhere(y == 1)
    bg = np.argwhere(y == 0)
    if cfg.foreground_bias and fg.size and rng.uniform() < fg.shape[0] / y.size:
        pool = fg
    else:
        pool = bg if bg.size else fg
    ci, cj = pool[int(rng.integers(pool.shape[0]))]
    i0 = int(ci) - rh // 2
    j0 = int(cj) - rw // 2
    mask = np.zeros((h, w), dtype=bool)
    mask[max(0, i0) : min(h, i0 + rh), max(0, j0) : min(w, j0 + rw)] = True
    return mask


def paste(src, dst, mask):
    """dst outside the mask, src inside it; works for any trailing shape."""
    m = mask
    while m.ndim < src.ndim:
        m = m[..., None]
    return np.where(m, src, dst)


def fuse_pair(x1, x2, y1, y2, w1, w2, mask1, mask2):
    """Build both transfer directions for a pair of training images."""
    x1 = check_image(x1, "x1")
    x2 = check_image(x2, "x2")
    y1 = check_binary(y1, "y1")
    y2 = check_binary(y2, "y2")
    w1 = check_weights(w1, "w1")
    w2 = check_weights(w2, "w2")
    m1 = check_mask(mask1, "mask1")
    m2 = check_mask(mask2, "mask2")
    same_shape(("x1", x1), ("x2", x2), ("y1", y1), ("y2", y2), ("w1", w1), ("w2", w2),
               ("mask1", m1), ("mask2", m2))
    return FusedPair(
        x_1to2=paste(x1, x2, m1),
        x_2to1=paste(x2, x1, m2),
        y_1to2=paste(y1, y2, m1),
        y_2to1=paste(y2, y1, m2),
        w_1to2=paste(w1, w2, m1),
        w_2to1=paste(w2, w1, m2),
        mask_1=m1,
        mask_2=m2,
    )


def _directions(fused):
    return (
        (fused.y_1to2, fused.w_1to2),
        (fused.y_2to1, fused.w_2to1),
    )


def fused_supervision_loss(preds, preds_aug, fused):
    """Weighted CE plus Dice on both directions for both predictors.

    ``preds`` are the first predictor's probabilities on (x_1to2, x_2to1);
    ``preds_aug`` the second predictor's on the augmented counterparts.
    """
    total = 0.0
    for branch in (preds, preds_aug):
        for (y, w), p in zip(_directions(fused), branch):
            total += float((ce_pixelwise(p, y) * w).mean()) + dice_loss(p, y)
    return float(total)


def fused_consistency_loss(preds, preds_aug, fused):
    """Weighted symmetric KL between the two predictors per direction."""
    total = 0.0
    for (y, w), p, q in zip(_directions(fused), preds, preds_aug):
        total += float((sym_kl_pixelwise(p, q) * w).mean())
    return float(total)

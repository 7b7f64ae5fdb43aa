"""Structure-guided label refinement.

Two predictors vote through a random convex blend, the blend is averaged
over superpixels so that structurally coherent regions vote as one, and
the argmax of the pooled vote replaces the given labels on exactly the
pixels that small-loss selection rejected.  A per-pixel variant skips
the pooling for comparison runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import argmax_pixelwise
from .validation import check_labels, check_mask, check_probs, same_shape

POOLING_MODES = ("superpixel-mean", "per-pixel")


@dataclass
class RefineConfig:
    pooling: str = "superpixel-mean"

    def __post_init__(self):
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")


def fuse_predictions(p1, p2, alpha):
    """Convex blend alpha * p1 + (1 - alpha) * p2."""
    a = check_probs(p1, "p1")
    b = check_probs(p2, "p2")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: p1 {a.shape} vs p2 {b.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * a + (1.0 - alpha) * b


def superpixel_pool(probs, segments):
    """Replace each pixel's probabilities by its region mean."""
    p = check_probs(probs)
    s = check_labels(segments, name="segments")
    same_shape(("probs", p), ("segments", s))
    flat = s.ravel()
    n = int(flat.max()) + 1
    count = np.bincount(flat, minlength=n).astype(np.float64)
    pooled = np.empty_like(p)
    for c in range(p.shape[-1]):
        sums = np.bincount(flat, weights=p[..., c].ravel(), minlength=n)
        pooled[..., c] = (sums / count)[s]
    return pooled


def compose_labels(noisy, refined, clean):
    """Keep noisy labels on selected pixels, refined labels elsewhere."""
    y = check_labels(noisy, name="noisy")
    r = check_labels(refined, name="refined")
    m = check_mask(clean, "clean")
    same_shape(("noisy", y), ("refined", r), ("clean", m))
    return np.where(m, y, r)


def refine_labels(p1, p2, segments, noisy, clean, rng=None, cfg=None, alpha=None):
    """Full refinement chain; returns (labels, alpha).

    ``alpha`` is drawn uniformly from [0, 1] when not given explicitly.
    ``segments`` is only consulted in pooled mode and may be None for the
    per-pixel variant.
    """
    cfg = cfg or RefineConfig()
    if alpha is None:
        if rng is None:
            raise ValueError("need either an explicit alpha or an rng to draw one")
        alpha = float(rng.uniform(0.0, 1.0))
    blend = fuse_predictions(p1, p2, alpha)
    if cfg.pooling == "superpixel-mean":
        if segments is None:
            raise ValueError("pooled refinement requires a segment grid")
        blend = superpixel_pool(blend, segments)
    refined = argmax_pixelwise(blend)
    return compose_labels(noisy, refined, clean), alpha

"""Elementary pixelwise operations shared across the package."""

from __future__ import annotations

import numpy as np

# Probabilities are clamped to [PROB_FLOOR, 1] before any logarithm so that
# log terms stay finite; gradients through clamped entries are exactly zero.
PROB_FLOOR = 1e-7


def clamp_probs(p):
    """Clamp probabilities into [PROB_FLOOR, 1] for safe logarithms."""
    return np.clip(p, PROB_FLOOR, 1.0)


def softmax_pixelwise(logits):
    """Numerically stable softmax over the last axis of a logit grid."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, num_classes):
    """One-hot encode an integer label grid into a probability grid."""
    y = np.asarray(labels)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"label ids outside [0, {num_classes})")
    out = np.zeros(y.shape + (num_classes,), dtype=np.float64)
    np.put_along_axis(out, y[..., None].astype(np.int64), 1.0, axis=-1)
    return out


def argmax_pixelwise(probs):
    """Class of highest probability per pixel; ties go to the lowest id."""
    return np.argmax(probs, axis=-1).astype(np.int64)


def take_class_prob(probs, labels):
    """Per-pixel probability assigned to the labelled class."""
    idx = np.asarray(labels, dtype=np.int64)[..., None]
    return np.take_along_axis(np.asarray(probs), idx, axis=-1)[..., 0]

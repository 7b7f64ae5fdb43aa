from __future__ import annotations

import numpy as np
import pytest

from gsdnet.validation import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def random_labels(rng, h, w, num_classes=2):
    """Random label grid guaranteed to contain at least two classes."""
    y = rng.integers(0, num_classes, size=(h, w))
    if y.min() == y.max():
        y[h // 2, w // 2] = (y[0, 0] + 1) % num_classes
    return y.astype(np.int64)


def random_probs(rng, h, w, c=2):
    z = rng.standard_normal((h, w, c))
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def blob_mask(rng, h, w, radius=None):
    """A filled disk at a random interior center; always non-empty."""
    radius = radius or min(h, w) // 4
    ci = int(rng.integers(radius, h - radius))
    cj = int(rng.integers(radius, w - radius))
    ii, jj = np.mgrid[0:h, 0:w]
    return ((ii - ci) ** 2 + (jj - cj) ** 2 <= radius * radius).astype(np.int64)

"""Array conventions, input validation, and seeded randomness.

Every grid in this package is a dense numpy array in row-major order:

* image grids        float64, (H, W) or (H, W, C_in), values in [0, 1]
* label grids        integer, (H, W), class ids in [0, num_classes)
* logit grids        float64, (..., C), finite
* probability grids  float64, (..., C), each pixel on the simplex
* binary masks       bool, (H, W)
* weight grids       float64, (H, W), finite and >= 0

The helpers below canonicalize dtype and shape and raise ValueError with
a readable message otherwise.  All randomness flows through PCG64
generators built by :func:`make_rng`, so a run is fully determined by
its integer seed on every platform.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed, *tags):
    """Build a PCG64 generator from an integer seed and optional subtags.

    Distinct tag tuples give statistically independent streams, which lets
    one top-level seed drive data generation, noise draws, and training
    without coupling their sequences.
    """
    parts = [int(seed)] + [int(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(parts)))


def spawn_seed(seed, *tags):
    """Derive a child integer seed. Stable across platforms and sessions."""
    parts = [int(seed)] + [int(t) for t in tags]
    return int(np.random.SeedSequence(parts).generate_state(1, np.uint32)[0])


def check_image(x, name="image"):
    """Validate an image grid; returns it as float64 (H, W) or (H, W, C)."""
    x = np.asarray(x)
    if x.ndim not in (2, 3):
        raise ValueError(f"{name}: expected 2 or 3 dims, got shape {x.shape}")
    if x.ndim == 3 and x.shape[2] < 1:
        raise ValueError(f"{name}: empty channel axis in shape {x.shape}")
    x = x.astype(np.float64, copy=False)
    if not np.isfinite(x).all():
        raise ValueError(f"{name}: contains non-finite values")
    if x.size and (x.min() < -1e-9 or x.max() > 1.0 + 1e-9):
        raise ValueError(f"{name}: values outside [0, 1] (min {x.min()}, max {x.max()})")
    return x


def check_labels(y, num_classes=None, name="labels"):
    """Validate a label grid; returns it as int64 (H, W)."""
    y = np.asarray(y)
    if y.ndim != 2:
        raise ValueError(f"{name}: expected 2 dims, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.issubdtype(y.dtype, np.bool_):
            y = y.astype(np.int64)
        else:
            f = np.asarray(y, dtype=np.float64)
            if not np.all(f == np.round(f)):
                raise ValueError(f"{name}: non-integer values")
            y = f.astype(np.int64)
    y = y.astype(np.int64, copy=False)
    if y.size and y.min() < 0:
        raise ValueError(f"{name}: negative class id {y.min()}")
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise ValueError(f"{name}: class id {y.max()} >= num_classes {num_classes}")
    return y


def check_binary(y, name="labels"):
    """Validate a binary label grid (ids in {0, 1}); returns int64 (H, W)."""
    y = check_labels(y, num_classes=2, name=name)
    return y


def check_probs(p, name="probs", atol=1e-6):
    """Validate a probability grid; returns it as float64 (..., C)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim < 1 or p.shape[-1] < 2:
        raise ValueError(f"{name}: need a class axis of size >= 2, got shape {p.shape}")
    if not np.isfinite(p).all():
        raise ValueError(f"{name}: contains non-finite values")
    if p.size and (p.min() < -atol or p.max() > 1.0 + atol):
        raise ValueError(f"{name}: entries outside [0, 1]")
    s = p.sum(axis=-1)
    if p.size and np.abs(s - 1.0).max() > max(atol, 1e-6):
        raise ValueError(f"{name}: pixel sums deviate from 1 by {np.abs(s - 1.0).max():.3g}")
    return p


def check_mask(m, name="mask"):
    """Validate a binary mask; returns it as bool (H, W)."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"{name}: expected 2 dims, got shape {m.shape}")
    if m.dtype != np.bool_:
        u = np.unique(m)
        if not np.all(np.isin(u, (0, 1))):
            raise ValueError(f"{name}: values outside {{0, 1}}")
        m = m.astype(bool)
    return m


def check_weights(w, name="weights"):
    """Validate a weight grid; returns it as float64 (H, W)."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"{name}: expected 2 dims, got shape {w.shape}")
    if not np.isfinite(w).all():
        raise ValueError(f"{name}: contains non-finite values")
    if w.size and w.min() < 0:
        raise ValueError(f"{name}: negative weight {w.min()}")
    return w


def same_shape(*named):
    """Assert that all (name, array) pairs share the leading (H, W) shape."""
    base_name, base = named[0]
    for name, arr in named[1:]:
        if arr.shape[:2] != base.shape[:2]:
            raise ValueError(
                f"{name} shape {arr.shape[:2]} does not match {base_name} shape {base.shape[:2]}"
            )

"""Exact Euclidean distance transforms and boundary-distance weight maps.

The distance transform is the classic two-pass lower-envelope algorithm:
a column sweep reduces the 2-D problem to per-row 1-D transforms, and the
row pass minimizes over parabolas rooted at the column distances.  All
intermediate quantities are integers or exact ratios of small integers,
so squared distances come out bit-exact in float64.

Weight maps turn the distance to the label boundary into a supervision
weight that is clipped at a cap and decays linearly over training until
it is identically 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_labels, check_weights


def boundary_mask(labels, connectivity=4):
    """Pixels with at least one differing neighbor under the given connectivity."""
    y = check_labels(labels)
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    m = np.zeros(y.shape, dtype=bool)
    d = y[1:, :] != y[:-1, :]
    m[1:, :] |= d
    m[:-1, :] |= d
    d = y[:, 1:] != y[:, :-1]
    m[:, 1:] |= d
    m[:, :-1] |= d
    if connectivity == 8:
        d = y[1:, 1:] != y[:-1, :-1]
        m[1:, 1:] |= d
        m[:-1, :-1] |= d
        d = y[1:, :-1] != y[:-1, 1:]
        m[1:, :-1] |= d
        m[:-1, 1:] |= d
    return m


def extract_boundary(labels, connectivity=4):
    """Boundary pixel coordinates as an (M, 2) int64 array in raster order."""
    return np.argwhere(boundary_mask(labels, connectivity)).astype(np.int64)


def _envelope_row(f):
    """1-D squared distance transform: min_j' (j - j')^2 + f[j']."""
    n = f.shape[0]
    out = np.full(n, np.inf)
    sites = np.flatnonzero(np.isfinite(f))
    if sites.size == 0:
        return out
    v = np.zeros(n + 1, dtype=np.int64)
    z = np.full(n + 2, np.inf)
    k = 0
    v[0] = sites[0]
    z[0] = -np.inf
    for q in sites[1:]:
        fq = f[q] + q * q
        while True:
            p = v[k]
            s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for j in range(n):
        while z[k + 1] < j:
            k += 1
        p = v[k]
        out[j] = (j - p) * (j - p) + f[p]
    return out


def squared_distance_transform(features):
    """Exact squared Euclidean distance to the nearest True pixel.

    Returns float64 holding exact integers, or +inf where the feature set
    is empty in the whole grid.
    """
    feat = np.asarray(features)
    if feat.ndim != 2:
        raise ValueError(f"features: expected 2 dims, got shape {feat.shape}")
    feat = feat.astype(bool)
    h, w = feat.shape
    # Column sweep: vertical distance in rows to the nearest feature.
    d = np.empty((h, w))
    run = np.full(w, np.inf)
    for i in range(h):
        run += 1.0
        run[feat[i]] = 0.0
        d[i] = run
    run = np.full(w, np.inf)
    for i in range(h - 1, -1, -1):
        run += 1.0
        run[feat[i]] = 0.0
        np.minimum(d[i], run, out=d[i])
    d *= d
    # Row pass: lower envelope of parabolas rooted at the column distances.
    out = np.empty((h, w))
    for i in range(h):
        out[i] = _envelope_row(d[i])
    return out


def distance_to_boundary(labels, boundary=None, connectivity=4, empty_value=np.inf):
    """Euclidean distance from every pixel to the label boundary.

    ``boundary`` may be a precomputed (M, 2) coordinate array; otherwise it
    is extracted from ``labels``.  With no boundary pixels at all the map
    is filled with ``empty_value`` (callers clip it to their weight cap).
    """
    y = check_labels(labels)
    if boundary is None:
        mask = boundary_mask(y, connectivity)
    else:
        boundary = np.asarray(boundary, dtype=np.int64)
        if boundary.size and (boundary.ndim != 2 or boundary.shape[1] != 2):
            raise ValueError(f"boundary: expected (M, 2) coordinates, got {boundary.shape}")
        mask = np.zeros(y.shape, dtype=bool)
        if boundary.size:
            if boundary.min() < 0 or (boundary[:, 0] >= y.shape[0]).any() or (
                boundary[:, 1] >= y.shape[1]
            ).any():
                raise ValueError("boundary coordinates outside the grid")
            mask[boundary[:, 0], boundary[:, 1]] = True
    if not mask.any():
        return np.full(y.shape, float(empty_value))
    return np.sqrt(squared_distance_transform(mask))


@dataclass
class BoundaryWeightConfig:
    """Shape of the boundary-distance weighting and its decay schedule."""

    cap: float = 10.0
    max_epochs: int = 100
    connectivity: int = 4

    def __post_init__(self):
        if self.cap < 1:
            raise ValueError(f"cap must be >= 1, got {self.cap}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")


def schedule_weights(raw, epoch, cfg):
    """Clip raw boundary distances at the cap and decay them toward 1.

    At epoch 0 the map is min(raw, cap) floored at 1; the cap's worth of
    weight is removed linearly so that at epoch == max_epochs every pixel
    weighs exactly 1.
    """
    w = check_weights(np.minimum(np.asarray(raw, dtype=np.float64), cfg.cap), "raw distances")
    if epoch < 0 or epoch > cfg.max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.max_epochs}]")
    return np.maximum(w - (epoch / cfg.max_epochs) * cfg.cap, 1.0)


def weight_map(labels, epoch, cfg=None):
    """Distance-to-boundary weights for a label grid at a given epoch."""
    cfg = cfg or BoundaryWeightConfig()
    raw = distance_to_boundary(labels, connectivity=cfg.connectivity, empty_value=cfg.cap)
    return schedule_weights(raw, epoch, cfg)

"""Compact superpixel oversegmentation by local k-means in color-space.

Centers start on a uniform grid, get nudged off high-gradient pixels,
and then iterate assignment/update restricted to a window of twice the
grid step around each center.  The distance couples intensity (scaled to
[0, 100]) with spatial offset normalized by the grid step and multiplied
by the compactness.  Ties always resolve to the lowest center id, and a
final pass makes every region a single 4-connected component, so the
result is a deterministic function of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_image

_COLOR_SCALE = 100.0


@dataclass
class SlicConfig:
    n_segments: int | None = None  # None picks ceil(H * W / 64)
    compactness: float = 10.0
    max_iters: int = 10
    enforce_connectivity: bool = True

    def __post_init__(self):
        if self.n_segments is not None and self.n_segments < 1:
            raise ValueError(f"n_segments must be >= 1, got {self.n_segments}")
        if self.compactness <= 0:
            raise ValueError(f"compactness must be > 0, got {self.compactness}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


def default_n_segments(shape):
    """Default segment count: one region per 64 pixels, rounded up."""
    h, w = shape[:2]
    return int(np.ceil(h * w / 64.0))


def _half_up(x):
    return int(np.floor(x + 0.5))


def _gradient_magnitude(color):
    g = np.zeros(color.shape[:2])
    for c in range(color.shape[2]):
        plane = color[:, :, c]
        di = np.empty_like(plane)
        di[1:-1] = plane[2:] - plane[:-2]
        di[0] = plane[1] - plane[0]
        di[-1] = plane[-1] - plane[-2]
        dj = np.empty_like(plane)
        dj[:, 1:-1] = plane[:, 2:] - plane[:, :-2]
        dj[:, 0] = plane[:, 1] - plane[:, 0]
        dj[:, -1] = plane[:, -1] - plane[:, -2]
        g += di * di + dj * dj
    return g


def _init_centers(color, n_segments):
    """Evenly spread centers, each moved to the lowest-gradient pixel in a
    3x3 window (ties to the first pixel in raster order)."""
    h, w = color.shape[:2]
    step = np.sqrt(h * w / n_segments)
    rows = max(1, _half_up(h / step))
    cols = max(1, _half_up(w / step))
    grad = _gradient_magnitude(color)
    pos = []
    for gi in range(rows):
        ci = (gi + 0.5) * h / rows - 0.5
        for gj in range(cols):
            cj = (gj + 0.5) * w / cols - 0.5
            pi = min(max(_half_up(ci), 0), h - 1)
            pj = min(max(_half_up(cj), 0), w - 1)
            i0, i1 = max(0, pi - 1), min(h, pi + 2)
            j0, j1 = max(0, pj - 1), min(w, pj + 2)
            window = grad[i0:i1, j0:j1]
            k = int(np.argmin(window))
            pos.append((i0 + k // window.shape[1], j0 + k % window.shape[1]))
    pos = np.asarray(pos, dtype=np.float64)
    col = color[pos[:, 0].astype(int), pos[:, 1].astype(int)]
    return pos, col, step


def _assign(color, pos, col, step, compactness):
    h, w = color.shape[:2]
    ratio = (compactness / step) ** 2
    dist = np.full((h, w), np.inf)
    labels = np.full((h, w), -1, dtype=np.int64)
    reach = int(np.ceil(step))  # search window spans 2 * step per axis
    for k in range(pos.shape[0]):
        ci, cj = pos[k]
        i0, i1 = max(0, int(ci) - reach), min(h, int(ci) + reach + 1)
        j0, j1 = max(0, int(cj) - reach), min(w, int(cj) + reach + 1)
        if i0 >= i1 or j0 >= j1:
            continue
        dc = ((color[i0:i1, j0:j1] - col[k]) ** 2).sum(axis=-1)
        ii = np.arange(i0, i1)[:, None] - ci
        jj = np.arange(j0, j1)[None, :] - cj
        d = dc + (ii * ii + jj * jj) * ratio
        win = d < dist[i0:i1, j0:j1]  # strict: equal distance keeps the lower id
        dist[i0:i1, j0:j1][win] = d[win]
        labels[i0:i1, j0:j1][win] = k
    if (labels < 0).any():
        # Pixels outside every search window fall back to the spatially
        # nearest center, again with ties to the lowest id.
        miss = np.argwhere(labels < 0)
        d = ((miss[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
        labels[miss[:, 0], miss[:, 1]] = np.argmin(d, axis=1)
    return labels


def _update(color, labels, n_centers, pos, col):
    h, w = color.shape[:2]
    flat = labels.ravel()
    count = np.bincount(flat, minlength=n_centers).astype(np.float64)
    ii, jj = np.mgrid[0:h, 0:w]
    new_pos = pos.copy()
    new_col = col.copy()
    occupied = count > 0
    si = np.bincount(flat, weights=ii.ravel(), minlength=n_centers)
    sj = np.bincount(flat, weights=jj.ravel(), minlength=n_centers)
    new_pos[occupied, 0] = si[occupied] / count[occupied]
    new_pos[occupied, 1] = sj[occupied] / count[occupied]
    for c in range(color.shape[2]):
        sc = np.bincount(flat, weights=color[:, :, c].ravel(), minlength=n_centers)
        new_col[occupied, c] = sc[occupied] / count[occupied]
    return new_pos, new_col


def _connect(labels, n_centers):
    """Keep the largest 4-connected component of every region and absorb the
    remaining fragments into adjacent regions by breadth-first waves."""
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    comp_label = []
    comp_size = []
    nxt = 0
    for i in range(h):
        for j in range(w):
            if comp[i, j] >= 0:
                continue
            lab = labels[i, j]
            stack = [(i, j)]
            comp[i, j] = nxt
            size = 0
            while stack:
                pi, pj = stack.pop()
                size += 1
                for ni, nj in ((pi - 1, pj), (pi + 1, pj), (pi, pj - 1), (pi, pj + 1)):
                    if 0 <= ni < h and 0 <= nj < w and comp[ni, nj] < 0 and labels[ni, nj] == lab:
                        comp[ni, nj] = nxt
                        stack.append((ni, nj))
            comp_label.append(lab)
            comp_size.append(size)
            nxt += 1
    comp_label = np.asarray(comp_label)
    comp_size = np.asarray(comp_size)
    # Largest component per region id wins; earlier discovery breaks ties.
    keep = np.zeros(nxt, dtype=bool)
    for k in range(n_centers):
        members = np.flatnonzero(comp_label == k)
        if members.size:
            keep[members[np.argmax(comp_size[members])]] = True
    out = np.where(keep[comp], labels, -1)
    while (out < 0).any():
        settled = out >= 0
        cand = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
        for src, dst in (
            (np.s_[1:, :], np.s_[:-1, :]),
            (np.s_[:-1, :], np.s_[1:, :]),
            (np.s_[:, 1:], np.s_[:, :-1]),
            (np.s_[:, :-1], np.s_[:, 1:]),
        ):
            shifted = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
            shifted[dst] = np.where(settled[src], out[src], np.iinfo(np.int64).max)
            np.minimum(cand, shifted, out=cand)
        wave = (out < 0) & (cand < np.iinfo(np.int64).max)
        if not wave.any():
            break  # isolated island with no settled neighbor anywhere
        out[wave] = cand[wave]
    return out


def slic(image, cfg=None):
    """Segment an image into superpixels; returns an int64 label grid."""
    cfg = cfg or SlicConfig()
    x = check_image(image)
    if x.ndim == 2:
        x = x[:, :, None]
    h, w = x.shape[:2]
    n = cfg.n_segments if cfg.n_segments is not None else default_n_segments((h, w))
    if n > h * w:
        raise ValueError(f"n_segments {n} exceeds pixel count {h * w}")
    color = x * _COLOR_SCALE
    pos, col, step = _init_centers(color, n)
    labels = None
    for _ in range(cfg.max_iters):
        labels = _assign(color, pos, col, step, cfg.compactness)
        pos, col = _update(color, labels, pos.shape[0], pos, col)
    if cfg.enforce_connectivity:
        labels = _connect(labels, pos.shape[0])
    return labels


def region_sizes(segments):
    """Pixel count per region id (length = max id + 1)."""
    s = np.asarray(segments)
    return np.bincount(s.ravel(), minlength=int(s.max()) + 1 if s.size else 0)
